import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvts.codec import (HEADER_SIZE, BinaryVisionTensor, CodecError, CodecParams, NumericSeries,
                        SoftVisionTensor, bin_index, decode, decode_expected, deserialize, encode,
                        harden, parse_bitmap, render_bitmap, serialize)

from oracles import bin_midpoint

P10 = CodecParams(h=10, ms=1.0)


def onehot(h, bins):
    """Single-channel tensor with 1-based ``bins`` as columns."""
    return BinaryVisionTensor.from_indices([[b - 1 for b in bins]], h)


class TestParams:
    @pytest.mark.parametrize("h, ms", [(1, 1.0), (0, 1.0), (10, 0.0), (10, -1.0), (10, float("nan")), (2.5, 1.0)])
    def test_rejects_invalid(self, h, ms):
        with pytest.raises(CodecError):
            CodecParams(h, ms)


class TestBinIndex:
    def test_saturates_high(self):
        assert bin_index(1.7, P10) == 10

    def test_two_bins_upper_half(self):
        assert bin_index(0.5, CodecParams(2, 1.0)) == 2

    def test_zero_lands_on_boundary_goes_up(self):
        assert bin_index(0.0, P10) == 6

    @pytest.mark.parametrize("s, j", [(-1.0, 1), (-5.0, 1), (1.0, 8), (-0.8, 1), (-0.75, 2), (0.25, 6), (0.99, 8)])
    def test_edges_and_saturation(self, s, j):
        # h=8, ms=1 puts every bin edge on a binary fraction, so edges are exact
        assert bin_index(s, CodecParams(8, 1.0)) == j

    def test_rejects_nan(self):
        with pytest.raises(CodecError):
            bin_index(float("nan"), P10)

    @given(st.floats(-100, 100), st.floats(-100, 100), st.integers(2, 500), st.floats(0.05, 20))
    def test_monotone(self, a, b, h, ms):
        p = CodecParams(h, ms)
        lo, hi = min(a, b), max(a, b)
        assert bin_index(lo, p) <= bin_index(hi, p)


class TestEncodeDecode:
    def test_constant_zero_series(self):
        t = encode(NumericSeries([[0.0, 0.0, 0.0]]), P10)
        assert t.shape == (1, 10, 3)
        assert (t.indices() == 5).all()

    def test_two_bins(self):
        t = encode(NumericSeries([[-3.0, -0.2, 0.0, 0.4, 7.0]]), CodecParams(2, 1.0))
        assert t.indices().tolist() == [[0, 0, 1, 1, 1]]

    def test_huge_value_saturates(self):
        t = encode(NumericSeries([[1e6]]), CodecParams(200, 2.79))
        assert t.indices().tolist() == [[199]]

    def test_rejects_non_finite(self):
        with pytest.raises(CodecError):
            encode(NumericSeries([[0.0, np.inf]]), P10)
        with pytest.raises(CodecError):
            NumericSeries([[np.nan]])

    @pytest.mark.parametrize("h, j, expected", [(2, 2, 0.5), (10, 6, 0.1), (10, 1, -0.9)])
    def test_decode_midpoints(self, h, j, expected):
        v = decode(onehot(h, [j]), CodecParams(h, 1.0)).values[0, 0]
        assert v == pytest.approx(expected, abs=1e-15)
        assert v == pytest.approx(bin_midpoint(j, h, 1.0), abs=1e-15)

    def test_decode_rejects_h_mismatch(self):
        with pytest.raises(CodecError):
            decode(onehot(10, [1]), CodecParams(12, 1.0))

    def test_tensor_rejects_broken_columns(self):
        bits = np.zeros((1, 3, 2), dtype=np.uint8)
        bits[0, 0, 0] = 1
        with pytest.raises(CodecError, match="not one-hot"):
            BinaryVisionTensor(bits)
        bits[0, :, 1] = 1
        with pytest.raises(CodecError):
            BinaryVisionTensor(bits)
        with pytest.raises(CodecError):
            BinaryVisionTensor(np.full((1, 2, 1), 0.5))

    def test_channel_names_survive(self):
        s = NumericSeries([[0.1], [0.2]], ["a", "b"])
        out = decode(encode(s, P10), P10, s.channel_names)
        assert out.channel_names == ("a", "b")

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.integers(2, 400), st.floats(0.1, 10))
    @settings(max_examples=150)
    def test_one_hot_law_and_error_bound(self, vals, h, ms):
        p = CodecParams(h, ms)
        s = np.array([vals])
        t = encode(NumericSeries(s), p)
        assert (t.bits.sum(axis=1) == 1).all()
        back = decode(t, p).values
        inside = np.abs(s) < ms
        # a value within an ulp of a bin edge may round into the neighbouring bin
        assert (np.abs(back - s)[inside] <= ms / h * (1 + 1e-9)).all()
        assert (back[s >= ms] == ms * (h - 1) / h).all()
        assert (back[s <= -ms] == -ms * (h - 1) / h).all()

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=30), st.integers(2, 100), st.floats(0.1, 5))
    def test_decode_encode_is_idempotent(self, vals, h, ms):
        p = CodecParams(h, ms)
        once = decode(encode(NumericSeries([vals]), p), p)
        twice = decode(encode(once, p), p)
        assert once == twice


class TestHarden:
    def test_unique_argmax(self):
        soft = SoftVisionTensor(np.array([[[0.1], [0.7], [0.2]]]))
        assert harden(soft).indices().tolist() == [[1]]

    def test_tie_goes_low(self):
        soft = SoftVisionTensor(np.array([[[0.5], [0.5]]]))
        assert harden(soft).indices().tolist() == [[0]]

    def test_idempotent_on_hard(self):
        t = encode(NumericSeries(np.linspace(-2, 2, 25)[None]), P10)
        assert harden(t.as_soft()) == t

    def test_soft_tensor_validates(self):
        with pytest.raises(CodecError):
            SoftVisionTensor(np.array([[[0.6], [0.6]]]))
        with pytest.raises(CodecError):
            SoftVisionTensor(np.array([[[1.5], [-0.5]]]))

    def test_expected_decode(self):
        soft = SoftVisionTensor(np.array([[[0.5], [0.5]]]))
        assert decode_expected(soft, CodecParams(2, 1.0)).values[0, 0] == pytest.approx(0.0)


class TestSerialization:
    def test_roundtrip(self, rng):
        t = encode(NumericSeries(rng.normal(size=(3, 17))), CodecParams(23, 1.5))
        assert deserialize(serialize(t)) == t

    def test_byte_layout(self):
        t = BinaryVisionTensor(np.array([[[1], [0]]], dtype=np.uint8))
        blob = serialize(t)
        # magic(4) + version u16 + flags u16 + c, h, t as u32
        assert HEADER_SIZE == 20
        assert len(blob) == 20 + 2
        assert blob == b"MVTS" + b"\x01\x00" + b"\x00\x00" + b"\x01\x00\x00\x00" + b"\x02\x00\x00\x00" + b"\x01\x00\x00\x00" + b"\x01\x00"

    def test_payload_order_channel_bin_time(self):
        t = BinaryVisionTensor.from_indices([[0, 1], [1, 0]], 2)
        payload = serialize(t)[HEADER_SIZE:]
        assert list(payload) == [1, 0, 0, 1, 0, 1, 1, 0]

    @pytest.mark.parametrize("mutate, msg", [
        (lambda b: b"XVTS" + b[4:], "magic"),
        (lambda b: b[:-1], "payload"),
        (lambda b: b[:10], "truncated"),
        (lambda b: b[:4] + b"\x02\x00" + b[6:], "version"),
        (lambda b: b[:-1] + b"\x02", "0x00 or 0x01"),
    ])
    def test_rejects_corruption(self, mutate, msg):
        blob = serialize(encode(NumericSeries([[0.0, 0.3]]), P10))
        with pytest.raises(CodecError, match=msg):
            deserialize(mutate(blob))

    def test_rejects_one_hot_violation(self):
        blob = bytearray(serialize(BinaryVisionTensor(np.array([[[1], [0]]], dtype=np.uint8))))
        blob[-1] = 1
        with pytest.raises(CodecError, match="not one-hot"):
            deserialize(bytes(blob))


class TestBitmap:
    def test_orientation(self):
        text = render_bitmap(onehot(2, [1, 2]))
        lines = text.strip().split("\n")
        assert lines == ["P1", "2 2", "0 1", "1 0"]

    def test_saturated_high_is_top_row(self):
        t = encode(NumericSeries([[9.0] * 5]), P10)
        img = parse_bitmap(render_bitmap(t, comment="x"))
        assert img[0].tolist() == [1] * 5
        assert img[1:].sum() == 0

    def test_staircase_has_one_pixel_per_column(self):
        s = np.sin(np.linspace(0, 2 * np.pi, 40))
        img = parse_bitmap(render_bitmap(encode(NumericSeries(s[None]), P10)))
        assert img.shape == (10, 40)
        assert (img.sum(axis=0) == 1).all()

    def test_rejects_empty_and_bad_channel(self):
        empty = BinaryVisionTensor(np.zeros((1, 4, 0), dtype=np.uint8))
        with pytest.raises(CodecError):
            render_bitmap(empty)
        with pytest.raises(CodecError):
            render_bitmap(onehot(2, [1]), channel=1)
