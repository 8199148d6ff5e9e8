"""Forecasting in vision space: encode windows, predict soft columns, decode.

The predictor maps a ``(h, I)`` one-hot image of the lookback window to a
``(h, O)`` grid of per-column probabilities. Training minimizes the mean
column EMD to the encoded target; at test time each column is hardened to
its argmax bin and decoded back to a value.

Any object with ``horizon``, ``theta`` and ``forward_batch`` can stand in
for the reference network (see :class:`Predictor`).
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from . import kernels
from .codec import BinaryVisionTensor, CodecParams, NumericSeries, SoftVisionTensor
from .data import (DEFAULT_SPLIT, Dataset, WindowBatch, WindowPair, WindowSpec, make_windows,
                   normalize_window, stack_windows)
from .metric import column_distances, emd_loss_and_grad

CHECKPOINT_MAGIC = b"MVCK"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<4sH32s")


class ForecastError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} in epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class Predictor(Protocol):
    horizon: int

    @property
    def theta(self) -> np.ndarray: ...

    def forward_batch(self, vx: np.ndarray) -> np.ndarray:
        """``(B, h, I)`` one-hot images to ``(B, h, O)`` column distributions."""
        ...


def forward(predictor: Predictor, vx: BinaryVisionTensor) -> SoftVisionTensor:
    """Apply a predictor to every channel of a tensor independently."""
    if vx.t == 0:
        raise ForecastError("input tensor has no time steps")
    return SoftVisionTensor(predictor.forward_batch(vx.bits.astype(np.float64)))


class PersistencePredictor:
    """Repeat the last observed column for the whole horizon."""

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ForecastError(f"horizon must be >= 1, got {horizon}")
        self.horizon = int(horizon)

    @property
    def theta(self) -> np.ndarray:
        return np.empty(0)

    def forward_batch(self, vx):
        vx = np.asarray(vx, dtype=np.float64)
        if vx.shape[2] == 0:
            raise ForecastError("input has no time steps")
        return np.repeat(vx[:, :, -1:], self.horizon, axis=2)


def persistence_predict(vx: BinaryVisionTensor, horizon: int) -> SoftVisionTensor:
    return forward(PersistencePredictor(horizon), vx)


@dataclass(frozen=True)
class ReferenceNetConfig:
    h: int
    lookback: int
    horizon: int
    hidden: int = 128
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        for name in ("h", "lookback", "horizon", "hidden", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ForecastError(f"{name} must be positive")
        if self.lr < 0 or self.init_scale <= 0:
            raise ForecastError("lr must be >= 0 and init_scale > 0")

    @property
    def n_in(self) -> int:
        return self.h * self.lookback

    @property
    def n_out(self) -> int:
        return self.h * self.horizon

    @property
    def n_params(self) -> int:
        return self.n_in * self.hidden + self.hidden + self.hidden * self.n_out + self.n_out


def _softmax_columns(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ReferenceNet:
    """Two affine layers with a rectifier between them and a softmax per output column.

    The ``(h, I)`` input image is flattened, mapped to ``hidden`` units, then
    to ``h * O`` logits which are reshaped to ``(h, O)`` and normalized over
    the bin axis.
    """

    def __init__(self, cfg: ReferenceNetConfig, theta: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.horizon = cfg.horizon
        if theta is None:
            theta = init_theta(cfg)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (cfg.n_params,):
            raise ForecastError(f"theta has {theta.size} entries, config needs {cfg.n_params}")
        self._theta = theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._theta.shape:
            raise ForecastError("theta shape mismatch")
        self._theta = value

    def _unpack(self, theta):
        cfg = self.cfg
        i = 0
        parts = []
        for shape in ((cfg.n_in, cfg.hidden), (cfg.hidden,), (cfg.hidden, cfg.n_out), (cfg.n_out,)):
            n = math.prod(shape)
            parts.append(theta[i:i + n].reshape(shape))
            i += n
        return parts

    def _check_input(self, vx):
        vx = np.asarray(vx, dtype=np.float64)
        if vx.ndim != 3 or vx.shape[1:] != (self.cfg.h, self.cfg.lookback):
            raise ForecastError(f"expected input (B, {self.cfg.h}, {self.cfg.lookback}), got {vx.shape}")
        return vx

    def forward_batch(self, vx, theta=None):
        probs, _ = self._forward(self._check_input(vx), self._theta if theta is None else theta)
        return probs

    def _forward(self, vx, theta):
        w1, b1, w2, b2 = self._unpack(theta)
        x = vx.reshape(vx.shape[0], -1)
        z1 = x @ w1 + b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ w2 + b2
        probs = _softmax_columns(z2.reshape(-1, self.cfg.h, self.cfg.horizon))
        return probs, (x, z1, a1, probs)

    def loss_and_grad(self, vx, vy, theta=None):
        """Mean column EMD between predictions and the one-hot targets ``vy``, and its θ-gradient."""
        theta = self._theta if theta is None else theta
        w1, b1, w2, b2 = self._unpack(theta)
        probs, (x, z1, a1, _) = self._forward(self._check_input(vx), theta)
        rep = emd_loss_and_grad(probs, np.asarray(vy, dtype=np.float64))
        g = rep.gradient
        # softmax Jacobian applied column-wise
        dz2 = probs * (g - (probs * g).sum(axis=1, keepdims=True))
        dz2 = dz2.reshape(dz2.shape[0], -1)
        dw2 = a1.T @ dz2
        db2 = dz2.sum(axis=0)
        dz1 = (dz2 @ w2.T) * (z1 > 0)
        dw1 = x.T @ dz1
        db1 = dz1.sum(axis=0)
        grad = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
        return rep.loss, grad


def init_theta(cfg: ReferenceNetConfig) -> np.ndarray:
    """Uniform in ``[-s, s]`` with ``s = init_scale / sqrt(fan_in)``; biases included."""
    rng = np.random.default_rng(cfg.seed)
    s1 = cfg.init_scale / math.sqrt(cfg.n_in)
    s2 = cfg.init_scale / math.sqrt(cfg.hidden)
    return np.concatenate([
        rng.uniform(-s1, s1, cfg.n_in * cfg.hidden),
        rng.uniform(-s1, s1, cfg.hidden),
        rng.uniform(-s2, s2, cfg.hidden * cfg.n_out),
        rng.uniform(-s2, s2, cfg.n_out),
    ])


def reference_forward(theta, vx: BinaryVisionTensor, cfg: ReferenceNetConfig) -> SoftVisionTensor:
    return forward(ReferenceNet(cfg, theta), vx)


def _per_channel(values: np.ndarray) -> np.ndarray:
    """``(n, c, L)`` window values to ``(n * c, L)`` single-channel rows."""
    return values.reshape(-1, values.shape[-1])


def encode_rows(rows: np.ndarray, params: CodecParams) -> np.ndarray:
    """``(N, L)`` values to ``(N, h, L)`` one-hot images (uint8)."""
    return kernels.encode(rows, params.h, params.ms)


@dataclass
class TrainResult:
    theta: np.ndarray
    loss_curve: list


def _as_batch(data) -> WindowBatch:
    return data if isinstance(data, WindowBatch) else stack_windows(data)


def train(data: Union[WindowBatch, Iterable[WindowPair]], cfg: ReferenceNetConfig,
          params: CodecParams, net: Optional[ReferenceNet] = None) -> TrainResult:
    """Mini-batch gradient descent on the mean column EMD.

    ``loss_curve[e]`` is the sample-weighted mean batch loss seen during
    epoch ``e``. Deterministic given ``cfg.seed``.
    """
    batch = _as_batch(data)
    if len(batch) == 0:
        raise ForecastError("empty training set")
    if params.h != cfg.h:
        raise ForecastError(f"codec h={params.h} does not match network h={cfg.h}")
    vx = encode_rows(_per_channel(batch.x), params).astype(np.float64)
    vy = encode_rows(_per_channel(batch.y), params).astype(np.float64)
    net = net or ReferenceNet(cfg)
    theta = net.theta.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    n = vx.shape[0]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        weighted = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = net.loss_and_grad(vx[idx], vy[idx], theta)
            if not math.isfinite(loss) or not np.isfinite(grad).all():
                raise TrainingDiverged(epoch, loss)
            weighted.append(loss * len(idx))
            if cfg.lr:
                theta -= cfg.lr * grad
        curve.append(math.fsum(weighted) / n)
    net.theta = theta
    return TrainResult(theta, curve)


def decode_rows(probs: np.ndarray, params: CodecParams, mode: str = "hard") -> np.ndarray:
    """``(N, h, O)`` soft columns to ``(N, O)`` values, by argmax bin or by expectation."""
    if mode == "hard":
        return kernels.midpoints(kernels.argmax_columns(probs), params.h, params.ms)
    if mode == "expected":
        return np.einsum("njk,j->nk", probs, params.midpoints())
    raise ForecastError(f"unknown decode mode {mode!r}")


def forecast_normalized(predictor: Predictor, x: np.ndarray, params: CodecParams,
                        mode: str = "hard") -> np.ndarray:
    """Predict normalized targets ``(n, c, O)`` from normalized inputs ``(n, c, I)``."""
    n, c, _ = x.shape
    vx = encode_rows(_per_channel(x), params)
    probs = predictor.forward_batch(vx.astype(np.float64))
    return decode_rows(probs, params, mode).reshape(n, c, -1)


@dataclass(frozen=True)
class PipelineContext:
    """Global scaling applied before windowing (``None`` fields: raw units)."""

    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    @classmethod
    def from_dataset(cls, d: Dataset) -> "PipelineContext":
        return cls(np.asarray(d.mean), np.where(d.std == 0, 1.0, d.std))


def predict(predictor: Predictor, sx, params: CodecParams, ctx: Optional[PipelineContext] = None,
            lookback: Optional[int] = None, mode: str = "hard") -> NumericSeries:
    """Forecast the next ``horizon`` steps of a raw ``(c, I)`` window.

    Global scaling (if ``ctx`` has it), then in-window normalization,
    encode, predict, harden, decode, and both scalings undone.
    """
    names = sx.channel_names if isinstance(sx, NumericSeries) else None
    sx = np.asarray(sx.values if isinstance(sx, NumericSeries) else sx, dtype=np.float64)
    if sx.ndim == 1:
        sx = sx[None, :]
    expected = lookback or getattr(getattr(predictor, "cfg", None), "lookback", None)
    if expected is not None and sx.shape[1] != expected:
        raise ForecastError(f"window has {sx.shape[1]} steps, predictor expects {expected}")
    if sx.shape[1] == 0:
        raise ForecastError("empty window")
    z = sx
    if ctx is not None and ctx.mean is not None:
        z = (sx - ctx.mean[:, None]) / ctx.std[:, None]
    xn, _, mean, std, _ = normalize_window(z, z[:, :0])
    yn = forecast_normalized(predictor, xn[None], params, mode)[0]
    out = yn * std[:, None] + mean[:, None]
    if ctx is not None and ctx.mean is not None:
        out = out * ctx.std[:, None] + ctx.mean[:, None]
    return NumericSeries(out, names)


@dataclass
class EvalReport:
    mse: float
    mae: float
    per_horizon_mse: np.ndarray
    per_horizon_mae: np.ndarray
    count: int
    space: str = "S"
    label: str = ""

    def rows(self):
        yield (self.label, "all", self.mse, self.mae, self.count)
        for k, (a, b) in enumerate(zip(self.per_horizon_mse, self.per_horizon_mae)):
            yield (self.label, str(k), float(a), float(b), self.count)


def evaluate(predictions, targets, space: str = "S", label: str = "") -> EvalReport:
    """MSE and MAE over all windows, channels and horizon steps.

    ``space="S"`` takes value arrays ``(n, c, O)``. ``space="V"`` takes
    tensors ``(n, c, h, O)`` and uses each column's EMD in bin units as the
    error, so for hard columns MAE is the mean bin offset.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ForecastError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ForecastError("nothing to evaluate")
    if space == "S":
        if p.ndim == 2:
            p, t = p[None], t[None]
        err = np.abs(p - t)
    elif space == "V":
        if p.ndim == 3:
            p, t = p[None], t[None]
        n, c, h, o = p.shape
        err = column_distances(p.reshape(n * c, h, o), t.reshape(n * c, h, o)).reshape(n, c, o)
    else:
        raise ForecastError(f"unknown space {space!r}")
    err = err.reshape(-1, err.shape[-1])
    ph_mae = err.mean(axis=0)
    ph_mse = (err ** 2).mean(axis=0)
    return EvalReport(float(ph_mse.mean()), float(ph_mae.mean()), ph_mse, ph_mae,
                      int(p.shape[0]), space, label)


@dataclass
class ForecastComparison:
    model: EvalReport
    persistence: EvalReport
    floor: EvalReport
    floored_windows: int = 0

    def reports(self):
        return (self.model, self.persistence, self.floor)


def compare_on_batch(predictor: Predictor, batch: WindowBatch, params: CodecParams,
                     mode: str = "hard") -> ForecastComparison:
    """Model, persistence and codec-floor errors on a window batch.

    All errors are measured after undoing in-window normalization, i.e. in
    whatever space the windows were cut from.
    """
    target = batch.denormalize(batch.y)
    model = batch.denormalize(forecast_normalized(predictor, batch.x, params, mode))
    pers = batch.denormalize(forecast_normalized(PersistencePredictor(batch.y.shape[2]), batch.x, params))
    n, c, o = batch.y.shape
    rt = kernels.midpoints(kernels.bin_indices(batch.y, params.h, params.ms), params.h, params.ms)
    floor = batch.denormalize(rt.reshape(n, c, o))
    return ForecastComparison(
        evaluate(model, target, label="model"),
        evaluate(pers, target, label="persistence"),
        evaluate(floor, target, label="quantization_floor"),
        int(batch.floored.any(axis=1).sum()),
    )


def sweep(dataset: Dataset, spec: WindowSpec, ms_values: Sequence[float], h_values: Sequence[int],
          predictor: str = "codec", cfg: Optional[ReferenceNetConfig] = None, split="test",
          channel_independent: bool = True, ratios=DEFAULT_SPLIT, zscore: bool = True):
    """Test-split MAE for every ``(ms, h)`` grid point with a fixed predictor choice.

    ``predictor`` is ``"codec"`` (decode of the encoded target, the
    irreducible error), ``"persistence"``, or ``"reference"`` (a network
    trained per grid point from ``cfg``). Returns ``[(ms, h, mae), ...]``
    in grid order, ms-major.
    """
    test = stack_windows(make_windows(dataset, spec, split, channel_independent, ratios, zscore))
    target = test.denormalize(test.y)
    train_batch = None
    rows = []
    for ms in ms_values:
        for h in h_values:
            params = CodecParams(int(h), float(ms))
            if predictor == "codec":
                rt = kernels.midpoints(kernels.bin_indices(test.y, params.h, params.ms), params.h, params.ms)
                pred = test.denormalize(rt)
            elif predictor == "persistence":
                pred = test.denormalize(forecast_normalized(PersistencePredictor(spec.horizon), test.x, params))
            elif predictor == "reference":
                if cfg is None:
                    raise ForecastError("reference sweep needs a network config")
                if train_batch is None:
                    train_batch = stack_windows(make_windows(dataset, spec, "train", channel_independent, ratios, zscore))
                point_cfg = ReferenceNetConfig(**{**asdict(cfg), "h": params.h})
                res = train(train_batch, point_cfg, params)
                net = ReferenceNet(point_cfg, res.theta)
                pred = test.denormalize(forecast_normalized(net, test.x, params))
            else:
                raise ForecastError(f"unknown predictor {predictor!r}")
            rows.append((float(ms), int(h), evaluate(pred, target).mae))
    return rows


def config_digest(obj) -> bytes:
    """SHA-256 of the canonical JSON form of ``obj``."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).digest()


def save_checkpoint(path, theta, digest: bytes) -> None:
    if len(digest) != 32:
        raise ForecastError("config digest must be 32 bytes")
    theta = np.ascontiguousarray(theta, dtype="<f8")
    Path(path).write_bytes(_CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, digest) + theta.tobytes())


def load_checkpoint(path):
    """Return ``(theta, digest)``."""
    data = Path(path).read_bytes()
    if len(data) < _CK_HEADER.size:
        raise ForecastError("truncated checkpoint header")
    magic, version, digest = _CK_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ForecastError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ForecastError(f"unsupported checkpoint version {version}")
    body = data[_CK_HEADER.size:]
    if len(body) % 8:
        raise ForecastError("checkpoint payload is not a whole number of float64 values")
    return np.frombuffer(body, dtype="<f8").astype(np.float64), digest
