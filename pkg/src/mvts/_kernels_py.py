"""Pure numpy implementation of the inner loops in ``_kernels.pyx``.

Selected automatically when the compiled module is missing, or forced with
``MVTS_PURE_PYTHON=1``. Bin edges and midpoints use the same operation
order as the compiled code, so both backends assign identical bins.
"""
import numpy as np

BACKEND = "numpy"


def bin_indices(values, h, ms):
    v = np.asarray(values, dtype=np.float64)
    j = np.floor(h * (v + ms) / (2.0 * ms))
    j = np.clip(j, 0, h - 1).astype(np.int64)
    j = np.where(v >= ms, h - 1, j)
    j = np.where(v <= -ms, 0, j)
    return j


def encode(values, h, ms):
    v = np.asarray(values, dtype=np.float64)
    c, t = v.shape
    out = np.zeros((c, h, t), dtype=np.uint8)
    idx = bin_indices(v, h, ms)
    ii, kk = np.meshgrid(np.arange(c), np.arange(t), indexing="ij")
    out[ii, idx, kk] = 1
    return out


def column_index(bits):
    b = np.asarray(bits, dtype=np.uint8)
    ok = (b <= 1).all(axis=1) & (b.sum(axis=1, dtype=np.int64) == 1)
    idx = b.argmax(axis=1).astype(np.int64)
    return np.where(ok, idx, -1)


def argmax_columns(probs):
    # np.argmax returns the first maximal index, which is the tie rule we want
    return np.asarray(probs, dtype=np.float64).argmax(axis=1).astype(np.int64)


def midpoints(idx, h, ms):
    j = np.asarray(idx, dtype=np.int64)
    return ms * (2 * j + 1 - h).astype(np.float64) / h


def roundtrip_abs_error(values, h, ms):
    v = np.asarray(values, dtype=np.float64)
    return np.abs(midpoints(bin_indices(v, h, ms), h, ms) - v)


def w1_columns(p, q):
    diff = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    cdf = np.cumsum(diff, axis=1)[:, :-1, :]
    return np.abs(cdf).sum(axis=1)


def emd_loss_grad(p, q):
    diff = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    cdf = np.cumsum(diff, axis=1)[:, :-1, :]
    per_col = np.abs(cdf).sum(axis=1)
    sgn = np.sign(cdf)
    # suffix sums: grad[l] = sum_{m >= l} sign(C_m); the last bin gets 0
    suffix = np.cumsum(sgn[:, ::-1, :], axis=1)[:, ::-1, :]
    grad = np.zeros_like(diff)
    grad[:, :-1, :] = suffix
    return per_col, grad
