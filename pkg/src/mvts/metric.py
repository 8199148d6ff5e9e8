"""Earth mover's distance between vision tensors, as a metric and as a loss.

Each ``(channel, step)`` column is a distribution over ``h`` ordered bins.
With an L1 ground cost on the bin index the optimal transport cost has the
closed form ``sum_m |CDF_p(m) - CDF_q(m)|`` for ``m = 1 .. h-1``; the
tensor distance sums that over all columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .codec import BinaryVisionTensor, CodecParams, SoftVisionTensor

Tensor = Union[BinaryVisionTensor, SoftVisionTensor, np.ndarray]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LossReport:
    loss: float
    gradient: np.ndarray


def _as_array(x: Tensor) -> np.ndarray:
    if isinstance(x, BinaryVisionTensor):
        return x.bits.astype(np.float64)
    if isinstance(x, SoftVisionTensor):
        return x.probs
    return np.asarray(x, dtype=np.float64)


def _check_column(p: np.ndarray, name: str) -> None:
    if p.ndim != 1:
        raise MetricError(f"{name} must be 1-D, got shape {p.shape}")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise MetricError(f"{name} is not a probability distribution")


def w1_column(p, q, scale: float = 1.0) -> float:
    """1-Wasserstein distance between two column distributions.

    Parameters
    ----------
    p, q : array_like, shape (h,)
        Nonnegative weights summing to 1.
    scale : float
        Ground distance between adjacent bins. 1 gives bin-index units;
        ``CodecParams.bin_width`` gives normalized-series units.

    Returns
    -------
    float
        For one-hot columns at bins ``a`` and ``b`` this is ``|a - b| * scale``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_column(p, "p")
    _check_column(q, "q")
    if p.shape != q.shape:
        raise MetricError(f"h mismatch: {p.shape[0]} vs {q.shape[0]}")
    return float(kernels.w1_columns(p[None, :, None], q[None, :, None])[0, 0]) * scale


def column_distances(a: Tensor, b: Tensor) -> np.ndarray:
    """Per-column distances, shape ``(c, t)`` (or ``(n, t)`` for stacked batches)."""
    pa, pb = _as_array(a), _as_array(b)
    if pa.shape != pb.shape:
        raise MetricError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    if pa.ndim != 3:
        raise MetricError(f"expected (c, h, t) tensors, got ndim={pa.ndim}")
    return kernels.w1_columns(pa, pb)


def emd_distance(a: Tensor, b: Tensor, params: CodecParams | None = None) -> float:
    """Sum of column distances. Pass ``params`` to measure in series units instead of bins."""
    d = column_distances(a, b)
    total = math.fsum(d.ravel().tolist())
    return total * params.bin_width if params is not None else total


def emd_loss_and_grad(pred: Tensor, target: Tensor) -> LossReport:
    """Mean column distance and its gradient with respect to ``pred``.

    The gradient uses ``sign(0) = 0`` where a CDF difference is exactly zero.
    """
    p, q = _as_array(pred), _as_array(target)
    if p.shape != q.shape:
        raise MetricError(f"shape mismatch: {p.shape} vs {q.shape}")
    if p.ndim != 3:
        raise MetricError(f"expected (c, h, t) tensors, got ndim={p.ndim}")
    n_cols = p.shape[0] * p.shape[2]
    if n_cols == 0:
        raise MetricError("empty tensor")
    per_col, grad = kernels.emd_loss_grad(p, q)
    loss = math.fsum(per_col.ravel().tolist()) / n_cols
    return LossReport(loss=loss, gradient=grad / n_cols)
