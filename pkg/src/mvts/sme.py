"""Roundtrip error of the codec under standard-normal inputs.

The quantity of interest is the mean per-element roundtrip error
``E|decode(encode(s)) - s|`` for ``s ~ N(0, 1)``. It is bounded above by

    chi(ms, h) = ms * (erf(ms/sqrt2)/h - erfc(ms/sqrt2)) + sqrt(2/pi) * exp(-ms**2/2)

where ``erf(ms/sqrt2) = Phi(ms) - Phi(-ms)`` and ``erfc(ms/sqrt2) = 2 - 2 Phi(ms)``.
For fixed ``h`` the bound is minimized at the single root of its ms-derivative,
which is found by bisection.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .codec import CodecParams

SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
TABLE1_H = (50, 100, 200, 400, 800)


class BracketError(ArithmeticError):
    """The derivative does not change sign over the search bracket."""


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via ``erfc``; accurate in both tails."""
    return 0.5 * math.erfc(-x / SQRT2)


def std_normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BoundQuery:
    h: int
    ms: float
    per_element: bool = True
    c: int = 1
    t: int = 1

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 2:
            raise ValueError(f"h must be an integer >= 2, got {self.h!r}")
        if not (math.isfinite(self.ms) and self.ms > 0):
            raise ValueError(f"ms must be positive, got {self.ms!r}")
        if self.c < 1 or self.t < 1:
            raise ValueError("c and t must be positive")

    @property
    def factor(self) -> int:
        return 1 if self.per_element else self.c * self.t


def sme_upper_bound(h: int, ms: float, *, per_element: bool = True, c: int = 1, t: int = 1) -> float:
    """Upper bound on the expected roundtrip L1 error.

    Per element by default; with ``per_element=False`` the bound covers a
    whole ``c x t`` series and is multiplied by ``c * t``.
    """
    q = BoundQuery(h, ms, per_element, c, t)
    z = q.ms / SQRT2
    chi = q.ms * (math.erf(z) / q.h - math.erfc(z)) + SQRT_2_OVER_PI * math.exp(-0.5 * q.ms * q.ms)
    return q.factor * chi


def bound_derivative(h: int, ms: float, *, per_element: bool = True, c: int = 1, t: int = 1) -> float:
    """Derivative of :func:`sme_upper_bound` with respect to ``ms``."""
    q = BoundQuery(h, ms, per_element, c, t)
    z = q.ms / SQRT2
    d = math.erf(z) / q.h - math.erfc(z) + (q.ms / q.h) * SQRT_2_OVER_PI * math.exp(-0.5 * q.ms * q.ms)
    return q.factor * d


def bound_second_derivative(h: int, ms: float) -> float:
    """Per-element curvature; positive below ``sqrt(h + 2)``, negative above."""
    return SQRT_2_OVER_PI * math.exp(-0.5 * ms * ms) * (2.0 + h - ms * ms) / h


def solve_optimal_ms(h: int, tol: float = 1e-6, lo: float = 1e-3, hi: float = 20.0) -> float:
    """The ms minimizing the per-element bound at resolution ``h``.

    Bisection on the derivative over ``[lo, hi]``; the result is within
    ``tol`` of the root. Raises :class:`BracketError` if the derivative has
    the same sign at both ends (not expected for ``h >= 2``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    f_lo, f_hi = bound_derivative(h, lo), bound_derivative(h, hi)
    if not (f_lo < 0.0 < f_hi):
        raise BracketError(
            f"derivative does not change sign on [{lo}, {hi}] for h={h}: "
            f"f(lo)={f_lo:.3e}, f(hi)={f_hi:.3e}")
    while hi - lo > 2.0 * tol:
        mid = 0.5 * (lo + hi)
        f_mid = bound_derivative(h, mid)
        if f_mid == 0.0:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def derivative_sign_changes(h: int, n: int = 2000, hi: float = 20.0) -> int:
    """Number of sign changes of the derivative on an ``n``-point grid over ``(0, hi]``."""
    grid = np.linspace(hi / n, hi, n)
    signs = np.sign([bound_derivative(h, float(m)) for m in grid])
    signs = signs[signs != 0]
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def reproduce_table1(hs: Sequence[int] = TABLE1_H, tol: float = 1e-6) -> list[tuple[int, float, float]]:
    """``(h, best ms, per-element bound at best ms)`` for each resolution."""
    rows = []
    for h in hs:
        ms = solve_optimal_ms(h, tol)
        rows.append((int(h), ms, sme_upper_bound(h, ms)))
    return rows


@dataclass(frozen=True)
class ConvergenceReport:
    ms: float
    hs: tuple
    bounds: tuple
    decreasing: bool
    limit: float
    """Bound as ``h -> inf``: only the saturation term survives."""


def bound_limit_h_inf(ms: float) -> float:
    z = ms / SQRT2
    return -ms * math.erfc(z) + SQRT_2_OVER_PI * math.exp(-0.5 * ms * ms)


def check_convergence(ms: float, h_schedule: Iterable[int]) -> ConvergenceReport:
    hs = tuple(int(h) for h in h_schedule)
    if any(b <= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h_schedule must be strictly increasing")
    bounds = tuple(sme_upper_bound(h, ms) for h in hs)
    decreasing = all(b < a for a, b in zip(bounds, bounds[1:]))
    return ConvergenceReport(ms, hs, bounds, decreasing, bound_limit_h_inf(ms))


@dataclass(frozen=True)
class MonteCarloReport:
    mean: float
    stderr: float
    bound: float
    n: int
    seed: int
    h: int
    ms: float
    c: int = 1
    t: int = 1

    @property
    def within_bound(self) -> bool:
        """Empirical mean minus three standard errors does not exceed the bound."""
        return self.mean - 3.0 * self.stderr <= self.bound


def _block_rng(seed: int, block: int) -> np.random.Generator:
    # Philox is counter-based; each block gets its own spawned key
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def standard_normal_samples(n: int, size: int, seed: int, block: int = 4096) -> np.ndarray:
    """``(n, size)`` standard normals drawn from per-block substreams."""
    out = np.empty((n, size))
    for b, start in enumerate(range(0, n, block)):
        stop = min(n, start + block)
        out[start:stop] = _block_rng(seed, b).standard_normal((stop - start, size))
    return out


def monte_carlo_sme(params: CodecParams, c: int = 1, t: int = 1, n: int = 100_000,
                    seed: int = 0, block: int = 4096, workers: int = 1) -> MonteCarloReport:
    """Empirical per-element roundtrip error on ``n`` standard-normal ``c x t`` series.

    Samples are split into blocks with independent substreams, so the result
    depends only on ``(seed, block)``, never on ``workers``.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    size = c * t
    starts = list(range(0, n, block))

    def run(b: int) -> np.ndarray:
        m = min(n, starts[b] + block) - starts[b]
        x = _block_rng(seed, b).standard_normal((m, size))
        err = kernels.roundtrip_abs_error(x, params.h, params.ms)
        return err.mean(axis=1)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(b) for b in range(len(starts))]
    per_sample = np.concatenate(parts).tolist()
    mean = math.fsum(per_sample) / n
    var = math.fsum((x - mean) ** 2 for x in per_sample) / (n - 1)
    return MonteCarloReport(
        mean=mean, stderr=math.sqrt(var / n), bound=sme_upper_bound(params.h, params.ms),
        n=n, seed=seed, h=params.h, ms=params.ms, c=c, t=t)


def empirical_sme_curve(ms_grid: Sequence[float], hs: Sequence[int], n: int = 200_000,
                        seed: int = 0) -> np.ndarray:
    """Mean roundtrip error for every ``(ms, h)`` pair on one shared sample.

    Reusing the same draws across the grid keeps the comparison between grid
    points free of sampling noise in the common part. Returns an array of
    shape ``(len(ms_grid), len(hs))``.
    """
    x = standard_normal_samples(n, 1, seed).ravel()
    out = np.empty((len(ms_grid), len(hs)))
    for i, ms in enumerate(ms_grid):
        for j, h in enumerate(hs):
            out[i, j] = kernels.roundtrip_abs_error(x, int(h), float(ms)).mean()
    return out
