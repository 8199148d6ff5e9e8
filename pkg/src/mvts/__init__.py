"""Binary machine-vision representation of time series.

Numerical series are encoded as one-hot ``(channels, bins, time)`` images,
compared with a column-wise earth mover's distance, and forecast by a
vision-style predictor whose output is decoded back to values.
"""
__version__ = "0.1.0"

from .codec import (BinaryVisionTensor, CodecError, CodecParams, NumericSeries, SoftVisionTensor,
                    bin_index, decode, deserialize, encode, harden, render_bitmap, serialize)
from .metric import LossReport, emd_distance, emd_loss_and_grad, w1_column
from .sme import (MonteCarloReport, bound_derivative, monte_carlo_sme, reproduce_table1,
                  solve_optimal_ms, sme_upper_bound, std_normal_cdf)

__all__ = [
    "BinaryVisionTensor", "CodecError", "CodecParams", "NumericSeries", "SoftVisionTensor",
    "bin_index", "decode", "deserialize", "encode", "harden", "render_bitmap", "serialize",
    "LossReport", "emd_distance", "emd_loss_and_grad", "w1_column",
    "MonteCarloReport", "bound_derivative", "monte_carlo_sme", "reproduce_table1",
    "solve_optimal_ms", "sme_upper_bound", "std_normal_cdf",
]
