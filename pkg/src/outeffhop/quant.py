"""Outlier metrics and symmetric per-tensor fake quantization.

Kurtosis is Pearson (non-excess): ``m4 / m2**2`` with population moments,
so a Gaussian scores 3.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Statistic undefined for the input (too few elements, zero variance)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class QuantScheme:
    bits: int = 8
    symmetric: bool = True
    granularity: str = "per-tensor"

    def __post_init__(self):
        if not 2 <= self.bits <= 16:
            raise ValueError("bits must be in [2, 16]")
        if not self.symmetric or self.granularity != "per-tensor":
            raise ValueError("only symmetric per-tensor quantization is supported")

    @property
    def qmax(self):
        return 2 ** (self.bits - 1) - 1


W8A8 = QuantScheme(8)


@dataclass(frozen=True)
class ActivationStats:
    avg_kurtosis: float
    max_inf_norm: float
    tensor_count: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def kurtosis(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 4:
        raise DegenerateInputError(f"kurtosis needs at least 4 elements, got {x.size}")
    c = x - x.mean()
    m2 = np.mean(c * c)
    if m2 == 0:
        raise DegenerateInputError("kurtosis is undefined for zero variance")
    return float(np.mean(c**4) / m2**2)


def activation_stats(tensors):
    """Mean per-tensor kurtosis and the largest absolute entry overall."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("activation_stats needs at least one tensor")
    kurts = []
    for i, t in enumerate(tensors):
        try:
            kurts.append(kurtosis(t))
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"tensor {i}: {exc}", index=i) from exc
    inf = max(float(np.max(np.abs(np.asarray(t, dtype=np.float64)))) for t in tensors)
    return ActivationStats(float(np.mean(kurts)), inf, len(tensors))


def quantize_dequantize(x, scheme=W8A8):
    """Round-trip ``x`` through a symmetric uniform integer grid.

    ``scale = max|x| / qmax``; values are rounded half-to-even and clamped
    to ``[-qmax, qmax]``.  An all-zero tensor comes back unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    if amax == 0.0:
        return np.zeros_like(x)
    scale = amax / scheme.qmax
    q = np.clip(np.rint(x / scale), -scheme.qmax, scheme.qmax)
    return q * scale


def quant_scale(x, scheme=W8A8):
    return float(np.max(np.abs(np.asarray(x, dtype=np.float64)))) / scheme.qmax


def quant_error(x, scheme=W8A8):
    """Mean squared dequantization error."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((x - quantize_dequantize(x, scheme)) ** 2))
