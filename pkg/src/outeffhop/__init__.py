"""Outlier-efficient modern Hopfield memories: stable kernels, retrieval
dynamics, closed-form bounds, an attention layer with a manual backward
pass, outlier/quantization metrics and a desk-scale experiment harness."""

__version__ = "0.1.0"

from .errors import DomainError, NumericalError  # noqa: E402,F401
