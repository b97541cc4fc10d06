"""Closed-form bounds: Lambert-W capacity lower bound, well-separation
threshold, one-step retrieval-error bounds and the layer generalization
bound.

Calculators raise :class:`~outeffhop.errors.DomainError` (carrying the
offending value) when a formula leaves its domain, so sweeps can skip the
corner and the CLI can report it as JSON.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import check_beta, softmax1

INV_E = math.exp(-1.0)


def _halley(w, y):
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - y
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 1e-15 * (1.0 + abs(w)):
            break
    return w


def lambert_w0(y):
    """Principal branch ``W_0(y)``: the ``w >= -1`` solving ``w e^w = y``.

    Halley iteration from ``ln(1 + y)`` for ``y >= 0`` and from the
    branch-point series in ``sqrt(2(e y + 1))`` below zero.
    """
    y = float(y)
    if math.isnan(y) or y < -INV_E:
        raise DomainError(f"W_0 is real only for y >= -1/e, got {y}", value=y)
    if y == 0.0:
        return 0.0
    if y == -INV_E:
        return -1.0
    if math.isinf(y):
        return math.inf
    if y > 0:
        w = math.log1p(y)
        if y > 3.0:
            w -= math.log(w)
    elif y < -0.25:
        p = math.sqrt(max(2.0 * (math.e * y + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    else:
        w = math.log1p(y)
    return _halley(w, y)


def lambert_w0_of_exp(t):
    """``W_0(exp(t))`` without forming ``exp(t)``; solves ``w + ln w = t``."""
    t = float(t)
    if t < 700.0:
        return lambert_w0(math.exp(t))
    w = t - math.log(t)
    for _ in range(64):
        step = (w + math.log(w) - t) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= 1e-15 * w:
            break
    return w


def solve_abc(a, b):
    """Solve ``a c + c ln c - b = 0`` as ``c = b / W_0(exp(a + ln b))``."""
    if not b > 0:
        raise DomainError(f"the abc identity needs b > 0, got {b}", value=b)
    return b / lambert_w0_of_exp(a + math.log(b))


@dataclass(frozen=True)
class CapacityParams:
    d: int
    m: float
    R: float
    beta: float
    delta: float
    p: float

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("capacity bound needs d >= 2")
        for name in ("m", "R", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")


def capacity_coefficients(params):
    """The ``(a, b)`` pair of the capacity bound, formula taken literally.

    ``a = 4/(d-1) * (ln[2 m^2 (sqrt(p) - 1) / R] + 1 - delta/(2 beta m R))``,
    ``b = 4 m^2 beta / (5 (d-1))``.  For ``p`` in (0, 1) the log argument is
    negative, which raises :class:`DomainError`.
    """
    d, m, R, beta, delta, p = (params.d, params.m, params.R, params.beta, params.delta, params.p)
    log_arg = 2.0 * m * m * (math.sqrt(p) - 1.0) / R
    if not log_arg > 0:
        raise DomainError(
            f"log argument 2 m^2 (sqrt(p) - 1) / R = {log_arg:.6g} is not positive",
            value=log_arg,
        )
    a = 4.0 / (d - 1) * (math.log(log_arg) + 1.0 - delta / (2.0 * beta * m * R))
    b = 4.0 * m * m * beta / (5.0 * (d - 1))
    return a, b


def capacity_from_coefficients(a, b, d, p):
    """``sqrt(p) * C^((d-1)/4)`` with ``C = solve_abc(a, b)``."""
    return math.sqrt(p) * solve_abc(a, b) ** ((d - 1) / 4.0)


def capacity_lower_bound(params):
    a, b = capacity_coefficients(params)
    return capacity_from_coefficients(a, b, params.d, params.p)


def well_separation_threshold(M, m, R, beta, delta=0.0):
    """``ln(2 (M-1) m / R) / beta + 2 m R - delta``."""
    if M < 2:
        raise ValueError("well-separation needs M >= 2")
    if not (m > 0 and R > 0):
        raise ValueError("m and R must be positive")
    beta = check_beta(beta)
    return math.log(2.0 * (M - 1) * m / R) / beta + 2.0 * m * R - delta


def retrieval_error_upper_bound(variant, m, M, delta_mu_tilde, beta, delta=0.0):
    """``2 m (M-1) exp(-beta dt)`` for ``dense``; times ``exp(-beta delta)``
    for ``outeff``."""
    if M < 2:
        raise ValueError("error bound needs M >= 2")
    if not m > 0:
        raise ValueError("m must be positive")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    beta = check_beta(beta)
    kind = str(variant)
    if kind == "dense":
        return 2.0 * m * (M - 1) * math.exp(-beta * delta_mu_tilde)
    if kind == "outeff":
        return 2.0 * m * (M - 1) * math.exp(-beta * (delta_mu_tilde + delta))
    raise ValueError(f"no error bound for variant {kind!r}")


def query_error_bound(memory, x, mu, beta):
    """A one-step bound for softmax1 retrieval that holds for every query.

    ``2 m gamma sum_{nu != mu} exp(beta (<xi_nu, x> - <xi_mu, x>)) + (1 - gamma) m``:
    the first term bounds the mass leaking to other patterns, the second
    the mass parked on the no-op slot.
    """
    xi = np.asarray(memory, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    beta = check_beta(beta)
    z = xi.T @ x
    g = float(softmax1(beta * z).sum())
    m = float(np.linalg.norm(xi, axis=0).max())
    leak = np.exp(beta * (np.delete(z, mu) - z[mu])).sum()
    return 2.0 * m * g * float(leak) + (1.0 - g) * m


@dataclass(frozen=True)
class GenBoundParams:
    B_Y: float
    B_K: float
    B_K21: float
    B_V: float
    B_V21: float
    beta: float
    d: int
    M: int
    N: int
    delta_prob: float

    def __post_init__(self):
        for name in ("B_Y", "B_K", "B_K21", "B_V", "B_V21"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        check_beta(self.beta)
        for name in ("d", "M", "N"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.delta_prob < 1:
            raise ValueError("delta_prob must lie in (0, 1)")


def generalization_bound(params):
    """Shape of the layer generalization bound with hidden constants set to 1.

    ``sqrt(1/N) * (sqrt((E1 + E2)^3) + sqrt(log(1/delta)))`` where
    ``E1 = [4 B_V^2 B_Y^2 (beta B_K21)^2 log(dNM)]^(1/3)`` and
    ``E2 = [B_V21^2 log(dNM)]^(1/3)``.
    """
    q = params
    log_dnm = math.log(q.d * q.N * q.M)
    e1 = (4.0 * q.B_V**2 * q.B_Y**2 * (q.beta * q.B_K21) ** 2 * log_dnm) ** (1.0 / 3.0)
    e2 = (q.B_V21**2 * log_dnm) ** (1.0 / 3.0)
    return math.sqrt(1.0 / q.N) * (math.sqrt((e1 + e2) ** 3) + math.sqrt(math.log(1.0 / q.delta_prob)))
