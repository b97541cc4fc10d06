"""Associative-memory core.

Memories are stored column-wise in a ``(d, M)`` float64 array ``Xi``.  The
no-op classification map sends flagged patterns to a single class vector
``Omega = (0, ..., 0, C)`` in one extra dimension; because queries are
augmented with a trailing zero, ``<Omega, x> = 0`` and Omega shows up in the
energy only as the ``+1`` inside ``lse1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .numerics import (
    as_vector,
    check_beta,
    lse,
    lse_k,
    softmax,
    softmax1,
    softmax_k,
    sparsemax,
)


DENSE = "dense"
OUTLIER_EFFICIENT = "outeff"
SOFTMAX_K = "softmax_k"
SPARSE = "sparse"
POLYNOMIAL = "poly"


@dataclass(frozen=True)
class Variant:
    """Which energy/update pair to use.

    ``param`` is ``k`` for :data:`SOFTMAX_K` and the order ``n`` for
    :data:`POLYNOMIAL`; unused otherwise.
    """

    kind: str
    param: int = 0

    def __post_init__(self):
        if self.kind not in (DENSE, OUTLIER_EFFICIENT, SOFTMAX_K, SPARSE, POLYNOMIAL):
            raise ValueError(f"unknown variant {self.kind!r}")
        if self.kind == SOFTMAX_K and self.param < 0:
            raise ValueError("softmax_k needs k >= 0")
        if self.kind == POLYNOMIAL and self.param < 2:
            raise ValueError("polynomial variant needs order >= 2")

    @classmethod
    def parse(cls, text):
        """Parse ``dense``, ``outeff``, ``sparse``, ``softmax_k:3`` or ``poly:10``."""
        if isinstance(text, Variant):
            return text
        kind, _, arg = str(text).partition(":")
        if kind in (SOFTMAX_K, POLYNOMIAL):
            if not arg:
                raise ValueError(f"variant {kind!r} needs a parameter, e.g. {kind}:3")
            return cls(kind, int(arg))
        if arg:
            raise ValueError(f"variant {kind!r} takes no parameter")
        return cls(kind)

    def __str__(self):
        if self.kind in (SOFTMAX_K, POLYNOMIAL):
            return f"{self.kind}:{self.param}"
        return self.kind

    @property
    def has_energy(self):
        return self.kind != POLYNOMIAL


@dataclass(frozen=True)
class AugmentedMemory:
    """Patterns after the no-op classification map.

    ``op_patterns`` is ``(d+1, M-K)`` with a zero last row; ``omega`` is the
    single no-op class vector ``(0, ..., 0, c)``.
    """

    op_patterns: np.ndarray
    omega: np.ndarray
    c: float
    outlier_count: int
    flags: tuple = field(default=())

    @property
    def dim(self):
        return self.op_patterns.shape[0]

    @property
    def full(self):
        """Op-patterns with Omega appended as a last column."""
        return np.column_stack([self.op_patterns, self.omega])


@dataclass(frozen=True)
class RetrievalConfig:
    beta: float = 1.0
    max_iters: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        check_beta(self.beta)
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class RetrievalTrace:
    iterates: list
    energies: list
    converged: bool
    iterations_used: int

    @property
    def final(self):
        return self.iterates[-1]


def as_memory(patterns):
    """Validate a ``(d, M)`` pattern matrix."""
    xi = np.asarray(patterns, dtype=np.float64)
    if xi.ndim == 1:
        xi = xi[:, None]
    if xi.ndim != 2 or xi.shape[0] < 1 or xi.shape[1] < 1:
        raise ValueError(f"memory must be a nonempty (d, M) matrix, got shape {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("memory has non-finite entries")
    return xi


def augment_patterns(patterns, outlier_flags, c=1.0):
    """Apply the no-op classification map.

    Unflagged patterns become ``(xi, 0)``; every flagged pattern collapses
    into the one class vector ``(0, ..., 0, c)``.
    """
    xi = as_memory(patterns)
    flags = np.asarray(outlier_flags, dtype=bool).ravel()
    d, M = xi.shape
    if flags.size != M:
        raise ValueError(f"expected {M} outlier flags, got {flags.size}")
    if flags.all():
        raise ValueError("every pattern is flagged as an outlier; no op-memory remains")
    op = np.vstack([xi[:, ~flags], np.zeros((1, int((~flags).sum())))])
    omega = np.zeros(d + 1)
    omega[-1] = c
    return AugmentedMemory(op, omega, float(c), int(flags.sum()), tuple(flags.tolist()))


def augment_query(x):
    """``x -> (x, 0)``."""
    return np.append(as_vector(x, "x"), 0.0)


def drop_auxiliary(x):
    """Drop the no-op coordinate from an augmented vector."""
    return np.asarray(x)[..., :-1]


def flag_outliers_by_threshold(patterns, threshold):
    """Flag patterns whose best cosine similarity to any other pattern is
    below ``threshold``."""
    xi = as_memory(patterns)
    if xi.shape[1] < 2:
        raise ValueError("need at least two patterns to compare similarities")
    norms = np.linalg.norm(xi, axis=0)
    if np.any(norms == 0):
        raise ValueError("cosine similarity is undefined for a zero-norm pattern")
    unit = xi / norms
    cos = unit.T @ unit
    np.fill_diagonal(cos, -np.inf)
    return cos.max(axis=1) < threshold


def _resolve(variant, memory):
    """Return ``(Xi, slots, c)``: the matrix whose columns enter the update,
    the number of implicit zero-logit slots, and the Omega value (or None)."""
    if isinstance(memory, AugmentedMemory):
        if variant.kind == OUTLIER_EFFICIENT:
            return memory.op_patterns, 1, memory.c
        if variant.kind == SOFTMAX_K:
            return memory.op_patterns, variant.param, memory.c
        return memory.full, 0, None
    xi = as_memory(memory)
    slots = {OUTLIER_EFFICIENT: 1, SOFTMAX_K: variant.param}.get(variant.kind, 0)
    return xi, slots, None


def _check_dim(xi, x):
    if x.shape[0] != xi.shape[0]:
        raise ValueError(f"query dimension {x.shape[0]} does not match memory dimension {xi.shape[0]}")


def energy(variant, memory, x, beta):
    """Energy of ``x``, additive constant fixed to 0.

    dense: ``-lse(beta, Xi^T x) + <x, x>/2``; outeff: same with ``lse1``;
    softmax_k: with ``lse_k``; sparse: ``-Psi*(beta Xi^T x)/beta + <x, x>/2``
    where ``Psi*`` is the conjugate of the Gini entropy.  On augmented
    memory the quadratic term runs over the first ``d`` coordinates; the
    auxiliary coordinate is a class label, not state.
    """
    variant = Variant.parse(variant)
    beta = check_beta(beta)
    x = as_vector(x, "x")
    xi, slots, c = _resolve(variant, memory)
    _check_dim(xi, x)
    state = x[:-1] if c is not None else x
    quad = 0.5 * float(state @ state)
    z = xi.T @ x
    if variant.kind in (DENSE, OUTLIER_EFFICIENT, SOFTMAX_K):
        return -lse_k(beta, z, slots) + quad
    if variant.kind == SPARSE:
        bz = beta * z
        p = sparsemax(bz)
        conj = float(p @ bz) - 0.5 * float(p @ p) + 0.5
        return -conj / beta + quad
    raise ValueError(f"variant {variant} has no energy function")


def _weights(variant, xi, x, beta, slots):
    z = xi.T @ x
    if variant.kind == DENSE:
        return softmax(beta * z)
    if variant.kind in (OUTLIER_EFFICIENT, SOFTMAX_K):
        return softmax_k(beta * z, slots)
    if variant.kind == SPARSE:
        return sparsemax(beta * z)
    # polynomial: p ∝ relu(z)^n, scaled by the max before powering to avoid overflow
    r = np.maximum(z, 0.0)
    top = r.max()
    if top == 0:
        return np.zeros_like(r)
    p = (r / top) ** variant.param
    return p / p.sum()


def retrieve_step(variant, memory, x, beta):
    """One application of the retrieval map ``x -> Xi p(beta Xi^T x)``.

    On augmented memory the first ``d`` coordinates come from the
    op-patterns alone and the auxiliary coordinate holds ``c`` times the
    mass of the implicit no-op slot(s).
    """
    variant = Variant.parse(variant)
    beta = check_beta(beta)
    x = as_vector(x, "x")
    xi, slots, c = _resolve(variant, memory)
    _check_dim(xi, x)
    p = _weights(variant, xi, x, beta, slots)
    out = xi @ p
    if c is not None and slots > 0:
        out[-1] = c * (1.0 - p.sum())
    return out


def retrieve(variant, memory, x0, config=None):
    """Iterate :func:`retrieve_step` until ``||x_{t+1} - x_t||_inf <= tol``.

    ``iterations_used`` counts updates up to the converged iterate; the final
    confirming step that moved less than ``tol`` is not counted, so a
    single-pattern dense memory reports 1.
    """
    variant = Variant.parse(variant)
    config = config or RetrievalConfig()
    x = as_vector(x0, "x0")
    track = variant.has_energy
    iterates = [x]
    energies = [energy(variant, memory, x, config.beta) if track else float("nan")]
    for t in range(1, config.max_iters + 1):
        x_new = retrieve_step(variant, memory, x, config.beta)
        if not np.all(np.isfinite(x_new)):
            raise NumericalError(f"non-finite iterate at iteration {t}", index=t)
        iterates.append(x_new)
        energies.append(energy(variant, memory, x_new, config.beta) if track else float("nan"))
        if np.max(np.abs(x_new - x)) <= config.tol:
            return RetrievalTrace(iterates, energies, True, t - 1)
        x = x_new
    return RetrievalTrace(iterates, energies, False, config.max_iters)


def retrieve_batch(variant, memory, X0, config=None):
    """Retrieve every column of ``X0`` independently.

    Returns ``(final, iterations, converged)``.  Columns are processed one at
    a time so the result is identical to calling :func:`retrieve` per column.
    """
    X0 = np.asarray(X0, dtype=np.float64)
    finals = np.empty_like(X0)
    iters = np.empty(X0.shape[1], dtype=int)
    conv = np.empty(X0.shape[1], dtype=bool)
    for j in range(X0.shape[1]):
        finals[:, j], iters[j], conv[j] = _retrieve_final(variant, memory, X0[:, j], config)
    return finals, iters, conv


def _retrieve_final(variant, memory, x0, config):
    # same update/stop rule as retrieve() without storing the trace
    variant = Variant.parse(variant)
    config = config or RetrievalConfig()
    x = as_vector(x0, "x0")
    for t in range(1, config.max_iters + 1):
        x_new = retrieve_step(variant, memory, x, config.beta)
        if not np.all(np.isfinite(x_new)):
            raise NumericalError(f"non-finite iterate at iteration {t}", index=t)
        if np.max(np.abs(x_new - x)) <= config.tol:
            return x_new, t - 1, True
        x = x_new
    return x, config.max_iters, False


def energy_gradient(memory, x, beta):
    """Gradient of the outlier-efficient energy, ``x - Xi softmax1(beta Xi^T x)``."""
    xi = as_memory(memory)
    x = as_vector(x, "x")
    _check_dim(xi, x)
    return x - xi @ softmax1(beta * (xi.T @ x))


def separation_delta(memory, mu):
    """``<xi_mu, xi_mu> - max_{nu != mu} <xi_mu, xi_nu>``."""
    xi = as_memory(memory)
    return separation_delta_tilde(xi, xi[:, mu], mu)


def separation_delta_tilde(memory, x, mu):
    """``<xi_mu, x> - max_{nu != mu} <xi_mu, xi_nu>``."""
    xi = as_memory(memory)
    if xi.shape[1] < 2:
        raise ValueError("separation needs at least two patterns")
    x = as_vector(x, "x")
    _check_dim(xi, x)
    cross = np.delete(xi.T @ xi[:, mu], mu)
    return float(xi[:, mu] @ x - cross.max())


def gamma(memory, x, beta):
    """Total softmax1 mass ``sum_mu softmax1(beta Xi^T x)_mu`` in (0, 1)."""
    xi = as_memory(memory)
    x = as_vector(x, "x")
    _check_dim(xi, x)
    return float(softmax1(check_beta(beta) * (xi.T @ x)).sum())


def gamma_closed_form(memory, x, beta):
    """``S / (S + 1)`` with ``S = sum exp(beta Xi^T x)``, computed via lse."""
    xi = as_memory(memory)
    beta = check_beta(beta)
    log_s = beta * lse(beta, xi.T @ as_vector(x, "x"))
    # S/(S+1) = 1/(1 + exp(-log S))
    return float(1.0 / (1.0 + np.exp(-log_s)))


def delta_from_gamma(gamma_value, beta):
    """``delta = -ln(gamma) / beta`` so that ``gamma = exp(-beta delta)``."""
    if not 0 < gamma_value < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma_value}")
    return float(-np.log(gamma_value) / check_beta(beta))


def is_retrieved(x_out, xi_mu, epsilon):
    x_out = np.asarray(x_out, dtype=np.float64)
    xi_mu = np.asarray(xi_mu, dtype=np.float64)
    if x_out.shape != xi_mu.shape:
        raise ValueError("retrieved vector and pattern differ in shape")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return bool(np.linalg.norm(x_out - xi_mu) <= epsilon)


def sphere_radius(memory):
    """Half the minimum pairwise distance between stored patterns."""
    xi = as_memory(memory)
    if xi.shape[1] < 2:
        return float("inf")
    sq = np.sum(xi**2, axis=0)
    best = np.inf
    # row blocks keep the Gram matrix out of memory for large M
    for start in range(0, xi.shape[1], 1024):
        block = slice(start, start + 1024)
        d2 = sq[block, None] + sq[None, :] - 2.0 * (xi[:, block].T @ xi)
        idx = np.arange(d2.shape[0])
        d2[idx, idx + start] = np.inf
        best = min(best, d2.min())
    return float(0.5 * np.sqrt(max(best, 0.0)))
