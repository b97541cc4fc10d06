"""Numerically stable kernels: log-sum-exp family, softmax family, sparsemax,
the Softmax_1 Jacobian and the vector/matrix norms used by the bounds.

Everything works on float64 numpy arrays and is a pure function of its inputs.
"""

import numpy as np


def as_vector(z, name="z"):
    """Return ``z`` as a finite, nonempty 1-D float64 array."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        z = z.reshape(1)
    if z.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {z.shape}")
    if z.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} has non-finite entries")
    return z


def check_beta(beta):
    beta = float(beta)
    if not beta > 0 or not np.isfinite(beta):
        raise ValueError(f"inverse temperature must be positive and finite, got {beta}")
    return beta


def _check_k(k):
    if int(k) != k or k < 0:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    return int(k)


def lse_k(beta, z, k):
    """``beta^-1 log(sum_mu exp(beta z_mu) + k)``.

    For ``k > 0`` the implicit ``k = k * exp(0)`` term takes part in the
    shift, so the shift constant is ``max(0, max(beta z))``.
    """
    beta = check_beta(beta)
    z = as_vector(z)
    k = _check_k(k)
    bz = beta * z
    shift = bz.max()
    if k > 0:
        shift = max(shift, 0.0)
    total = np.exp(bz - shift).sum()
    if k > 0:
        total += k * np.exp(-shift)
    return float((shift + np.log(total)) / beta)


def lse(beta, z):
    """Log-sum-exp at inverse temperature ``beta``."""
    return lse_k(beta, z, 0)


def lse1(beta, z):
    """Log-sum-exp with an extra ``+1`` inside the sum (the zero-energy slot)."""
    return lse_k(beta, z, 1)


def softmax_k(z, k):
    """``exp(z_i) / (k + sum_j exp(z_j))``; k=0 is softmax, k=1 is softmax1."""
    z = as_vector(z)
    k = _check_k(k)
    shift = z.max()
    if k > 0:
        shift = max(shift, 0.0)
    e = np.exp(z - shift)
    denom = e.sum()
    if k > 0:
        denom += k * np.exp(-shift)
    return e / denom


def softmax(z):
    return softmax_k(z, 0)


def softmax1(z):
    """Softmax with ``+1`` in the denominator; entries sum to ``S/(S+1) < 1``."""
    return softmax_k(z, 1)


def softmax1_jacobian(z):
    """Jacobian ``diag(s) - s s^T`` of softmax1 at ``z``."""
    s = softmax1(z)
    return np.diag(s) - np.outer(s, s)


def sparsemax(z):
    """Euclidean projection of ``z`` onto the probability simplex.

    Sort-and-threshold: with ``z`` sorted descending, the support size is the
    largest ``k`` with ``1 + k z_(k) > sum_{j<=k} z_(j)``.
    """
    z = as_vector(z)
    order = np.argsort(-z, kind="stable")
    zs = z[order]
    cssv = np.cumsum(zs)
    ks = np.arange(1, z.size + 1)
    support = 1.0 + ks * zs > cssv
    k = ks[support][-1]
    tau = (cssv[k - 1] - 1.0) / k
    return np.maximum(z - tau, 0.0)


_VECTOR_NORMS = {"l1": 1, "l2": 2, "linf": np.inf}
_MATRIX_NORMS = ("2,1", "2,inf", "max_col_l2")


def norm(x, kind):
    """Vector norms ``l1``, ``l2``, ``linf``; matrix norms ``2,1`` (sum of
    column l2 norms) and ``2,inf`` / ``max_col_l2`` (largest column l2 norm).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("norm of an empty input")
    if kind in _VECTOR_NORMS:
        return float(np.linalg.norm(x.ravel(), _VECTOR_NORMS[kind]))
    if kind in _MATRIX_NORMS:
        if x.ndim != 2:
            raise ValueError(f"matrix norm {kind!r} needs a 2-D input")
        cols = np.linalg.norm(x, axis=0)
        return float(cols.sum() if kind == "2,1" else cols.max())
    raise ValueError(f"unknown norm kind {kind!r}")
