"""The outlier-efficient Hopfield attention layer.

``Z = softmax1(beta R W_Q W_K^T Y^T) Y W_K W_V`` with ``R`` (L_R x a) the raw
queries and ``Y`` (L_Y x a) the raw memories.  All array functions accept
leading batch dimensions, so ``R`` may be ``(B, L_R, a)``.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .numerics import check_beta

MEMORY_RETRIEVAL = "retrieval"
SELF = "self"
POOLING = "pooling"
LOOKUP = "lookup"
MODES = (MEMORY_RETRIEVAL, SELF, POOLING, LOOKUP)


@dataclass(frozen=True)
class AttentionWeights:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        check_beta(self.beta)
        for name in ("W_Q", "W_K", "W_V"):
            arr = getattr(self, name)
            if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite 2-D matrix")
        # rows may differ (query width vs memory width, e.g. lookup slots)
        if self.W_Q.shape[1] != self.W_K.shape[1]:
            raise ValueError(f"W_Q {self.W_Q.shape} and W_K {self.W_K.shape} need the same key width")
        if self.W_K.shape[1] != self.W_V.shape[0]:
            raise ValueError("W_V must have as many rows as W_K has columns")

    @classmethod
    def identity(cls, a, beta=1.0):
        eye = np.eye(a)
        return cls(eye, eye.copy(), eye.copy(), beta)

    @classmethod
    def random(cls, rng, a, d_k, d_v, std=0.02, beta=1.0):
        return cls(
            rng.normal(0.0, std, (a, d_k)),
            rng.normal(0.0, std, (a, d_k)),
            rng.normal(0.0, std, (d_k, d_v)),
            beta,
        )

    def fingerprint(self):
        h = hashlib.sha1()
        for arr in (self.W_Q, self.W_K, self.W_V):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.beta).encode())
        return h.hexdigest()


@dataclass
class ForwardCache:
    R: np.ndarray
    Y: np.ndarray
    weights: AttentionWeights
    mode: str
    activation: str
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    logits: np.ndarray
    S: np.ndarray
    Z: np.ndarray
    fingerprint: str


def row_activation(A, activation="softmax1"):
    """Row-wise softmax (``softmax``) or softmax1 over the last axis."""
    if activation == "softmax":
        shift = A.max(axis=-1, keepdims=True)
        e = np.exp(A - shift)
        return e / e.sum(axis=-1, keepdims=True)
    if activation == "softmax1":
        shift = np.maximum(A.max(axis=-1, keepdims=True), 0.0)
        e = np.exp(A - shift)
        return e / (e.sum(axis=-1, keepdims=True) + np.exp(-shift))
    raise ValueError(f"unknown activation {activation!r}")


def _resolve_inputs(R, Y, w, mode):
    if mode not in MODES:
        raise ValueError(f"unknown layer mode {mode!r}")
    R = None if R is None else np.asarray(R, dtype=np.float64)
    Y = None if Y is None else np.asarray(Y, dtype=np.float64)
    if mode == MEMORY_RETRIEVAL:
        a = w.W_Q.shape[0]
        eye = np.eye(a)
        if w.W_Q.shape != (a, a) or w.W_V.shape != (a, a) or not all(
            np.array_equal(m, eye) for m in (w.W_Q, w.W_K, w.W_V)
        ):
            raise ValueError("memory-retrieval mode requires identity weights")
    elif mode == SELF:
        if Y is None:
            Y = R
        elif R is None:
            R = Y
        elif not np.array_equal(R, Y):
            raise ValueError("self mode requires R == Y")
    elif mode == LOOKUP:
        if Y is not None:
            raise ValueError("lookup mode has no Y input; the memory lives in W_K")
        Y = np.eye(w.W_K.shape[0])
    if R is None or Y is None:
        raise ValueError(f"mode {mode!r} needs both R and Y")
    if R.shape[-1] != w.W_Q.shape[0] or Y.shape[-1] != w.W_K.shape[0]:
        raise ValueError(
            f"input widths R:{R.shape[-1]} Y:{Y.shape[-1]} do not match weights "
            f"{w.W_Q.shape[0]}/{w.W_K.shape[0]}"
        )
    return R, Y


def outeffhop_forward(R, Y, w, mode=SELF, activation="softmax1", return_cache=False):
    """Apply the layer; returns ``Z`` (and the cache for the backward pass).

    ``pooling``: ``R`` is the learnable static query, ``Y`` the only data
    input.  ``lookup``: ``Y`` must be ``None`` and is replaced by the
    identity of size ``W_K.shape[0]`` (the memory slot count).
    """
    R, Y = _resolve_inputs(R, Y, w, mode)
    Q = R @ w.W_Q
    K = Y @ w.W_K
    V = K @ w.W_V
    logits = w.beta * (Q @ np.swapaxes(K, -1, -2))
    S = row_activation(logits, activation)
    Z = S @ V
    if not return_cache:
        return Z
    cache = ForwardCache(R, Y, w, mode, activation, Q, K, V, logits, S, Z, w.fingerprint())
    return Z, cache


def outeffhop_backward(cache, dZ):
    """Gradients of ``sum(dZ * Z)`` w.r.t. ``W_Q, W_K, W_V, R, Y``.

    ``R`` and ``Y`` are reported as separate partials; in self mode the
    gradient of the shared input is their sum.
    """
    if not isinstance(cache, ForwardCache):
        raise ValueError("backward needs the cache returned by outeffhop_forward")
    if cache.weights.fingerprint() != cache.fingerprint:
        raise ValueError("stale cache: weights changed since the forward pass")
    dZ = np.asarray(dZ, dtype=np.float64)
    if dZ.shape != cache.Z.shape:
        raise ValueError(f"dZ shape {dZ.shape} does not match output shape {cache.Z.shape}")
    w = cache.weights
    S, V, K, Q = cache.S, cache.V, cache.K, cache.Q
    T = lambda a: np.swapaxes(a, -1, -2)  # noqa: E731

    dS = dZ @ T(V)
    dV = T(S) @ dZ
    # J = diag(s) - s s^T for both softmax and softmax1 rows
    dA = S * (dS - np.sum(S * dS, axis=-1, keepdims=True))
    dQ = w.beta * (dA @ K)
    dK = w.beta * (T(dA) @ Q) + dV @ w.W_V.T

    def _sum_batch(g):
        return g.reshape(-1, *g.shape[-2:]).sum(axis=0)

    return {
        "W_Q": _sum_batch(T(cache.R) @ dQ),
        "W_K": _sum_batch(T(cache.Y) @ dK),
        "W_V": _sum_batch(T(K) @ dV),
        "R": dQ @ w.W_Q.T,
        "Y": dK @ w.W_K.T,
    }


def grad_check(R, Y, w, mode=SELF, activation="softmax1", upstream=None, step=1e-5, rng=None):
    """Largest relative error between analytic and central-difference gradients.

    The scalar being differentiated is ``sum(upstream * Z)``.  For each
    parameter the error is ``max|fd - analytic| / max(max|analytic|, max|fd|)``
    (0 when both vanish).  Inputs that the mode fixes (identity ``Y`` in
    lookup, shared ``R``/``Y`` in self) are checked through the free one.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    Z, cache = outeffhop_forward(R, Y, w, mode, activation, return_cache=True)
    if upstream is None:
        upstream = rng.normal(size=Z.shape)
    grads = outeffhop_backward(cache, upstream)

    def loss(params):
        ww = AttentionWeights(params["W_Q"], params["W_K"], params["W_V"], w.beta)
        yy = params.get("Y", None) if mode not in (SELF, LOOKUP) else None
        rr = params["R"]
        return float(np.sum(upstream * outeffhop_forward(rr, yy, ww, mode, activation)))

    params = {"W_Q": w.W_Q.copy(), "W_K": w.W_K.copy(), "W_V": w.W_V.copy(), "R": cache.R.copy()}
    if mode not in (SELF, LOOKUP):
        params["Y"] = cache.Y.copy()
    analytic = dict(grads)
    if mode == SELF:
        analytic["R"] = grads["R"] + grads["Y"]
    if mode == MEMORY_RETRIEVAL:
        # weights are pinned to the identity in this mode
        for name in ("W_Q", "W_K", "W_V"):
            params.pop(name)
        fixed = {"W_Q": w.W_Q, "W_K": w.W_K, "W_V": w.W_V}
    else:
        fixed = {}

    worst = 0.0
    for name, value in params.items():
        fd = np.zeros_like(value)
        it = np.nditer(value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = value[idx]
            value[idx] = orig + step
            up = loss({**fixed, **params})
            value[idx] = orig - step
            down = loss({**fixed, **params})
            value[idx] = orig
            fd[idx] = (up - down) / (2.0 * step)
        an = analytic[name]
        scale = max(np.max(np.abs(an)), np.max(np.abs(fd)))
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(fd - an)) / scale))
    return worst


@dataclass(frozen=True)
class NoOpTaskConfig:
    """Toy sequence task mixing no-op and retrieval sequences.

    Token layout (width ``content_dim + 3``): content | delimiter | marker | bias.
    Token 0 is a delimiter; the rest carry Gaussian content.  In a no-op
    sequence the layer output must be zero (the residual stream keeps the
    input unchanged); in a retrieval sequence one marked token's content
    must be copied to every position.
    """

    seq_len: int = 8
    content_dim: int = 4
    key_dim: int = 8
    batch: int = 16
    steps: int = 2000
    lr: float = 1e-2
    init_std: float = 0.02
    beta: float = 1.0
    noop_fraction: float = 0.5
    seed: int = 0
    activation: str = "softmax1"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.seq_len < 2 or self.content_dim < 1 or self.key_dim < 1 or self.batch < 1:
            raise ValueError("task sizes must be positive (seq_len >= 2)")
        if not self.lr > 0 or not self.init_std > 0:
            raise ValueError("lr and init_std must be positive")
        if not 0.0 <= self.noop_fraction <= 1.0:
            raise ValueError("noop_fraction must lie in [0, 1]")
        if self.activation not in ("softmax", "softmax1"):
            raise ValueError(f"unknown activation {self.activation!r}")
        check_beta(self.beta)


@dataclass
class TrainingTrace:
    config: NoOpTaskConfig
    loss: np.ndarray
    logit_inf_norm: np.ndarray
    output_inf_norm: np.ndarray
    output_kurtosis: np.ndarray
    logit_kurtosis: np.ndarray = None
    weights: AttentionWeights = None

    COLUMNS = ("step", "loss", "logit_inf_norm", "output_inf_norm", "output_kurtosis")

    def __len__(self):
        return len(self.loss)

    def rows(self):
        for i in range(len(self)):
            yield (i + 1, float(self.loss[i]), float(self.logit_inf_norm[i]),
                   float(self.output_inf_norm[i]), float(self.output_kurtosis[i]))

    def to_csv(self, path=None):
        lines = [f"# seed: {self.config.seed}", f"# activation: {self.config.activation}",
                 ",".join(self.COLUMNS)]
        lines += [",".join(repr(v) for v in row) for row in self.rows()]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def make_noop_batch(rng, cfg):
    """Draw ``(Y, target)`` with shapes ``(B, L, c+3)`` and ``(B, L, c)``."""
    B, L, c = cfg.batch, cfg.seq_len, cfg.content_dim
    Y = np.zeros((B, L, c + 3))
    Y[:, 1:, :c] = rng.normal(size=(B, L - 1, c))
    Y[:, 0, c] = 1.0
    Y[:, :, c + 2] = 1.0
    noop = rng.random(B) < cfg.noop_fraction
    target_pos = rng.integers(1, L, size=B)
    T = np.zeros((B, L, c))
    for b in np.flatnonzero(~noop):
        Y[b, target_pos[b], c + 1] = 1.0
        T[b] = Y[b, target_pos[b], :c]
    return Y, T


def train_no_op_task(cfg=None):
    """Plain gradient descent on the toy task; records outlier metrics per step.

    Loss is the squared error summed over a sequence and averaged over the
    batch.  Metrics are taken on the forward pass of each step, before the
    update.  Raises :class:`NumericalError` with the step index if the loss
    goes non-finite.
    """
    from .errors import NumericalError
    from .quant import DegenerateInputError, kurtosis

    cfg = cfg or NoOpTaskConfig()
    rng = np.random.default_rng(cfg.seed)
    c = cfg.content_dim
    w = AttentionWeights.random(rng, c + 3, cfg.key_dim, c, std=cfg.init_std, beta=cfg.beta)
    loss = np.empty(cfg.steps)
    logit_inf = np.empty(cfg.steps)
    out_inf = np.empty(cfg.steps)
    kurt = np.empty(cfg.steps)
    logit_kurt = np.empty(cfg.steps)
    for step in range(cfg.steps):
        Y, T = make_noop_batch(rng, cfg)
        Z, cache = outeffhop_forward(Y, None, w, SELF, cfg.activation, return_cache=True)
        diff = Z - T
        loss[step] = np.sum(diff * diff) / cfg.batch
        if not np.isfinite(loss[step]):
            raise NumericalError(f"loss diverged at step {step + 1}", index=step + 1)
        logit_inf[step] = np.max(np.abs(cache.logits))
        out_inf[step] = np.max(np.abs(Z))
        for arr, t in ((kurt, Z), (logit_kurt, cache.logits)):
            try:
                arr[step] = kurtosis(t)
            except DegenerateInputError:
                arr[step] = np.nan
        g = outeffhop_backward(cache, 2.0 * diff / cfg.batch)
        w = AttentionWeights(w.W_Q - cfg.lr * g["W_Q"], w.W_K - cfg.lr * g["W_K"],
                             w.W_V - cfg.lr * g["W_V"], w.beta)
    return TrainingTrace(cfg, loss, logit_inf, out_inf, kurt, logit_kurt, w)
