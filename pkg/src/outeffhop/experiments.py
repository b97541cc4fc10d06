"""Desk-scale experiment harness: synthetic patterns, retrieval sweeps,
error-comparison and bound checks, convergence counts and toy-training outlier traces.

Every sweep is split into independent *units* (one pattern set each).  Unit
``i`` draws from ``SeedSequence([seed, i])``, so units can run in any order
or in parallel and the assembled table is the same.
"""

import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .hopfield import (
    OUTLIER_EFFICIENT,
    RetrievalConfig,
    Variant,
    as_memory,
    gamma,
    gamma_closed_form,
    retrieve_batch,
    retrieve_step,
    separation_delta_tilde,
    sphere_radius,
)
from .layers import NoOpTaskConfig, train_no_op_task
from .theory import retrieval_error_upper_bound

KINDS = ("capacity", "noise", "error-compare", "convergence", "outlier-trace")

_DEFAULTS = {
    "capacity": dict(d=[32, 64], M=[2**k for k in range(1, 13)], variants=["dense", "outeff"], beta=1.4),
    "noise": dict(d=[32], M=[64], noise_sigma=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
                  variants=["dense", "outeff"]),
    "error-compare": dict(d=[8, 16, 32], M=[2, 4, 8, 16], trials=2000, radius=1.0,
                          beta=[0.1, 1.0, 10.0]),
    "convergence": dict(d=[32], M=[1, 16, 64], variants=["dense", "outeff", "sparse", "poly:10"]),
    "outlier-trace": dict(trials=1),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one experiment.  ``beta`` may be a list only for
    ``error-compare``, where instances cycle through it."""

    experiment: str
    variants: list = field(default_factory=lambda: ["dense", "outeff"])
    d: list = field(default_factory=lambda: [32])
    M: list = field(default_factory=lambda: [16])
    beta: object = 1.0
    trials: int = 1
    queries: int = 32
    radius: float = 3.0
    pattern_set: str = "sphere"
    cluster_spread: float = 0.3
    patterns_file: str = None
    query_sigma: float = 0.05  # capacity queries: per-coordinate std as a fraction of radius
    noise_sigma: list = field(default_factory=lambda: [0.0])
    epsilon: float = None  # None -> half the minimum pairwise pattern distance
    max_iters: int = 100
    tol: float = 1e-8
    seed: int = 0
    jobs: int = 1
    output: str = None
    stats_tensor: str = "output"
    error_query: str = "normalized"
    training: dict = field(default_factory=dict)
    training_activations: list = field(default_factory=lambda: ["softmax", "softmax1"])

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1 or self.queries < 1 or self.jobs < 1:
            raise ValueError("trials, queries and jobs must be >= 1")
        if not self.d or not self.M or not self.variants or not self.noise_sigma:
            raise ValueError("d, M, variants and noise_sigma must be nonempty")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned value")
        if self.pattern_set not in ("sphere", "clustered"):
            raise ValueError(f"unknown pattern_set {self.pattern_set!r}")
        if self.error_query not in ("normalized", "in-sphere"):
            raise ValueError("error_query must be 'normalized' or 'in-sphere'")
        if self.stats_tensor not in ("output", "logits"):
            raise ValueError("stats_tensor must be 'output' or 'logits'")
        for v in self.variants:
            Variant.parse(v)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kind = data.get("experiment")
        merged = {**_DEFAULTS.get(kind, {}), **data}
        known = {f.name for f in fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**merged)

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        d = self.to_dict()
        d.pop("output", None)
        d.pop("jobs", None)  # never changes the result
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def retrieval(self, beta=None):
        return RetrievalConfig(beta=self.beta if beta is None else beta,
                               max_iters=self.max_iters, tol=self.tol)


@dataclass
class ResultTable:
    columns: list
    rows: list
    metadata: dict

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("ragged result table")

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, path=None):
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}: {self.metadata[key]}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def read_table_metadata(path):
    """Metadata lines (``# key: value``) from the top of a result CSV."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = value
    return meta


def config_from_table(path):
    """Rebuild the :class:`ExperimentConfig` embedded in a result CSV."""
    meta = read_table_metadata(path)
    if "config" not in meta:
        raise ValueError(f"{path} carries no embedded config")
    return ExperimentConfig.from_dict(json.loads(meta["config"]))


def _table(cfg, columns, rows, **extra):
    meta = {
        "config": cfg.canonical_json(),
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "tool_version": __version__,
    }
    meta.update(extra)
    return ResultTable(list(columns), rows, meta)


# ---------------------------------------------------------------- patterns

def generate_sphere_patterns(M, d, m, seed):
    """``(d, M)`` matrix of independent uniform draws on the radius-``m`` sphere."""
    if M < 1 or d < 1:
        raise ValueError("M and d must be >= 1")
    if not m > 0:
        raise ValueError("radius must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.normal(size=(d, M))
    norms = np.linalg.norm(X, axis=0)
    while np.any(norms == 0):  # practically unreachable
        bad = norms == 0
        X[:, bad] = rng.normal(size=(d, int(bad.sum())))
        norms = np.linalg.norm(X, axis=0)
    return X * (m / norms)


def generate_clustered_patterns(M, d, m, spread, rng):
    """High-similarity set: sphere points scattered around one random centre."""
    centre = generate_sphere_patterns(1, d, 1.0, rng)
    X = centre + spread * rng.normal(size=(d, M)) / np.sqrt(d)
    return X * (m / np.linalg.norm(X, axis=0))


def _unit_rng(cfg, index):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))


def _patterns(cfg, M, d, rng):
    if cfg.patterns_file:
        from .patternio import load_patterns

        xi = load_patterns(cfg.patterns_file)
        if M > xi.shape[1]:
            raise ValueError(f"pattern file holds {xi.shape[1]} patterns, {M} requested")
        return xi[:, rng.choice(xi.shape[1], size=M, replace=False)]
    if cfg.pattern_set == "clustered":
        return generate_clustered_patterns(M, d, cfg.radius, cfg.cluster_spread, rng)
    return generate_sphere_patterns(M, d, cfg.radius, rng)


def _dims(cfg):
    if cfg.patterns_file:
        from .patternio import load_patterns

        return [load_patterns(cfg.patterns_file).shape[0]]
    return list(cfg.d)


def _map(fn, cfg, units):
    if cfg.jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(fn, [cfg] * len(units), units))
    return [fn(cfg, u) for u in units]


def _epsilon(cfg, xi):
    if cfg.epsilon is not None:
        return float(cfg.epsilon)
    r = sphere_radius(xi)
    return r if np.isfinite(r) else float(np.linalg.norm(xi))


def _success(final, targets, eps):
    return np.linalg.norm(final - targets, axis=0) <= eps


# ---------------------------------------------------------------- capacity

def _capacity_unit(cfg, unit):
    index, d, M, trial = unit
    rng = _unit_rng(cfg, index)
    xi = _patterns(cfg, M, d, rng)
    eps = _epsilon(cfg, xi)
    idx = rng.choice(M, size=min(M, cfg.queries), replace=False)
    scale = cfg.query_sigma * float(np.linalg.norm(xi, axis=0).max())
    queries = xi[:, idx] + scale * rng.normal(size=(d, len(idx)))
    out = []
    for v in cfg.variants:
        final, iters, conv = retrieve_batch(v, xi, queries, cfg.retrieval())
        out.append((str(Variant.parse(v)), d, M, trial, float(_success(final, xi[:, idx], eps).mean()),
                    float(np.mean(iters)), eps))
    return out


def _units(cfg):
    units = []
    for d in _dims(cfg):
        for M in cfg.M:
            for trial in range(cfg.trials):
                units.append((len(units), d, M, trial))
    return units


def run_capacity_sweep(cfg):
    """Success rate of retrieving ``xi_mu`` from ``xi_mu + noise`` per (variant, d, M)."""
    per_unit = _map(_capacity_unit, cfg, _units(cfg))
    rows = [r for unit in per_unit for r in unit]
    agg = {}
    for v, d, M, _trial, rate, iters, eps in rows:
        agg.setdefault((v, d, M), []).append((rate, iters, eps))
    order = {str(Variant.parse(v)): i for i, v in enumerate(cfg.variants)}
    out = []
    for (v, d, M), vals in sorted(agg.items(), key=lambda kv: (order[kv[0][0]], kv[0][1], kv[0][2])):
        a = np.array(vals)
        out.append((v, d, M, len(vals), float(a[:, 0].mean()), float(a[:, 1].mean()), float(a[:, 2].mean())))
    return _table(cfg, ("variant", "d", "M", "trials", "success_rate", "mean_iterations", "epsilon"), out,
                  epsilon_rule="fixed" if cfg.epsilon is not None else "half min pairwise distance")


# ---------------------------------------------------------------- noise

def _noise_unit(cfg, unit):
    index, d, M, trial = unit
    rng = _unit_rng(cfg, index)
    xi = _patterns(cfg, M, d, rng)
    eps = _epsilon(cfg, xi)
    idx = rng.choice(M, size=min(M, cfg.queries), replace=False)
    base = rng.normal(size=(d, len(idx)))  # common noise direction across sigma (paired)
    out = []
    for sigma in cfg.noise_sigma:
        queries = xi[:, idx] + sigma * base
        for v in cfg.variants:
            final, _, _ = retrieve_batch(v, xi, queries, cfg.retrieval())
            ok = _success(final, xi[:, idx], eps)
            out.append((str(Variant.parse(v)), d, M, float(sigma), trial, 1.0 - float(ok.mean())))
    return out


def run_noise_sweep(cfg):
    """Error rate (``1 - success rate``) per (variant, d, M, sigma)."""
    per_unit = _map(_noise_unit, cfg, _units(cfg))
    agg = {}
    for unit in per_unit:
        for v, d, M, sigma, _trial, err in unit:
            agg.setdefault((v, d, M, sigma), []).append(err)
    order = {str(Variant.parse(v)): i for i, v in enumerate(cfg.variants)}
    rows = [(v, d, M, s, len(e), float(np.mean(e)))
            for (v, d, M, s), e in sorted(agg.items(), key=lambda kv: (order[kv[0][0]],) + kv[0][1:])]
    return _table(cfg, ("variant", "d", "M", "sigma", "trials", "error_rate"), rows,
                  error_rate="1 - fraction of queries retrieved within epsilon")


# ---------------------------------------------------------------- error comparison

def error_compare_instance(rng, d, M, beta, query="normalized"):
    """One unit-pattern instance comparing softmax1 and softmax one-step errors.

    ``query="normalized"``: a unit query near a random pattern.
    ``query="in-sphere"``: a query drawn uniformly from the ball of radius
    ``R`` (half the minimum pattern distance) around the pattern.
    Returns a dict with gamma (two ways), cos(alpha) between the softmax
    output and the target, both errors, the premise flags and the one-step
    error bounds.
    """
    xi = generate_sphere_patterns(M, d, 1.0, rng)
    mu = int(rng.integers(M))
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    if query == "in-sphere":
        R = sphere_radius(xi) if M > 1 else 1.0
        x = xi[:, mu] + R * rng.uniform() ** (1.0 / d) * u
    else:
        x = xi[:, mu] + rng.uniform(0.0, 1.0) * u
        x /= np.linalg.norm(x)
    t_dense = retrieve_step("dense", xi, x, beta)
    t_out = retrieve_step(OUTLIER_EFFICIENT, xi, x, beta)
    err_dense = float(np.linalg.norm(t_dense - xi[:, mu]))
    err_out = float(np.linalg.norm(t_out - xi[:, mu]))
    g_sum = gamma(xi, x, beta)
    g_closed = gamma_closed_form(xi, x, beta)
    n_dense = float(np.linalg.norm(t_dense))
    cos_alpha = float(t_dense @ xi[:, mu] / n_dense)
    rec = dict(d=d, M=M, beta=beta, mu=mu, gamma=g_sum, gamma_closed=g_closed, cos_alpha=cos_alpha,
               dense_norm=n_dense, err_outeff=err_out, err_dense=err_dense,
               premise=(g_sum + 1.0) / 2.0 >= cos_alpha,
               premise_with_norm=(g_sum + 1.0) * n_dense / 2.0 >= cos_alpha,
               holds=err_out <= err_dense)
    if M >= 2:
        dt = separation_delta_tilde(xi, x, mu)
        delta = -np.log(g_sum) / beta
        rec["delta_tilde"] = dt
        rec["bound_dense"] = retrieval_error_upper_bound("dense", 1.0, M, dt, beta)
        rec["bound_outeff"] = retrieval_error_upper_bound("outeff", 1.0, M, dt, beta, delta)
    return rec


def _error_unit(cfg, unit):
    index, = unit
    rng = _unit_rng(cfg, index)
    dims, Ms = _dims(cfg), list(cfg.M)
    betas = cfg.beta if isinstance(cfg.beta, list) else [cfg.beta]
    d = dims[index % len(dims)]
    M = Ms[(index // len(dims)) % len(Ms)]
    beta = float(betas[(index // (len(dims) * len(Ms))) % len(betas)])
    return error_compare_instance(rng, d, M, beta, cfg.error_query)


def run_retrieval_error_compare(cfg):
    """Per-instance comparison of softmax1 vs softmax one-step errors.

    Metadata reports the premise-true count, the violations among them, the
    premise-false count (never asserted on), the same under the norm-aware
    premise, and violations of the one-step error bounds.
    """
    recs = _map(_error_unit, cfg, [(i,) for i in range(cfg.trials)])
    cols = ("trial", "d", "M", "beta", "gamma", "gamma_closed", "cos_alpha", "dense_norm",
            "err_outeff", "err_dense", "premise", "premise_with_norm", "holds",
            "bound_outeff", "bound_dense")
    rows = []
    for i, r in enumerate(recs):
        rows.append((i, r["d"], r["M"], r["beta"], r["gamma"], r["gamma_closed"], r["cos_alpha"],
                     r["dense_norm"], r["err_outeff"], r["err_dense"], r["premise"],
                     r["premise_with_norm"], r["holds"], r.get("bound_outeff", float("nan")),
                     r.get("bound_dense", float("nan"))))
    stats = summarize_error_compare(recs)
    return _table(cfg, cols, rows, **stats)


def summarize_error_compare(recs):
    prem = [r for r in recs if r["premise"]]
    prem_n = [r for r in recs if r["premise_with_norm"]]
    bounded = [r for r in recs if "bound_outeff" in r]
    return {
        "premise_true": len(prem),
        "premise_false": len(recs) - len(prem),
        "violations": sum(not r["holds"] for r in prem),
        "premise_with_norm_true": len(prem_n),
        "violations_with_norm": sum(not r["holds"] for r in prem_n),
        "bound_outeff_violations": sum(r["err_outeff"] > r["bound_outeff"] for r in bounded),
        "bound_dense_violations": sum(r["err_dense"] > r["bound_dense"] for r in bounded),
        "max_gamma_disagreement": max((abs(r["gamma"] - r["gamma_closed"]) for r in recs), default=0.0),
    }


# ---------------------------------------------------------------- convergence

def _convergence_unit(cfg, unit):
    index, d, M, trial = unit
    rng = _unit_rng(cfg, index)
    xi = _patterns(cfg, M, d, rng)
    idx = rng.choice(M, size=min(M, cfg.queries), replace=False)
    scale = cfg.query_sigma * float(np.linalg.norm(xi, axis=0).max())
    queries = xi[:, idx] + scale * rng.normal(size=(d, len(idx)))
    out = []
    for v in cfg.variants:
        _, iters, conv = retrieve_batch(v, xi, queries, cfg.retrieval())
        out.append((str(Variant.parse(v)), d, M, trial, float(iters.mean()), float(conv.mean())))
    return out


def run_convergence_compare(cfg):
    """Mean iterations to the fixed point per (variant, d, M) on shared queries.

    With a nonempty ``training`` section the second return value is a
    paired loss-curve table (one column per activation); otherwise None.
    """
    per_unit = _map(_convergence_unit, cfg, _units(cfg))
    agg = {}
    for unit in per_unit:
        for v, d, M, _t, it, conv in unit:
            agg.setdefault((v, d, M), []).append((it, conv))
    order = {str(Variant.parse(v)): i for i, v in enumerate(cfg.variants)}
    rows = []
    for (v, d, M), vals in sorted(agg.items(), key=lambda kv: (order[kv[0][0]],) + kv[0][1:]):
        a = np.array(vals)
        rows.append((v, d, M, len(vals), float(a[:, 0].mean()), float(a[:, 1].mean())))
    table = _table(cfg, ("variant", "d", "M", "trials", "mean_iterations", "converged_fraction"), rows)
    curves = None
    if cfg.training:
        traces = _train_pair(cfg, cfg.seed)
        cols = ["step"] + [f"loss_{a}" for a in cfg.training_activations]
        n = len(next(iter(traces.values())))
        crow = [(i + 1, *(float(traces[a].loss[i]) for a in cfg.training_activations)) for i in range(n)]
        curves = _table(cfg, cols, crow)
    return table, curves


# ---------------------------------------------------------------- outlier trace

def _task_config(cfg, seed, activation):
    opts = {k: v for k, v in cfg.training.items() if k not in ("seed", "activation")}
    return NoOpTaskConfig(seed=seed, activation=activation, **opts)


def _train_pair(cfg, seed):
    return {a: train_no_op_task(_task_config(cfg, seed, a)) for a in cfg.training_activations}


def _trace_unit(cfg, unit):
    trial, = unit
    seed = int(np.random.SeedSequence([cfg.seed, trial]).generate_state(1, np.uint64)[0])
    return _train_pair(cfg, seed), seed


def run_outlier_trace(cfg):
    """Paired softmax / softmax1 toy-training traces.

    ``inf_norm_*`` is the logit max-abs; ``kurtosis_*`` is measured on the
    tensor chosen by ``stats_tensor`` (layer output or logits).  With
    ``trials > 1`` the traces are stacked with a ``trial`` column.
    """
    results = _map(_trace_unit, cfg, [(t,) for t in range(cfg.trials)])
    acts = cfg.training_activations
    cols = ["trial", "seed", "step"]
    for name in ("loss", "inf_norm", "output_inf_norm", "kurtosis"):
        cols += [f"{name}_{a}" for a in acts]
    rows = []
    for trial, (traces, seed) in enumerate(results):
        for i in range(len(traces[acts[0]])):
            row = [trial, seed, i + 1]
            row += [float(traces[a].loss[i]) for a in acts]
            row += [float(traces[a].logit_inf_norm[i]) for a in acts]
            row += [float(traces[a].output_inf_norm[i]) for a in acts]
            if cfg.stats_tensor == "output":
                row += [float(traces[a].output_kurtosis[i]) for a in acts]
            else:
                row += [float(traces[a].logit_kurtosis[i]) for a in acts]
            rows.append(tuple(row))
    return _table(cfg, cols, rows, inf_norm="max |logit| per step", kurtosis_tensor=cfg.stats_tensor)


RUNNERS = {
    "capacity": run_capacity_sweep,
    "noise": run_noise_sweep,
    "error-compare": run_retrieval_error_compare,
    "convergence": run_convergence_compare,
    "outlier-trace": run_outlier_trace,
}


def run_experiment(cfg):
    """Dispatch on ``cfg.experiment``; always returns a list of tables."""
    out = RUNNERS[cfg.experiment](cfg)
    if isinstance(out, tuple):
        return [t for t in out if t is not None]
    return [out]


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
