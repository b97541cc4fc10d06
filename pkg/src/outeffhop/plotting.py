"""Render result tables to PNG next to their CSV.

Uses the non-interactive Agg backend and strips PNG metadata so the same
table always produces the same bytes.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "svg.hashsalt": "oeh",
}


def _groups(table, key_cols):
    idx = [table.columns.index(c) for c in key_cols]
    out = {}
    for row in table.rows:
        out.setdefault(tuple(row[i] for i in idx), []).append(row)
    return out


def _col(rows, table, name):
    i = table.columns.index(name)
    return np.array([r[i] for r in rows], dtype=float)


def _capacity(ax, table):
    for (v, d), rows in _groups(table, ("variant", "d")).items():
        ax.plot(_col(rows, table, "M"), _col(rows, table, "success_rate"), marker="o", ms=3,
                label=f"{v}, d={d}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("stored patterns M")
    ax.set_ylabel("retrieval success rate")
    ax.set_ylim(-0.03, 1.03)


def _noise(ax, table):
    for (v, d, M), rows in _groups(table, ("variant", "d", "M")).items():
        ax.plot(_col(rows, table, "sigma"), _col(rows, table, "error_rate"), marker="o", ms=3,
                label=f"{v}, d={d}, M={M}")
    ax.set_xlabel("query noise sigma")
    ax.set_ylabel("error rate")


def _error_compare(ax, table):
    prem = _col(table.rows, table, "premise").astype(bool)
    dense = _col(table.rows, table, "err_dense")
    out = _col(table.rows, table, "err_outeff")
    ax.scatter(dense[prem], out[prem], s=4, label="premise true")
    ax.scatter(dense[~prem], out[~prem], s=4, label="premise false")
    top = max(dense.max(), out.max())
    ax.plot([0, top], [0, top], color="k", lw=0.8)
    ax.set_xlabel("softmax one-step error")
    ax.set_ylabel("softmax1 one-step error")


def _convergence(ax, table):
    if "mean_iterations" not in table.columns:
        for name in table.columns[1:]:
            ax.plot(_col(table.rows, table, "step"), _col(table.rows, table, name), label=name)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        return
    for (d, M), rows in _groups(table, ("d", "M")).items():
        labels = [r[0] for r in rows]
        ax.plot(labels, _col(rows, table, "mean_iterations"), marker="o", label=f"d={d}, M={M}")
    ax.set_ylabel("mean iterations to fixed point")


def _outlier_trace(ax, table):
    rows = [r for r in table.rows if r[0] == 0]
    for name in table.columns:
        if name.startswith("inf_norm_"):
            ax.plot(_col(rows, table, "step"), _col(rows, table, name), label=name[len("inf_norm_"):])
    ax.set_xlabel("training step")
    ax.set_ylabel("max |logit|")


_DRAW = {
    "capacity": _capacity,
    "noise": _noise,
    "error-compare": _error_compare,
    "convergence": _convergence,
    "outlier-trace": _outlier_trace,
}


def figure_path(csv_path):
    p = str(csv_path)
    return (p[:-4] if p.endswith(".csv") else p) + ".png"


def render(table, path):
    """Draw ``table`` according to its ``experiment`` metadata and save a PNG."""
    kind = table.metadata["experiment"]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        _DRAW[kind](ax, table)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)
    return path
