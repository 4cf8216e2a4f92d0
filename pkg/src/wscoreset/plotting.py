"""Figures for experiment reports (rendered off-screen to PNG bytes)."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (8, 3.4),
    "svg.hashsalt": "wscoreset",
}

STYLE = {
    "ours-fair": dict(color="#1b6ca8", marker="o"),
    "ours-unconstrained": dict(color="#2e8b57", marker="s"),
    "uniform-baseline": dict(color="#c0392b", marker="^"),
}


def plot_relative_cost(rows) -> bytes:
    """Relative cost against k for each method, plain and fair objectives side by side."""
    methods = sorted({r["method"] for r in rows})
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, sharey=False)
        for ax, key, title in zip(axes, ("plain", "fair"), ("k-median cost", "fair k-median cost")):
            for m in methods:
                pts = sorted((r["k"], r[f"{key}_mean"], r[f"{key}_stderr"]) for r in rows if r["method"] == m)
                ks = [p[0] for p in pts]
                ax.errorbar(ks, [p[1] for p in pts], yerr=[p[2] for p in pts], label=m, capsize=3,
                            linewidth=1.2, markersize=4, **STYLE.get(m, {}))
            ax.set_xlabel("k")
            ax.set_ylabel("relative cost")
            ax.set_title(title)
            ax.set_ylim(bottom=0)
        axes[0].legend(frameon=False)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
        plt.close(fig)
    return buf.getvalue()
