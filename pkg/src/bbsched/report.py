"""Report figures rendered next to the delimited output.

Two figures per experiment: a cost-nervousness scatter per scenario (periodic
frequencies annotated, reference costs as vertical lines) and a stacked bar
chart of per-phase solver time by policy.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_experiment_figures(rows, csv_path: Path) -> list[Path]:
    rows = [r for r in rows if not r.error and not math.isnan(r.c)]
    if not rows:
        return []
    out: list[Path] = []
    stem = csv_path.with_suffix("")
    out.append(_scatter_figure(rows, Path(f"{stem}_scatter.png")))
    out.append(_time_figure(rows, Path(f"{stem}_times.png")))
    return out


def _scatter_figure(rows, path: Path) -> Path:
    seeds = sorted({r.scenario_seed for r in rows})
    ncols = min(3, len(seeds))
    nrows = (len(seeds) + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.2 * ncols, 3.4 * nrows), squeeze=False
    )
    for ax in axes.flat:
        ax.set_visible(False)
    for idx, seed in enumerate(seeds):
        ax = axes[idx // ncols][idx % ncols]
        ax.set_visible(True)
        sub = [r for r in rows if r.scenario_seed == seed]
        periodic = [r for r in sub if r.policy.startswith("periodic")]
        bayes = [r for r in sub if r.policy == "bayes"]
        if periodic:
            ax.scatter(
                [r.c for r in periodic], [r.d for r in periodic],
                c="tan", label="periodic", zorder=3,
            )
            for r in periodic:
                ax.annotate(
                    r.policy.split(":")[1], (r.c, r.d),
                    textcoords="offset points", xytext=(4, 4), fontsize=8,
                )
        if bayes:
            ax.scatter(
                [r.c for r in bayes], [r.d for r in bayes],
                c="yellowgreen", label="bayes", zorder=4,
            )
        ax.axvline(sub[0].c_star, color="lightblue", label="nominal $c^*$")
        ax.axvline(sub[0].c_oracle, color="pink", label="oracle $c^\\infty$")
        ax.set_title(f"{sub[0].example}, seed {seed}", fontsize=10)
        ax.set_xlabel("cumulative cost c")
        ax.set_ylabel("nervousness d")
        if idx == 0:
            ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path


def _time_figure(rows, path: Path) -> Path:
    policies = sorted({r.policy for r in rows})
    milp = []
    mc = []
    inference = []
    for p in policies:
        sub = [r for r in rows if r.policy == p]
        milp.append(sum(r.wall_ms_milp for r in sub) / len(sub) / 1e3)
        mc.append(sum(r.wall_ms_mc for r in sub) / len(sub) / 1e3)
        inference.append(sum(r.wall_ms_inference for r in sub) / len(sub) / 1e3)
    fig, ax = plt.subplots(figsize=(1.2 * len(policies) + 3, 3.4))
    xs = range(len(policies))
    ax.bar(xs, milp, label="MILP", color="steelblue")
    ax.bar(xs, mc, bottom=milp, label="Monte Carlo", color="darkseagreen")
    bottom2 = [a + b for a, b in zip(milp, mc)]
    ax.bar(xs, inference, bottom=bottom2, label="inference", color="goldenrod")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(policies, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean wall time per run [s]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path
