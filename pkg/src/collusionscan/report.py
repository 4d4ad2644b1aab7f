"""Matrix figures rendered alongside the delimited output.

Two plots: the filter's collusion matrix as a categorical grid (threat
codes per cell, false positives indistinguishable here because the
filter itself cannot tell), and the pairwise score matrix as an
upper-triangular heatmap of L_tau values with colluding verdicts
outlined.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .app_model import ThreatKind
from .bayes import ScoreReport, Verdict
from .rule_engine import CollusionMatrix

_THREAT_COLORS = {
    frozenset({ThreatKind.InformationTheft}): "#c0392b",
    frozenset({ThreatKind.MoneyTheft}): "#e67e22",
    frozenset({ThreatKind.ServiceMisuse}): "#2980b9",
}
_MIXED_COLOR = "#8e44ad"
_EMPTY_COLOR = "#f4f4f4"


def render_collusion_matrix(matrix: CollusionMatrix, path: str) -> None:
    apps = matrix.apps
    n = len(apps)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * n + 1.5),) * 2)
    for i, src in enumerate(apps):
        for j, dst in enumerate(apps):
            threats = matrix.threats(src, dst) if src != dst else frozenset()
            color = _EMPTY_COLOR
            label = ""
            if threats:
                color = _THREAT_COLORS.get(frozenset(threats), _MIXED_COLOR)
                label = ";".join(sorted(t.code for t in threats))
            ax.add_patch(Rectangle((j, n - 1 - i), 1, 1, facecolor=color, edgecolor="white"))
            if label:
                ax.text(j + 0.5, n - 0.5 - i, label, ha="center", va="center",
                        fontsize=7, color="white")
            if src == dst:
                ax.add_patch(Rectangle((j, n - 1 - i), 1, 1, facecolor="#d9d9d9",
                                       edgecolor="white"))
    ax.set_xlim(0, n)
    ax.set_ylim(0, n)
    ax.set_xticks([k + 0.5 for k in range(n)])
    ax.set_xticklabels(apps, fontsize=8)
    ax.set_yticks([k + 0.5 for k in range(n)])
    ax.set_yticklabels(list(reversed(apps)), fontsize=8)
    ax.xaxis.tick_top()
    ax.set_xlabel("destination app")
    ax.set_ylabel("source app")
    ax.set_title("Collusion matrix (rule filter)", pad=24)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_score_matrix(
    apps: Sequence[str],
    reports: Mapping[tuple[str, str], ScoreReport],
    path: str,
    threshold: Optional[float] = None,
) -> None:
    n = len(apps)
    index = {app: k for k, app in enumerate(apps)}
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * n + 1.5),) * 2)
    cmap = plt.get_cmap("YlOrRd")
    for (a, b), report in reports.items():
        i, j = sorted((index[a], index[b]))
        color = cmap(report.l_tau)
        edge = "black" if report.verdict is Verdict.Colluding else "white"
        width = 1.6 if report.verdict is Verdict.Colluding else 0.5
        ax.add_patch(Rectangle((j, n - 1 - i), 1, 1, facecolor=color,
                               edgecolor=edge, linewidth=width))
        ax.text(j + 0.5, n - 0.5 - i, f"{report.l_tau:.2f}", ha="center",
                va="center", fontsize=7)
    ax.set_xlim(0, n)
    ax.set_ylim(0, n)
    ax.set_xticks([k + 0.5 for k in range(n)])
    ax.set_xticklabels(apps, fontsize=8)
    ax.set_yticks([k + 0.5 for k in range(n)])
    ax.set_yticklabels(list(reversed(apps)), fontsize=8)
    ax.xaxis.tick_top()
    title = "Pairwise L_tau"
    if threshold is not None:
        title += f" (threshold {threshold:g}, colluding pairs outlined)"
    ax.set_title(title, pad=24)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
