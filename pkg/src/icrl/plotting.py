"""Static line charts for metric curves (shaded standard-error bands)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricSeries

__all__ = ["plot_series"]

_YLABELS = {
    "suboptimality_vs_horizon": "suboptimality",
    "return_vs_horizon": "return",
    "cumulative_regret_vs_step": "cumulative regret",
    "return_vs_episode": "return",
}

_XLABELS = {
    "suboptimality_vs_horizon": "context horizon",
    "return_vs_horizon": "context horizon",
    "cumulative_regret_vs_step": "step",
    "return_vs_episode": "episode",
}


def plot_series(series_list: list[MetricSeries], path: str, title: str = "") -> None:
    """Draw one or more curves of the same kind into a PNG file."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in series_list:
        label = s.method or s.family or s.kind
        if len({x.method for x in series_list}) <= 1 and any(x.seed != s.seed for x in series_list):
            label = f"{label} seed={s.seed}"
        (line,) = ax.plot(s.x, s.mean, label=label)
        ax.fill_between(s.x, s.mean - s.std_err, s.mean + s.std_err, alpha=0.2, color=line.get_color())
    kind = series_list[0].kind if series_list else ""
    ax.set_xlabel(_XLABELS.get(kind, "x"))
    ax.set_ylabel(_YLABELS.get(kind, "value"))
    if title:
        ax.set_title(title)
    if series_list:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
