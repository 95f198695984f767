"""Report figures rendered to PNG files beside the delimited outputs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .schedule import Stage  # noqa: E402

_STAGE_COLORS = {
    Stage.WARM_UP.value: "#cfe8cf",
    Stage.TRANSITION.value: "#fdeebe",
    Stage.STABLE.value: "#cfd8e8",
}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def schedule_figure(
    thetas: Sequence[float],
    fractions: Sequence[float],
    budgets: Sequence[int],
    stages: Sequence[str],
    path,
) -> None:
    """Budget curve over training progress with stage bands shaded."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(thetas, budgets, color="#2b5d8a", lw=2, label="active budget")
    start = 0
    for i in range(1, len(stages) + 1):
        if i == len(stages) or stages[i] != stages[start]:
            ax.axvspan(
                thetas[start],
                thetas[i - 1],
                color=_STAGE_COLORS.get(stages[start], "#eeeeee"),
                alpha=0.6,
                lw=0,
            )
            start = i
    twin = ax.twinx()
    twin.plot(thetas, fractions, color="#a04040", lw=1.2, ls="--", label="retained fraction")
    twin.set_ylabel("retained fraction")
    twin.set_ylim(0, 1.05)
    ax.set_xlabel("training state")
    ax.set_ylabel("proposals in active set")
    ax.set_title("Active proposal budget over training")
    _save(fig, path)


def training_figure(log_rows: Sequence[dict], path) -> None:
    """Active-set size and loss curves from a training log."""
    steps = [row["step"] for row in log_rows]
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    top.plot(steps, [row["active_size"] for row in log_rows], color="#2b5d8a", lw=1.5)
    top.set_ylabel("active proposals")
    top.set_title("Active-set size and losses")
    bottom.plot(steps, [row["loss_base"] for row in log_rows], label="base", lw=1.2)
    bottom.plot(steps, [row["loss_refine"] for row in log_rows], label="refinement", lw=1.2)
    bottom.plot(steps, [row["loss_total"] for row in log_rows], label="total", lw=1.2)
    bottom.set_xlabel("step")
    bottom.set_ylabel("loss")
    bottom.legend()
    _save(fig, path)


def ratio_figure(ratios: Sequence[float], mean_maps: Sequence[float], path) -> None:
    """Mean test mAP as a function of the positive:negative training ratio."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(ratios, mean_maps, marker="o", color="#2b5d8a")
    ax.set_xlabel("positive:negative ratio")
    ax.set_ylabel("mean test mAP")
    ax.set_title("Accuracy vs training proposal balance")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)
