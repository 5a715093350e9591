"""Report figures written alongside the CSV outputs.

Every CLI report path saves one PNG next to its delimited file: the training
loss curve, per-measure histograms for evaluation reports, and per-round
curves for breeding runs.  Figures carry no volatile metadata so reruns are
byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_DPI = 110
_META = {"Software": None}  # drop the version string for reproducible bytes


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)


def loss_curve(trace, path) -> None:
    """trace rows are (iteration, windowed mean loss)."""
    fig, ax = plt.subplots(figsize=(6, 3.6), constrained_layout=True)
    if trace:
        its = [r[0] for r in trace]
        losses = [r[1] for r in trace]
        ax.plot(its, losses, lw=1.2)
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss (100-iter mean)")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def eval_histograms(report, path) -> None:
    measures = ("weighted_loss", "photometric", "geometric", "iou")
    labels = ("weighted loss", "photometric RMSE [8 bit]",
              "geometric RMSE [mm]", "mask IOU [%]")
    fig, axes = plt.subplots(2, 2, figsize=(8, 5.6), constrained_layout=True)
    for ax, measure, label in zip(axes.ravel(), measures, labels):
        values = [row[measure] for row in report.rows]
        ax.hist(values, bins=40, color="#4878a8")
        mu, sd = report.aggregate[measure]
        ax.axvline(mu, color="k", lw=1)
        ax.axvline(report.baseline[measure][0], color="#b04030", lw=1,
                   ls="--")
        ax.set_xlabel(label)
        ax.set_title(f"mean {mu:.3g} (sd {sd:.3g})", fontsize=9)
    fig.legend(["mean", "baseline"], loc="lower center", ncol=2,
               frameon=False, fontsize=8)
    _save(fig, path)


def breeding_rounds(metrics, path) -> None:
    measures = ("weighted_loss", "photometric", "geometric", "iou")
    fig, axes = plt.subplots(1, 4, figsize=(11, 2.8), constrained_layout=True)
    rounds = [row["round"] for row in metrics]
    for ax, measure in zip(axes, measures):
        values = [row.get(measure) for row in metrics]
        if rounds and all(v is not None for v in values):
            ax.plot(rounds, values, marker="o", ms=3, lw=1.2)
            ax.set_xticks(rounds)
        ax.set_xlabel("round")
        ax.set_title(measure, fontsize=9)
        ax.grid(True, alpha=0.3)
    _save(fig, path)
