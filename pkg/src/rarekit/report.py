"""Figure rendering for training and evaluation reports.

All figures are written as PNG with fixed dpi and stripped metadata so a
rerun under the same seeds produces byte-identical files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path: str | os.PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_loss_curve(losses, path: str | os.PathLike) -> None:
    """Per-epoch training loss."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(range(1, len(losses) + 1), losses, marker="o", color="#2c6fbb")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean contrastive loss")
    ax.set_title("Retriever training loss")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_topk_accuracy(topk_pct: dict, path: str | os.PathLike) -> None:
    """Retrieval accuracy against k."""
    ks = sorted(topk_pct)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(ks, [topk_pct[k] for k in ks], marker="s", color="#b04a2f")
    ax.set_xticks(ks)
    ax.set_xlabel("k")
    ax.set_ylabel("top-k accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Retrieval accuracy by k")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_rare_word_accuracy(report: EvalReport, path: str | os.PathLike) -> None:
    """Rare-word accuracy bars (overall and per shot class) with the ceiling."""
    labels = ["overall", "0-shot", "1-shot"]
    values = [report.rare_overall_pct, report.rare_zero_shot_pct, report.rare_one_shot_pct]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.bar(labels, [v if v is not None else 0.0 for v in values],
           color=["#2c6fbb", "#7fa8d9", "#b04a2f"])
    if report.ceiling_pct is not None:
        ax.axhline(report.ceiling_pct, linestyle="--", color="#555555", linewidth=1.2,
                   label=f"ceiling {report.ceiling_pct:.1f}%")
        ax.legend(loc="upper right")
    ax.set_ylabel("unique rare words translated (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Rare-word translation accuracy")
    _save(fig, path)


def render_report_figures(report: EvalReport, directory: str | os.PathLike) -> list[str]:
    """Render the standard evaluation figures; returns the files written."""
    os.makedirs(directory, exist_ok=True)
    written = []
    if report.retrieval_topk_pct:
        path = os.path.join(directory, "topk_accuracy.png")
        plot_topk_accuracy(report.retrieval_topk_pct, path)
        written.append(path)
    if report.rare_overall_pct is not None:
        path = os.path.join(directory, "rare_word_accuracy.png")
        plot_rare_word_accuracy(report, path)
        written.append(path)
    return written
