"""PNG figures written next to the TSV outputs (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_loss(history, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if history:
        epochs, losses = zip(*history)
        ax.plot(epochs, losses, marker="o" if len(history) < 30 else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training BCE")
    ax.set_title("Training loss")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_confusion(report, path):
    mat = np.array([[report.tn, report.fp], [report.fn, report.tp]])
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.imshow(mat, cmap="Blues")
    for (i, j), v in np.ndenumerate(mat):
        ax.text(j, i, str(v), ha="center", va="center",
                color="white" if v > mat.max() / 2 else "black")
    ax.set_xticks([0, 1], ["benign", "malicious"])
    ax.set_yticks([0, 1], ["benign", "malicious"])
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    acc = f"{report.acc:.3f}" if report.total else "n/a"
    ax.set_title(f"Confusion matrix (ACC {acc})")
    _save(fig, path)


def plot_phase_times(acc, path):
    from .report import PHASES

    n = max(acc.apps, 1)
    secs = [acc.phases[p].wall_time / n for p in PHASES]
    toks = [(acc.phases[p].prompt_tokens + acc.phases[p].response_tokens) / n for p in PHASES]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    labels = [p.replace("_", "\n") for p in PHASES]
    a1.bar(labels, secs, color="tab:blue")
    a1.set_ylabel("seconds per app")
    a2.bar(labels, toks, color="tab:orange")
    a2.set_ylabel("tokens per app")
    for ax in (a1, a2):
        ax.tick_params(axis="x", labelsize=8)
    fig.suptitle("Average per-app cost by phase")
    _save(fig, path)
