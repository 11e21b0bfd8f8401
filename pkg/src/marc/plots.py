"""Figure rendering for evaluation reports.

All figures go to files (Agg backend); the CLI writes them next to the
JSON/CSV report when --figures is given.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _class_axis(k):
    return np.arange(k)


def plot_profile(profile, outpath, kind):
    """Per-class mean margin or logit, before vs after calibration.

    `kind` is "margin" or "logit"; classes are ordered head to tail.
    """
    k = len(profile[f"{kind}_before"])
    x = _class_axis(k)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(x, profile[f"{kind}_before"], marker="o", ms=3, label="before")
    after = profile.get(f"{kind}_after")
    if after is not None:
        ax.plot(x, after, marker="s", ms=3, label="after")
    ax.set_xlabel("class index (head to tail)")
    ax.set_ylabel(f"mean {kind}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outpath, dpi=150)
    plt.close(fig)


def plot_per_class_accuracy(acc_before, acc_after, outpath):
    k = len(acc_before)
    x = _class_axis(k)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if acc_after is None:
        ax.bar(x, acc_before, color="tab:blue")
    else:
        w = 0.4
        ax.bar(x - w / 2, acc_before, width=w, label="before", color="tab:blue")
        ax.bar(x + w / 2, acc_after, width=w, label="after", color="tab:orange")
        ax.legend()
    ax.set_xlabel("class index (head to tail)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(outpath, dpi=150)
    plt.close(fig)


def plot_confusion(confusion, outpath, title=""):
    fig, ax = plt.subplots(figsize=(4, 3.6))
    im = ax.imshow(confusion, cmap="Blues")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(outpath, dpi=150)
    plt.close(fig)


def render_report_figures(report_before, report_after, profile, outdir):
    """Render the standard figure set; returns the list of written paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []

    def out(name):
        path = os.path.join(outdir, name)
        written.append(path)
        return path

    for kind in ("margin", "logit"):
        plot_profile(profile, out(f"{kind}_profile.png"), kind)
    acc_after = None if report_after is None else report_after.per_class_acc
    plot_per_class_accuracy(report_before.per_class_acc, acc_after, out("class_accuracy.png"))
    plot_confusion(report_before.confusion, out("confusion_before.png"), "before")
    if report_after is not None:
        plot_confusion(report_after.confusion, out("confusion_after.png"), "after")
    return written
