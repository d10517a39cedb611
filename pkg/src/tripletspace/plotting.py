"""Optional PNG renderings of the CSV reports (ROC curves, training curves).

matplotlib is imported lazily with the non-interactive Agg backend so the
rest of the package never depends on a display.
"""

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_roc(reports, path, labels=None, target_far=None):
    """VAL against FAR on a log FAR axis, one line per report."""
    plt = _pyplot()
    labels = labels or [None] * len(reports)
    fig, ax = plt.subplots(figsize=(5, 4))
    for rep, lab in zip(reports, labels):
        far = np.maximum(rep.far, 1e-6)  # log axis cannot show exact zeros
        ax.step(far, rep.val, where="post", label=lab)
    if target_far is not None:
        ax.axvline(target_far, color="grey", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("FAR")
    ax.set_ylabel("VAL")
    ax.set_ylim(0, 1.02)
    if any(labels):
        ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_training(log, path):
    """Loss and active-triplet fraction per step."""
    plt = _pyplot()
    steps = log.column("step")
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    ax1.plot(steps, log.column("loss"), lw=0.8)
    ax1.set_ylabel("loss per triplet")
    ax2.plot(steps, log.active_fraction(), lw=0.8)
    ax2.set_ylabel("active fraction")
    ax2.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
