"""Static plot artifacts: every figure is written as PNG + SVG next to a CSV of its data."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, prefix: Path) -> None:
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for ext in ("png", "svg"):
        fig.savefig(prefix.with_suffix(f".{ext}"), dpi=120, bbox_inches="tight")


def scatter_2d(coords, labels, ids, prefix: Path, type_names=None) -> None:
    coords, labels = np.asarray(coords), np.asarray(labels)
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "x", "y"])
        for sid, lab, (x, y) in zip(ids, labels, coords):
            w.writerow([sid, int(lab), repr(float(x)), repr(float(y))])
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    for k in np.unique(labels):
        m = labels == k
        name = type_names[k] if type_names is not None else str(k)
        ax.scatter(coords[m, 0], coords[m, 1], s=10, label=name)
    ax.legend(fontsize=7)
    ax.set_xticks([])
    ax.set_yticks([])
    _save(fig, prefix)
    plt.close(fig)


def tml_scatter(true_tml, errors, prefix: Path) -> None:
    """Per-sample load error against the observed load."""
    true_tml, errors = np.asarray(true_tml, float), np.asarray(errors, float)
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tml", "difference"])
        for t, e in zip(true_tml, errors):
            w.writerow([repr(float(t)), repr(float(e))])
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(true_tml, errors, s=8)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("TML")
    ax.set_ylabel("predicted - observed TML")
    _save(fig, prefix)
    plt.close(fig)


def ablation_box(box: dict, prefix: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    names = list(box)
    ax.boxplot([box[n] for n in names])
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel("per-sample F1")
    _save(fig, Path(prefix))
    plt.close(fig)


def curves_plot(curves_csv: Path, prefix: Path) -> None:
    rows = list(csv.DictReader(open(curves_csv, newline="")))
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for split in ("train", "val"):
        pts = [(int(r["epoch"]), float(r["perplexity"])) for r in rows if r["split"] == split]
        if pts:
            ax.plot(*zip(*pts), label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel("log perplexity")
    ax.legend()
    _save(fig, Path(prefix))
    plt.close(fig)
