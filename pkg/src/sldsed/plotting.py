"""Static figures for a single clip and for an evaluation report.

Uses the object-oriented matplotlib API (no pyplot state), so it is safe to call
from worker threads and never opens a window.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

# PNG metadata without a version string keeps figure bytes stable across installs
_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    fig.savefig(tmp, dpi=100, metadata=_META if path.suffix == ".png" else None)
    tmp.replace(path)
    return path


def plot_clip(path, detection, strong=(), title: str = "", class_names=None) -> Path:
    """Four stacked panels: log-mel, bottleneck, spike posteriors, activity vs ground truth."""
    hop = detection.hop_seconds
    T = detection.features.shape[0]
    duration = T * hop
    extent = (0.0, duration)
    fig = Figure(figsize=(10, 9))
    axes = fig.subplots(4, 1, sharex=True)

    ax = axes[0]
    ax.imshow(detection.features.T, origin="lower", aspect="auto", cmap="magma",
              extent=(*extent, 0, detection.features.shape[1]))
    ax.set_ylabel("mel band")
    ax.set_title(title or "log mel spectrogram")

    ax = axes[1]
    ax.imshow(detection.bottleneck.T, origin="lower", aspect="auto", cmap="viridis",
              extent=(*extent, 0, detection.bottleneck.shape[1]))
    ax.set_ylabel("bottleneck dim")

    ax = axes[2]
    t = (np.arange(T) + 1) * hop
    post = detection.posteriors
    n_classes = post.shape[1] - 1
    for k in range(n_classes):
        ax.plot(t, post[:, k], lw=1.0, label=(class_names or {}).get(k, f"class {k}"))
    for s in detection.spikes:
        ax.annotate(str((class_names or {}).get(s.cls, s.cls)), ((s.frame + 1) * hop, post[s.frame, s.cls]),
                    textcoords="offset points", xytext=(0, 4), ha="center", fontsize=8)
    ax.set_ylim(0, 1.15)
    ax.set_ylabel("posterior")
    if n_classes <= 10:
        ax.legend(loc="upper right", fontsize=7, ncol=min(n_classes, 5))

    ax = axes[3]
    for e in strong:
        ax.plot([e.onset, e.offset], [1.0, 1.0], color="red", lw=4, solid_capstyle="butt")
    active = detection.activity.astype(float)
    ax.step(t, active * 0.8, where="mid", color="blue", lw=1.2)
    ax.set_ylim(-0.1, 1.2)
    ax.set_yticks([0.8, 1.0], ["detected", "truth"])
    ax.set_xlabel("time (s)")
    ax.set_xlim(*extent)
    fig.tight_layout()
    return _save(fig, path)


def _bars(path, labels, values, ylabel, title, ref_line=None) -> Path:
    fig = Figure(figsize=(max(4.0, 0.6 * len(labels) + 2), 3.5))
    ax = fig.subplots()
    x = np.arange(len(labels))
    vals = [np.nan if v is None else v for v in values]
    ax.bar(x, vals, color="tab:green")
    ax.set_xticks(x, [str(l) for l in labels])
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if ref_line is not None:
        ax.axhline(ref_line, color="grey", ls="--", lw=1)
    fig.tight_layout()
    return _save(fig, path)


def plot_class_er(path, per_class: dict, overall: float | None = None) -> Path:
    keys = sorted(per_class)
    return _bars(path, keys, [per_class[k] for k in keys], "error rate", "per-class segment ER", overall)


def plot_tagging(path, class_accuracy: dict) -> Path:
    keys = sorted(class_accuracy)
    return _bars(path, keys, [class_accuracy[k] for k in keys], "accuracy", "per-class tagging accuracy")


def plot_cluster_precision(path, by_distance: dict) -> Path:
    keys = sorted(by_distance)
    return _bars(path, keys, [by_distance[k] for k in keys], "precision", "frame-level cluster precision")
