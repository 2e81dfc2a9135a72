"""Combine CTC spikes with clustered activity frames into timed events."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ctc, dsp, nnet
from .clustering import ClusterResult, activity_frames, cluster_frames
from .synth import Event

log = logging.getLogger(__name__)

INACTIVE = -1


def assign_frames(activity, spikes) -> np.ndarray:
    """Label every active frame with the class of its nearest spike.

    Returns an int array with ``INACTIVE`` (-1) on inactive frames. A frame
    equidistant from two spikes takes the earlier one.
    """
    activity = np.asarray(activity, dtype=bool)
    labels = np.full(activity.size, INACTIVE, dtype=np.int64)
    if not spikes:
        return labels
    pos = np.array([s.frame for s in spikes])
    cls = np.array([s.cls for s in spikes])
    frames = np.flatnonzero(activity)
    dist = np.abs(frames[:, None] - pos[None, :])
    # spikes are in time order, so argmin's first-index rule picks the earlier spike on ties
    labels[frames] = cls[np.argmin(dist, axis=1)]
    return labels


def _runs(labels):
    """Maximal runs ``(cls, first, last)`` of identical non-inactive labels."""
    runs = []
    start = 0
    n = len(labels)
    while start < n:
        end = start
        while end + 1 < n and labels[end + 1] == labels[start]:
            end += 1
        if labels[start] != INACTIVE:
            runs.append([int(labels[start]), start, end])
        start = end + 1
    return runs


def frames_to_events(labels, hop_seconds: float, min_dur: float = 0.1, gap_merge: float = 0.1) -> list:
    """Run-length encode frame labels into events.

    Same-class runs separated only by inactive frames spanning at most
    ``gap_merge`` seconds are joined; events shorter than ``min_dur`` are dropped.
    """
    labels = np.asarray(labels)
    merged = []
    for run in _runs(labels):
        if merged:
            prev = merged[-1]
            gap = run[1] - prev[2] - 1
            between = labels[prev[2] + 1:run[1]]
            if (prev[0] == run[0] and np.all(between == INACTIVE)
                    and gap * hop_seconds <= gap_merge + 1e-9):
                prev[2] = run[2]
                continue
        merged.append(run)
    events = []
    for cls, first, last in merged:
        onset, offset = first * hop_seconds, (last + 1) * hop_seconds
        if offset - onset + 1e-9 < min_dur:
            continue
        events.append(Event(onset, offset, cls))
    return events


@dataclass
class Detection:
    events: list
    spikes: list
    cluster: ClusterResult
    posteriors: np.ndarray = field(repr=False)
    bottleneck: np.ndarray = field(repr=False)
    features: np.ndarray = field(repr=False)
    hop_seconds: float = 0.0
    warning: str | None = None

    @property
    def activity(self) -> np.ndarray:
        return activity_frames(self.cluster)

    def to_json(self) -> dict:
        return {
            "events": [e.to_json() for e in self.events],
            "sequence": [s.cls for s in self.spikes],
            "spikes": json.loads(ctc.spikes_to_json(self.spikes, self.hop_seconds)),
            "cluster": self.cluster.to_json(),
            "warning": self.warning,
        }


def detect_from_outputs(spec, probs, bottleneck, distance_kind: str = "pearson", seed: int = 0,
                        min_dur: float = 0.1, gap_merge: float = 0.1) -> Detection:
    """Stage 2 on precomputed network outputs, so one forward pass can serve several distances."""
    spikes = ctc.extract_spikes(probs)
    cluster = cluster_frames(bottleneck, distance_kind, seed)
    warning = None
    if not spikes:
        warning = "no event spikes decoded"
        events = []
    else:
        labels = assign_frames(activity_frames(cluster), spikes)
        events = frames_to_events(labels, spec.hop_seconds, min_dur, gap_merge)
    return Detection(events, spikes, cluster, probs, bottleneck, spec.frames, spec.hop_seconds, warning)


def detect_full(model, waveform, distance_kind: str = "pearson", seed: int = 0,
                min_dur: float = 0.1, gap_merge: float = 0.1) -> Detection:
    spec = waveform if isinstance(waveform, dsp.LogMelSpectrogram) else dsp.log_mel(waveform)
    probs, bottleneck = nnet.forward(model, spec)
    return detect_from_outputs(spec, probs, bottleneck, distance_kind, seed, min_dur, gap_merge)


def detect(model, waveform, distance_kind: str = "pearson", seed: int = 0,
           min_dur: float = 0.1, gap_merge: float = 0.1) -> list:
    """Full two-stage pipeline on one clip; returns the detected event list."""
    det = detect_full(model, waveform, distance_kind, seed, min_dur, gap_merge)
    if det.warning:
        log.warning(det.warning)
    return det.events
