"""Segment-based SED metrics, tagging and sequence metrics, cluster precision."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class SegmentMetrics:
    precision: float
    recall: float
    f_score: float
    er: float
    d_rate: float
    i_rate: float
    s_rate: float
    n_ref: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    undefined: list = field(default_factory=list)

    @property
    def decomposition_ok(self) -> bool:
        return abs(self.er - (self.d_rate + self.i_rate + self.s_rate)) <= 1e-9

    def to_dict(self) -> dict:
        d = asdict(self)
        d["er_equals_d_plus_i_plus_s"] = self.decomposition_ok
        return d


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def n_segments(clip_s: float, segment_s: float) -> int:
    return max(1, int(math.ceil(clip_s / segment_s - 1e-9)))


def segment_activity(events, n_classes: int, clip_s: float, segment_s: float) -> np.ndarray:
    """``(n_segments, n_classes)`` bool: class active if any event overlaps the segment."""
    n = n_segments(clip_s, segment_s)
    act = np.zeros((n, n_classes), dtype=bool)
    for e in events:
        if e.offset <= e.onset:
            continue
        first = int(math.floor(e.onset / segment_s + 1e-9))
        last = int(math.ceil(e.offset / segment_s - 1e-9)) - 1
        act[max(first, 0):min(last, n - 1) + 1, e.cls] = True
    return act


def _counts(ref_act, hyp_act):
    tp = np.sum(ref_act & hyp_act, axis=1)
    fn = np.sum(ref_act & ~hyp_act, axis=1)
    fp = np.sum(~ref_act & hyp_act, axis=1)
    s = np.minimum(fn, fp)
    return {
        "tp": int(tp.sum()), "fn": int(fn.sum()), "fp": int(fp.sum()),
        "s": int(s.sum()), "d": int((fn - s).sum()), "i": int((fp - s).sum()),
        "n": int(ref_act.sum()),
    }


def _from_counts(c) -> SegmentMetrics:
    undefined = []
    n = c["n"]
    p = _ratio(c["tp"], c["tp"] + c["fp"], "precision", undefined)
    r = _ratio(c["tp"], c["tp"] + c["fn"], "recall", undefined)
    f = 2 * p * r / (p + r) if p + r > 0 else _ratio(0, 0, "f_score", undefined)
    if n == 0:
        undefined.append("er")
        er = d = i = s = float("nan")
    else:
        d, i, s = c["d"] / n, c["i"] / n, c["s"] / n
        er = (c["d"] + c["i"] + c["s"]) / n
    return SegmentMetrics(p, r, f, er, d, i, s, n, c["tp"], c["fp"], c["fn"], c["s"], c["d"], c["i"],
                          undefined)


def _sum_counts(parts):
    total = {k: 0 for k in ("tp", "fn", "fp", "s", "d", "i", "n")}
    for c in parts:
        for k in total:
            total[k] += c[k]
    return total


def _class_count(ref, hyp):
    cls = [e.cls for evs in list(ref) + list(hyp) for e in evs]
    return max(cls) + 1 if cls else 1


def segment_metrics(ref, hyp, clip_s, segment_s: float = 1.0, n_classes: int | None = None) -> SegmentMetrics:
    """Segment-based P/R/F and ER = (S + D + I) / N over a set of clips.

    ``ref`` and ``hyp`` are aligned sequences of event lists; ``clip_s`` is a
    scalar or one duration per clip. With no reference activity at all, ER and
    its components are NaN and flagged in ``undefined``.
    """
    ref, hyp = list(ref), list(hyp)
    if len(ref) != len(hyp):
        raise ValueError(f"{len(ref)} reference clips but {len(hyp)} hypothesis clips")
    durations = [clip_s] * len(ref) if np.isscalar(clip_s) else list(clip_s)
    n_classes = n_classes or _class_count(ref, hyp)
    parts = [
        _counts(segment_activity(r, n_classes, d, segment_s), segment_activity(h, n_classes, d, segment_s))
        for r, h, d in zip(ref, hyp, durations)
    ]
    return _from_counts(_sum_counts(parts))


def per_class_er(ref, hyp, classes, clip_s, segment_s: float = 1.0):
    """Per-class ER plus its population standard deviation.

    Classes without reference activity are excluded from the spread and listed
    separately. Returns ``(er_by_class, sd, excluded)``.
    """
    er = {}
    excluded = []
    for c in classes:
        r = [[e for e in evs if e.cls == c] for evs in ref]
        h = [[e for e in evs if e.cls == c] for evs in hyp]
        m = segment_metrics(r, h, clip_s, segment_s, n_classes=max(classes) + 1)
        if m.n_ref == 0:
            excluded.append(c)
        else:
            er[c] = m.er
    sd = float(np.std(list(er.values()))) if er else 0.0
    return er, sd, excluded


@dataclass
class TaggingReport:
    class_accuracy: dict
    precision: float
    recall: float
    f_score: float
    undefined: list = field(default_factory=list)


def tagging_metrics(ref_seqs, hyp_seqs, classes=None) -> TaggingReport:
    """Clip-level presence metrics; order within a clip is ignored.

    Per-class accuracy is the fraction of clips containing the class whose
    hypothesis also contains it.
    """
    ref_sets = [set(s) for s in ref_seqs]
    hyp_sets = [set(s) for s in hyp_seqs]
    if classes is None:
        classes = sorted(set().union(*ref_sets, *hyp_sets)) if ref_sets else []
    acc = {}
    for c in classes:
        having = [h for r, h in zip(ref_sets, hyp_sets) if c in r]
        if having:
            acc[c] = sum(c in h for h in having) / len(having)
    tp = sum(len(r & h) for r, h in zip(ref_sets, hyp_sets))
    fp = sum(len(h - r) for r, h in zip(ref_sets, hyp_sets))
    fn = sum(len(r - h) for r, h in zip(ref_sets, hyp_sets))
    undefined = []
    p = _ratio(tp, tp + fp, "precision", undefined)
    r = _ratio(tp, tp + fn, "recall", undefined)
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return TaggingReport(acc, p, r, f, undefined)


def levenshtein(a, b) -> int:
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def sequence_accuracy(ref_seqs, hyp_seqs) -> tuple[float, float]:
    """Exact-match rate and mean ``levenshtein / max(len)`` over clips."""
    ref_seqs, hyp_seqs = list(ref_seqs), list(hyp_seqs)
    if not ref_seqs:
        return 0.0, 0.0
    exact = sum(list(r) == list(h) for r, h in zip(ref_seqs, hyp_seqs)) / len(ref_seqs)
    dists = [levenshtein(r, h) / max(len(r), len(h)) if (r or h) else 0.0
             for r, h in zip(ref_seqs, hyp_seqs)]
    return exact, float(np.mean(dists))


def frame_activity(events, n_frames: int, hop_seconds: float) -> np.ndarray:
    """Ground-truth mask: frame active iff its centre lies inside some event."""
    win = 2.0 * hop_seconds  # 50 % overlap: window spans two hops
    centres = np.arange(n_frames) * hop_seconds + win / 2.0
    mask = np.zeros(n_frames, dtype=bool)
    for e in events:
        mask |= (centres >= e.onset) & (centres < e.offset)
    return mask


def cluster_precision(truth_masks, predicted_masks) -> float:
    """Fraction of frames whose foreground/background call matches the truth."""
    agree = total = 0
    for t, p in zip(truth_masks, predicted_masks):
        t, p = np.asarray(t, dtype=bool), np.asarray(p, dtype=bool)
        agree += int(np.sum(t == p))
        total += t.size
    return agree / total if total else 0.0


# --- reports ---------------------------------------------------------------------


def _clean(x):
    if isinstance(x, float):
        return None if math.isnan(x) else round(x, 6)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def report_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def report_csv(report: dict) -> str:
    """Flat ``section,key,value`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "key", "value"])

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj, key=str):
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        elif isinstance(obj, list):
            w.writerow([prefix.split(".")[0], prefix.partition(".")[2] or prefix,
                        ";".join(str(v) for v in obj)])
        else:
            section, _, key = prefix.partition(".")
            w.writerow([section, key or section, "" if obj is None else obj])

    walk("", _clean(report))
    return buf.getvalue()
