"""Synthetic sound-event clips with strong labels and derived sequential labels.

Each clip is a 10 s mixture of 2-4 non-overlapping target events drawn from
parametric class templates, laid over a slowly varying noise texture at a fixed
event-to-background ratio.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import SAMPLE_RATE, Waveform, read_wav, write_wav
from .errors import DataError, GenerationFailure, InvalidArgument

log = logging.getLogger(__name__)

KINDS = ("tone", "harmonic", "noise", "chirp")
SCENES = ("pink", "lowpass", "bandpass")
SPLITS = ("train", "validation", "test")
MIN_GAP_S = 0.25
EVENT_PEAK = 0.5


@dataclass(frozen=True)
class EventTemplate:
    class_id: int
    kind: str
    freq: float  # base frequency (Hz)
    duration_range: tuple = (0.3, 2.0)


@dataclass(frozen=True, order=True)
class Event:
    onset: float
    offset: float
    cls: int

    def to_json(self) -> dict:
        return {"class": self.cls, "onset": round(self.onset, 3), "offset": round(self.offset, 3)}


@dataclass
class ClipRecord:
    clip_id: str
    wav: str
    strong: list
    sld: list
    split: str
    scene: str
    waveform: Waveform | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "wav": self.wav,
            "strong": [e.to_json() for e in self.strong],
            "sld": list(self.sld),
            "split": self.split,
            "scene": self.scene,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ClipRecord":
        strong = [Event(float(e["onset"]), float(e["offset"]), int(e["class"])) for e in d["strong"]]
        return cls(d["clip_id"], d["wav"], strong, [int(c) for c in d["sld"]], d["split"],
                   d.get("scene", ""))


def sort_events(events) -> list:
    return sorted(events, key=lambda e: (e.onset, e.offset, e.cls))


def derive_sld(events) -> list:
    """Class sequence ordered by onset; overlapping events still get a definite order."""
    events = list(events)
    if not events:
        raise InvalidArgument("cannot derive a sequential label from an empty event list")
    return [e.cls for e in sort_events(events)]


def make_templates(n_classes: int, fmin: float = 300.0, fmax: float = 6000.0) -> list:
    """One template per class, cycling through generator kinds with log-spaced base frequencies."""
    if n_classes < 1:
        raise InvalidArgument("need at least one class")
    ratio = (fmax / fmin) ** (1.0 / max(n_classes - 1, 1))
    return [EventTemplate(k, KINDS[k % len(KINDS)], fmin * ratio ** k) for k in range(n_classes)]


def _adsr(n: int, sr: int, rng) -> np.ndarray:
    attack = min(int(sr * rng.uniform(0.01, 0.05)), n // 4)
    release = min(int(sr * rng.uniform(0.05, 0.15)), n // 3)
    sustain = rng.uniform(0.6, 0.9)
    decay = min(int(sr * 0.05), n - attack - release)
    env = np.full(n, sustain)
    env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    env[attack:attack + decay] = np.linspace(1.0, sustain, decay, endpoint=False)
    if release:
        env[n - release:] = sustain * np.linspace(1.0, 0.0, release)
    return env


def render_event(template: EventTemplate, n: int, sr: int, rng) -> np.ndarray:
    """Render ``n`` samples of one event, peak-normalized to ``EVENT_PEAK``."""
    t = np.arange(n) / sr
    f = template.freq * rng.uniform(0.97, 1.03)
    env = _adsr(n, sr, rng)
    if template.kind == "tone":
        vib = 0.004 * f * np.sin(2 * np.pi * 5.0 * t)
        x = np.sin(2 * np.pi * np.cumsum(f + vib) / sr)
    elif template.kind == "harmonic":
        x = sum(np.sin(2 * np.pi * k * f * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
    elif template.kind == "noise":
        lo, hi = f / 1.4, min(f * 1.4, 0.45 * sr)
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
    elif template.kind == "chirp":
        x = signal.chirp(t, f0=f, t1=t[-1] if n > 1 else 1.0, f1=min(2 * f, 0.45 * sr))
    else:
        raise InvalidArgument(f"unknown template kind {template.kind!r}")
    x = x * env
    peak = np.max(np.abs(x))
    return x * (EVENT_PEAK / peak) if peak > 0 else x


def render_background(scene: str, n: int, sr: int, rng) -> np.ndarray:
    """Stationary-ish noise texture with a slow amplitude modulation, unit RMS."""
    white = rng.standard_normal(n)
    if scene == "pink":
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        spec[1:] /= np.sqrt(freqs[1:])
        spec[0] = 0.0
        x = np.fft.irfft(spec, n)
    elif scene == "lowpass":
        sos = signal.butter(2, rng.uniform(400, 1200), btype="lowpass", fs=sr, output="sos")
        x = signal.sosfilt(sos, white)
    elif scene == "bandpass":
        centre = rng.uniform(800, 3000)
        sos = signal.butter(2, [centre / 2, min(centre * 2, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
        x = signal.sosfilt(sos, white)
    else:
        raise InvalidArgument(f"unknown scene kind {scene!r}")
    t = np.arange(n) / sr
    x = x * (1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.05, 0.3) * t + rng.uniform(0, 2 * np.pi)))
    return x / np.sqrt(np.mean(x ** 2))


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def background_gain(target, background, snr_db, target_support=None) -> float:
    """Gain g with ``20 log10(rms(target) / rms(g * background)) = snr_db``.

    ``target_support`` restricts the target RMS to the samples where events sound.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    t = target if target_support is None else target[target_support]
    t_rms, b_rms = _rms(t), _rms(background)
    if t_rms == 0.0:
        raise InvalidArgument("target is silent; SNR is undefined")
    if b_rms == 0.0:
        raise InvalidArgument("background is silent; cannot scale it to an SNR")
    return t_rms / (b_rms * 10.0 ** (snr_db / 20.0))


def mix_at_snr(target: Waveform, background: Waveform, snr_db: float, target_support=None,
               gain: float | None = None) -> Waveform:
    """``target + g * background``, peak-normalized to 0.99 only if it would clip."""
    if target.sample_rate != background.sample_rate:
        raise InvalidArgument("sample rates differ")
    if target.samples.size != background.samples.size:
        raise InvalidArgument("target and background lengths differ")
    if gain is None:
        gain = background_gain(target.samples, background.samples, snr_db, target_support)
    mix = target.samples + gain * background.samples
    peak = np.max(np.abs(mix))
    if peak > 0.99:
        mix = mix * (0.99 / peak)
    return Waveform(mix, target.sample_rate)


def plan_events(rng, n_events: int, n_classes: int, templates, clip_s: float = 10.0,
                min_gap: float = MIN_GAP_S) -> list:
    """Random non-overlapping placements on a 1 ms grid."""
    durs = []
    for _ in range(n_events):
        cls = int(rng.integers(n_classes))
        lo, hi = templates[cls].duration_range
        durs.append((cls, round(float(rng.uniform(lo, hi)), 3)))
    slack = clip_s - sum(d for _, d in durs) - (n_events - 1) * min_gap
    if slack < 0:
        raise GenerationFailure(
            f"{n_events} events of total {sum(d for _, d in durs):.3f}s do not fit in {clip_s}s")
    # Dirichlet split of the free time into n+1 gaps.
    shares = rng.dirichlet(np.ones(n_events + 1)) * slack
    events = []
    cursor = 0.0
    for k, (cls, dur) in enumerate(durs):
        cursor += shares[k] + (min_gap if k else 0.0)
        onset = round(cursor, 3)
        offset = round(onset + dur, 3)
        events.append(Event(onset, min(offset, clip_s), cls))
        cursor = onset + dur
    return events


def synthesize_clip(seed, n_events: int, templates, scene_kind: str = "pink", snr_db: float = 0.0,
                    clip_s: float = 10.0, sample_rate: int = SAMPLE_RATE, clip_id: str = "clip",
                    events=None, return_parts: bool = False):
    """Render one clip; deterministic in ``seed`` (an int or an int sequence).

    With ``return_parts`` also returns ``(target, background_scaled)`` arrays.
    """
    if not 1 <= n_events:
        raise InvalidArgument("n_events must be positive")
    rng = np.random.default_rng(seed)
    if events is None:
        events = plan_events(rng, n_events, len(templates), templates, clip_s)
    n = int(round(clip_s * sample_rate))
    target = np.zeros(n)
    support = np.zeros(n, dtype=bool)
    for e in events:
        a, b = int(round(e.onset * sample_rate)), int(round(e.offset * sample_rate))
        target[a:b] += render_event(templates[e.cls], b - a, sample_rate, rng)
        support[a:b] = True
    background = render_background(scene_kind, n, sample_rate, rng)
    g = background_gain(target, background, snr_db, support)
    mix = mix_at_snr(Waveform(target, sample_rate), Waveform(background, sample_rate), snr_db, gain=g)
    events = sort_events(events)
    record = ClipRecord(clip_id, f"{clip_id}.wav", events, derive_sld(events), "", scene_kind, mix)
    if return_parts:
        return record, target, g * background
    return record


# --- datasets ------------------------------------------------------------------


@dataclass
class DatasetConfig:
    n_classes: int = 5
    n_train: int = 200
    n_validation: int = 40
    n_test: int = 40
    seed: int = 7
    snr_db: float = 0.0
    clip_s: float = 10.0
    sample_rate: int = SAMPLE_RATE
    min_events: int = 2
    max_events: int = 4

    def __post_init__(self):
        if self.n_classes < 1:
            raise InvalidArgument("n_classes must be positive")
        if min(self.n_train, self.n_validation, self.n_test) < 0:
            raise InvalidArgument("split sizes must be non-negative")
        if not 1 <= self.min_events <= self.max_events:
            raise InvalidArgument("need 1 <= min_events <= max_events")

    def split_sizes(self) -> dict:
        return {"train": self.n_train, "validation": self.n_validation, "test": self.n_test}


def _clip_seed(cfg: DatasetConfig, split_idx: int, clip_idx: int, attempt: int):
    return [cfg.seed, split_idx, clip_idx, attempt]


def plan_split(cfg: DatasetConfig, split: str, templates, max_attempts: int = 1000) -> list:
    """Per-clip (seed, n_events, scene, events) plans for one split.

    The split is re-drawn with a new attempt index until every class occurs at
    least once (skipped when the split is too small to cover all classes).
    """
    split_idx = SPLITS.index(split)
    size = cfg.split_sizes()[split]
    need_all = size * cfg.max_events >= cfg.n_classes
    for attempt in range(max_attempts):
        plans = []
        seen = set()
        for i in range(size):
            seed = _clip_seed(cfg, split_idx, i, attempt)
            rng = np.random.default_rng(seed + [0])
            n_events = int(rng.integers(cfg.min_events, cfg.max_events + 1))
            scene = SCENES[int(rng.integers(len(SCENES)))]
            for _ in range(100):
                try:
                    events = plan_events(rng, n_events, cfg.n_classes, templates, cfg.clip_s)
                    break
                except GenerationFailure:
                    continue
            else:
                raise GenerationFailure(f"{split} clip {i}: {n_events} events never fit in {cfg.clip_s}s")
            seen.update(e.cls for e in events)
            plans.append((seed, n_events, scene, events))
        if not need_all or len(seen) == cfg.n_classes:
            return plans
    raise GenerationFailure(f"split {split}: could not cover all {cfg.n_classes} classes")


def _render_plan(cfg, templates, split, i, plan, out_dir):
    seed, n_events, scene, events = plan
    clip_id = f"{split}_{i:04d}"
    rec = synthesize_clip(seed, n_events, templates, scene, cfg.snr_db, cfg.clip_s,
                          cfg.sample_rate, clip_id=clip_id, events=events)
    rec.split = split
    rec.wav = f"audio/{clip_id}.wav"
    if out_dir is not None:
        path = out_dir / rec.wav
        tmp = path.with_suffix(".tmp.wav")
        try:
            write_wav(tmp, rec.waveform)
            tmp.replace(path)
        except OSError as exc:
            raise DataError(f"{path}: cannot write wav ({exc})") from exc
    return rec


def generate_dataset(cfg: DatasetConfig, out_dir=None, jobs: int = 1) -> list:
    """Generate all splits; when ``out_dir`` is given write wavs, manifest and config there."""
    templates = make_templates(cfg.n_classes, fmax=min(6000.0, 0.3 * cfg.sample_rate))
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            (out_dir / "audio").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"{out_dir}: cannot create dataset directory ({exc})") from exc
    tasks = []
    for split in SPLITS:
        for i, plan in enumerate(plan_split(cfg, split, templates)):
            tasks.append((split, i, plan))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(lambda t: _render_plan(cfg, templates, *t, out_dir), tasks))
    else:
        records = [_render_plan(cfg, templates, *t, out_dir) for t in tasks]
    if out_dir is not None:
        write_manifest(out_dir / "manifest.jsonl", records)
        (out_dir / "dataset.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    return records


def class_counts(records) -> dict:
    """``{split: {class_id: event count}}``."""
    counts = {}
    for r in records:
        per = counts.setdefault(r.split, {})
        for c in r.sld:
            per[c] = per.get(c, 0) + 1
    return {s: dict(sorted(v.items())) for s, v in counts.items()}


def manifest_text(records) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


def write_manifest(path, records) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(manifest_text(records))
    tmp.replace(path)


def read_manifest(path) -> list:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(ClipRecord.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed manifest line ({exc})") from exc
    return records


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_waveform(record: ClipRecord, root) -> Waveform:
    return read_wav(Path(root) / record.wav)
