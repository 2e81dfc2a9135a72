"""Whole-pipeline steps over on-disk artifacts; the CLI is a thin layer over these."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import assignment, dsp, metrics, nnet, plotting, synth
from .config import RunConfig
from .errors import DataError, InvalidArgument
from .synth import Event

log = logging.getLogger(__name__)

DISTANCES = ("pearson", "euclidean")


def _map(fn, items, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_records(data_dir, split: str | None = None) -> list:
    records = synth.read_manifest(Path(data_dir) / "manifest.jsonl")
    if split is not None:
        if split not in synth.SPLITS:
            raise InvalidArgument(f"unknown split {split!r}")
        records = [r for r in records if r.split == split]
    return records


def features_for(records, data_dir, cfg: RunConfig) -> list:
    def one(rec):
        w = synth.load_waveform(rec, data_dir)
        if w.sample_rate != cfg.sample_rate:
            raise DataError(f"{rec.wav}: sample rate {w.sample_rate} != configured {cfg.sample_rate}")
        return dsp.log_mel(w, **cfg.feature_kwargs())

    return _map(one, records, cfg.jobs)


# --- synth -------------------------------------------------------------------


def run_synth(cfg: RunConfig, out_dir) -> list:
    out_dir = Path(out_dir)
    records = synth.generate_dataset(cfg.dataset(), out_dir, jobs=cfg.jobs)
    cfg.save(out_dir / "run.cfg")
    return records


# --- train -------------------------------------------------------------------


def _fit(cfg, train_pairs, val_pairs, train_ids, val_ids, progress):
    model = nnet.CrnnModel(cfg.architecture(), seed=cfg.seed)
    return nnet.train(model, train_pairs, val_pairs, cfg.train_config(), ids=train_ids, val_ids=val_ids,
                      progress=progress)


def fold_indices(n: int, k: int, seed: int) -> list:
    """Seeded shuffle of ``range(n)`` cut into ``k`` near-equal folds."""
    if not 1 < k <= n:
        raise InvalidArgument(f"cannot make {k} folds from {n} clips")
    perm = np.random.default_rng([seed, k]).permutation(n)
    return [np.sort(f).tolist() for f in np.array_split(perm, k)]


def run_train(cfg: RunConfig, data_dir, out_dir, progress=None) -> dict:
    """Train and write ``model.ckpt``, ``train_log.csv`` and ``train_summary.json`` under ``out_dir``.

    With ``cfg.folds > 1`` the training split is cut into folds; each fold is held out
    once for validation and the fold model with the lowest validation loss becomes
    ``model.ckpt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_recs = load_records(data_dir, "train")
    if not train_recs:
        raise DataError(f"{data_dir}: no training clips in manifest")
    train_x = features_for(train_recs, data_dir, cfg)
    pairs = [(x, r.sld) for x, r in zip(train_x, train_recs)]
    ids = [r.clip_id for r in train_recs]
    summary = {"folds": cfg.folds, "n_train": len(train_recs)}

    if cfg.folds == 1:
        val_recs = load_records(data_dir, "validation")
        val_x = features_for(val_recs, data_dir, cfg)
        model, history = _fit(cfg, pairs, [(x, r.sld) for x, r in zip(val_x, val_recs)], ids,
                              [r.clip_id for r in val_recs], progress)
        nnet.save_checkpoint(out_dir / "model.ckpt", model)
        nnet.write_train_log(out_dir / "train_log.csv", history)
        summary.update(best_epoch=history.best_epoch, best_val_loss=history.best_val_loss,
                       epochs_run=len(history.rows))
    else:
        results = []
        for f, held in enumerate(fold_indices(len(pairs), cfg.folds, cfg.seed)):
            keep = sorted(set(range(len(pairs))) - set(held))
            model, history = _fit(cfg, [pairs[i] for i in keep], [pairs[i] for i in held],
                                  [ids[i] for i in keep], [ids[i] for i in held], progress)
            nnet.save_checkpoint(out_dir / f"fold{f}.ckpt", model)
            nnet.write_train_log(out_dir / f"fold{f}_log.csv", history)
            results.append({"fold": f, "held_out": len(held), "best_epoch": history.best_epoch,
                            "best_val_loss": history.best_val_loss})
        losses = [r["best_val_loss"] for r in results]
        chosen = int(np.argmin(losses))
        shutil.copyfile(out_dir / f"fold{chosen}.ckpt", out_dir / "model.ckpt")
        summary.update(fold_results=results, mean_val_loss=float(np.mean(losses)), selected_fold=chosen,
                       best_val_loss=losses[chosen])
    cfg.save(out_dir / "run.cfg")
    _write_text(out_dir / "train_summary.json", json.dumps(metrics._clean(summary), indent=2, sort_keys=True) + "\n")
    return summary


# --- detect ------------------------------------------------------------------


def detect_records(cfg: RunConfig, model, records, data_dir, distances=None) -> list:
    """``[{distance: Detection}]`` per record; the network runs once per clip."""
    distances = tuple(distances or (cfg.distance,))
    specs = features_for(records, data_dir, cfg)

    def one(spec):
        probs, bottleneck = nnet.forward(model, spec)
        return {k: assignment.detect_from_outputs(spec, probs, bottleneck, k, cfg.seed, cfg.min_dur, cfg.gap_merge)
                for k in distances}

    return _map(one, specs, cfg.jobs)


def run_detect(cfg: RunConfig, checkpoint, data_dir, out_dir, split: str = "test", distance=None) -> list:
    """One ``<clip_id>.json`` per clip in ``split`` under ``out_dir``."""
    model = nnet.load_checkpoint(checkpoint)
    kind = distance or cfg.distance
    records = load_records(data_dir, split)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dets = [d[kind] for d in detect_records(cfg, model, records, data_dir, (kind,))]
    for rec, det in zip(records, dets):
        write_detection(out_dir / f"{rec.clip_id}.json", rec, det)
    return dets


def write_detection(path: Path, record, det) -> None:
    payload = {"clip_id": record.clip_id, "hop_seconds": det.hop_seconds, **det.to_json()}
    _write_text(path, json.dumps(metrics._clean(payload), sort_keys=True) + "\n")


def read_detection(path) -> dict:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
        d["events"] = [Event(float(e["onset"]), float(e["offset"]), int(e["class"])) for e in d["events"]]
        d["sequence"] = [int(c) for c in d["sequence"]]
        cl = d["cluster"]
        d["activity"] = np.asarray(cl["assignment"]) != cl["background_id"]
    except OSError as exc:
        raise DataError(f"{path}: cannot read detection ({exc})") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed detection file ({exc})") from exc
    return d


# --- eval --------------------------------------------------------------------


def build_report(cfg: RunConfig, records, hyps: dict, primary: str | None = None) -> dict:
    """``hyps`` maps distance kind to a per-record list of detection dicts."""
    primary = primary or (cfg.distance if cfg.distance in hyps else sorted(hyps)[0])
    main = hyps[primary]
    ref = [r.strong for r in records]
    hyp = [d["events"] for d in main]
    classes = list(range(cfg.n_classes))
    overall = metrics.segment_metrics(ref, hyp, cfg.clip_s, n_classes=cfg.n_classes)
    per_class, sd, excluded = metrics.per_class_er(ref, hyp, classes, cfg.clip_s)
    tagging = metrics.tagging_metrics([r.sld for r in records], [d["sequence"] for d in main], classes)
    exact, edit = metrics.sequence_accuracy([r.sld for r in records], [d["sequence"] for d in main])
    precision = {}
    for kind, dets in sorted(hyps.items()):
        truth = [metrics.frame_activity(r.strong, len(d["activity"]), d["hop_seconds"])
                 for r, d in zip(records, dets)]
        precision[kind] = metrics.cluster_precision(truth, [d["activity"] for d in dets])
    d_dominant = overall.d_rate >= overall.i_rate and overall.d_rate >= overall.s_rate
    return {
        "n_clips": len(records),
        "distance": primary,
        "overall": overall.to_dict(),
        "per_class": {"er": per_class, "er_sd": sd, "excluded": excluded},
        "tagging": asdict(tagging),
        "sequence": {"exact_match": exact, "mean_edit_rate": edit},
        "cluster_precision": precision,
        "d_rate_dominant": d_dominant,
    }


def _hyps_from_dir(records, hyp_dir) -> list:
    out = []
    for r in records:
        path = Path(hyp_dir) / f"{r.clip_id}.json"
        if not path.exists():
            raise DataError(f"{path}: missing detection for clip {r.clip_id}")
        out.append(read_detection(path))
    return out


def run_eval(cfg: RunConfig, data_dir, hyp_dirs: dict, out_prefix=None, split: str = "test") -> dict:
    records = load_records(data_dir, split)
    if not records:
        raise DataError(f"{data_dir}: no clips in split {split!r}")
    hyps = {kind: _hyps_from_dir(records, d) for kind, d in hyp_dirs.items()}
    report = build_report(cfg, records, hyps)
    if out_prefix is not None:
        write_report(report, out_prefix)
    return report


def write_report(report: dict, out_prefix) -> tuple:
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = out_prefix.with_suffix(".json")
    csv_path = out_prefix.with_suffix(".csv")
    _write_text(json_path, metrics.report_json(report))
    _write_text(csv_path, metrics.report_csv(report))
    return json_path, csv_path


# --- plot / report -----------------------------------------------------------


def run_plot(cfg: RunConfig, checkpoint, data_dir, clip_id: str, out_path, distance=None) -> Path:
    records = [r for r in load_records(data_dir) if r.clip_id == clip_id]
    if not records:
        raise DataError(f"{data_dir}: clip {clip_id!r} not in manifest")
    model = nnet.load_checkpoint(checkpoint)
    kind = distance or cfg.distance
    det = detect_records(cfg, model, records, data_dir, (kind,))[0][kind]
    return plotting.plot_clip(out_path, det, records[0].strong, title=f"{clip_id} ({kind})")


def run_report(cfg: RunConfig, checkpoint, data_dir, out_dir, split: str = "test", n_plots: int = 1) -> dict:
    """Detect with both distances, evaluate, and write report tables plus figures to ``out_dir``."""
    out_dir = Path(out_dir)
    records = load_records(data_dir, split)
    if not records:
        raise DataError(f"{data_dir}: no clips in split {split!r}")
    model = nnet.load_checkpoint(checkpoint)
    dets = detect_records(cfg, model, records, data_dir, DISTANCES)
    hyps = {}
    for kind in DISTANCES:
        hyp_dir = out_dir / f"hyp_{kind}"
        hyp_dir.mkdir(parents=True, exist_ok=True)
        for rec, d in zip(records, dets):
            write_detection(hyp_dir / f"{rec.clip_id}.json", rec, d[kind])
        hyps[kind] = _hyps_from_dir(records, hyp_dir)
    report = build_report(cfg, records, hyps)
    write_report(report, out_dir / "report")
    fig_dir = out_dir / "figures"
    plotting.plot_class_er(fig_dir / "class_er.png", report["per_class"]["er"], report["overall"]["er"])
    plotting.plot_tagging(fig_dir / "tagging_accuracy.png", report["tagging"]["class_accuracy"])
    plotting.plot_cluster_precision(fig_dir / "cluster_precision.png", report["cluster_precision"])
    for rec, d in list(zip(records, dets))[:n_plots]:
        plotting.plot_clip(fig_dir / f"clip_{rec.clip_id}.png", d[cfg.distance], rec.strong,
                           title=f"{rec.clip_id} ({cfg.distance})")
    return report
