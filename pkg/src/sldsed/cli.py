"""Command-line entry point: synth, train, detect, eval, plot, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config, pipeline, synth
from .errors import DataError, InfeasibleLabel, InvalidArgument, NumericFailure

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(p, name, key, kind, help_text):
    p.add_argument(name, dest=f"cfg_{key}", type=kind, default=None, metavar=key.upper(), help=help_text)


def _common(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    _flag(p, "--seed", "seed", int, "global seed")
    _flag(p, "--jobs", "jobs", int, "worker threads for per-clip work")
    _flag(p, "--classes", "n_classes", int, "number of event classes")
    _flag(p, "--sample-rate", "sample_rate", int, "audio sample rate (Hz)")
    _flag(p, "--clip-seconds", "clip_s", float, "clip length (s)")
    _flag(p, "--n-mels", "n_mels", int, "mel bands")


def _stage2(p):
    p.add_argument("--distance", dest="cfg_distance", choices=pipeline.DISTANCES, default=None)
    _flag(p, "--min-dur", "min_dur", float, "drop events shorter than this (s)")
    _flag(p, "--gap-merge", "gap_merge", float, "merge same-class gaps up to this (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sldsed", description="Sound event detection from sequentially labelled data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    _flag(p, "--train", "n_train", int, "training clips")
    _flag(p, "--validation", "n_validation", int, "validation clips")
    _flag(p, "--test", "n_test", int, "test clips")
    _flag(p, "--snr", "snr_db", float, "event-to-background ratio (dB)")
    _flag(p, "--min-events", "min_events", int, "fewest events per clip")
    _flag(p, "--max-events", "max_events", int, "most events per clip")

    p = sub.add_parser("train", help="train the tagger with the CTC loss")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _flag(p, "--folds", "folds", int, "k-fold cross-validation over the training split")
    _flag(p, "--epochs", "max_epochs", int, "maximum epochs")
    _flag(p, "--patience", "patience", int, "early-stopping patience (epochs)")
    _flag(p, "--batch-size", "batch_size", int, "clips per batch")
    _flag(p, "--lr", "learning_rate", float, "Adam learning rate")
    _flag(p, "--dropout", "dropout", float, "dropout rate")
    _flag(p, "--clip-norm", "clip_norm", float, "global gradient-norm cap")
    _flag(p, "--channels", "channels", str, "conv channels, comma separated")
    _flag(p, "--pools", "pools", str, "frequency pool sizes, comma separated")
    _flag(p, "--hidden", "hidden", int, "GRU units per direction")

    p = sub.add_parser("detect", help="detect events, one JSON per clip")
    _common(p)
    _stage2(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=synth.SPLITS)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score detections against the manifest")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hyp", type=Path, required=True, action="append",
                   help="detection directory; repeat as KIND=DIR to compare distances")
    p.add_argument("--split", default="test", choices=synth.SPLITS)
    p.add_argument("--out", type=Path, help="output prefix for .json and .csv")

    p = sub.add_parser("plot", help="stacked feature/spike/activity figure for one clip")
    _common(p)
    _stage2(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="detect with both distances, evaluate, write tables and figures")
    _common(p)
    _stage2(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=synth.SPLITS)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plots", type=int, default=1, help="number of clip figures")
    return parser


def _config(args) -> config.RunConfig:
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    path = args.config
    if path is None and getattr(args, "data", None) is not None and (args.data / "run.cfg").exists():
        path = args.data / "run.cfg"  # inherit dataset settings
    return config.load(path, flags)


def _hyp_dirs(values, default_kind) -> dict:
    out = {}
    for v in values:
        text = str(v)
        kind, sep, rest = text.partition("=")
        if sep and kind in pipeline.DISTANCES:
            out[kind] = Path(rest)
        else:
            out[default_kind] = Path(text)
    return out


def _print_metrics(report: dict) -> None:
    o = report["overall"]
    print("metric,value")
    for key in ("er", "f_score", "precision", "recall", "d_rate", "i_rate", "s_rate"):
        print(f"{key},{o[key]:.4f}")
    print(f"er_sd,{report['per_class']['er_sd']:.4f}")
    print(f"sequence_exact_match,{report['sequence']['exact_match']:.4f}")
    for kind, v in sorted(report["cluster_precision"].items()):
        print(f"cluster_precision_{kind},{v:.4f}")


def _run(args) -> int:
    cfg = _config(args)
    if args.command == "synth":
        records = pipeline.run_synth(cfg, args.out)
        print("split,class,events")
        for split, per in synth.class_counts(records).items():
            for cls, n in per.items():
                print(f"{split},{cls},{n}")
        print(f"# {len(records)} clips, manifest sha256 "
              f"{synth.manifest_hash(args.out / 'manifest.jsonl')}", file=sys.stderr)
    elif args.command == "train":
        def progress(row):
            print(f"epoch {row['epoch']} train {row['train_loss']:.4f} val {row['val_loss']:.4f}",
                  file=sys.stderr, flush=True)

        summary = pipeline.run_train(cfg, args.data, args.out, progress)
        print(f"best_val_loss,{summary['best_val_loss']:.6f}")
        if cfg.folds > 1:
            print(f"mean_val_loss,{summary['mean_val_loss']:.6f}")
            print(f"selected_fold,{summary['selected_fold']}")
    elif args.command == "detect":
        dets = pipeline.run_detect(cfg, args.checkpoint, args.data, args.out, args.split)
        warned = sum(d.warning is not None for d in dets)
        print(f"# {len(dets)} clips written to {args.out}" + (f", {warned} without spikes" if warned else ""),
              file=sys.stderr)
    elif args.command == "eval":
        report = pipeline.run_eval(cfg, args.data, _hyp_dirs(args.hyp, cfg.distance), args.out, args.split)
        _print_metrics(report)
    elif args.command == "plot":
        path = pipeline.run_plot(cfg, args.checkpoint, args.data, args.clip, args.out)
        print(path)
    elif args.command == "report":
        report = pipeline.run_report(cfg, args.checkpoint, args.data, args.out, args.split, args.plots)
        _print_metrics(report)
        if not report["d_rate_dominant"]:
            logging.getLogger("sldsed").warning("deletion rate is not the largest error component")
    return EXIT_OK


def _diagnostic(prefix: str, exc: BaseException) -> None:
    text = " ".join(str(exc).split()) or type(exc).__name__
    print(f"{prefix}: {text}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _diagnostic("usage error", exc)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except NumericFailure as exc:
        _diagnostic("numeric failure", exc)
        return EXIT_NUMERIC
    except (DataError, InfeasibleLabel, OSError) as exc:
        _diagnostic("data error", exc)
        return EXIT_DATA
    except InvalidArgument as exc:
        _diagnostic("usage error", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
