import json

import numpy as np
import pytest

from sldsed import config, pipeline
from sldsed.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from sldsed.errors import DataError, InvalidArgument, NumericFailure
from sldsed.synth import manifest_hash

SMALL = ["--classes", "3", "--sample-rate", "8000", "--clip-seconds", "4"]
TINY_NET = ["--channels", "4,4,4", "--hidden", "8", "--epochs", "2", "--batch-size", "4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "ds"
    assert main(["synth", "--out", str(data), *SMALL, "--train", "8", "--validation", "4", "--test", "4",
                 "--max-events", "2", "--seed", "3"]) == EXIT_OK
    assert main(["train", "--data", str(data), "--out", str(root / "run"), *TINY_NET]) == EXIT_OK
    return root


def test_config_round_trip_and_precedence(tmp_path):
    cfg = config.RunConfig(n_classes=4, learning_rate=3e-4, channels="8,8", pools="2,2")
    path = tmp_path / "run.cfg"
    cfg.save(path)
    assert config.load(path) == cfg
    env = {"SLDSED_N_CLASSES": "6", "SLDSED_DISTANCE": "euclidean"}
    merged = config.load(path, {"n_classes": 9}, environ=env)
    assert merged.n_classes == 9 and merged.distance == "euclidean" and merged.learning_rate == 3e-4


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_classes = 3\nnot a pair\n")
    with pytest.raises(DataError, match="bad.cfg:2"):
        config.load(bad)
    bad.write_text("colour = blue\n")
    with pytest.raises(DataError, match="unknown key"):
        config.load(bad)
    with pytest.raises(InvalidArgument):
        config.load(None, {"n_classes": "many"})
    with pytest.raises(InvalidArgument):
        config.RunConfig(distance="cosine")


def test_fold_indices_partition():
    folds = pipeline.fold_indices(10, 4, seed=1)
    assert len(folds) == 4 and sorted(sum(folds, [])) == list(range(10))
    assert folds == pipeline.fold_indices(10, 4, seed=1)
    with pytest.raises(InvalidArgument):
        pipeline.fold_indices(3, 4, seed=0)


def test_synth_counts_and_rerun_identical(workspace, tmp_path, capsys):
    lines = (workspace / "ds" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 16
    again = tmp_path / "nested" / "ds"  # missing parents are created
    assert main(["synth", "--out", str(again), *SMALL, "--train", "8", "--validation", "4", "--test", "4",
                 "--max-events", "2", "--seed", "3"]) == EXIT_OK
    assert manifest_hash(again / "manifest.jsonl") == manifest_hash(workspace / "ds" / "manifest.jsonl")
    assert capsys.readouterr().out.startswith("split,class,events\n")


def test_train_writes_checkpoint_and_is_deterministic(workspace, tmp_path):
    run = workspace / "run"
    assert (run / "model.ckpt").exists() and (run / "train_log.csv").exists()
    summary = json.loads((run / "train_summary.json").read_text())
    assert np.isfinite(summary["best_val_loss"])
    assert main(["train", "--data", str(workspace / "ds"), "--out", str(tmp_path / "r2"), *TINY_NET]) == EXIT_OK
    assert (tmp_path / "r2" / "model.ckpt").read_bytes() == (run / "model.ckpt").read_bytes()


def test_train_folds(workspace, tmp_path):
    out = tmp_path / "folds"
    args = ["train", "--data", str(workspace / "ds"), "--out", str(out), *TINY_NET, "--epochs", "1", "--folds", "4"]
    assert main(args) == EXIT_OK
    summary = json.loads((out / "train_summary.json").read_text())
    assert [r["fold"] for r in summary["fold_results"]] == [0, 1, 2, 3]
    assert all((out / f"fold{f}.ckpt").exists() for f in range(4))
    losses = [r["best_val_loss"] for r in summary["fold_results"]]
    assert summary["selected_fold"] == int(np.argmin(losses))
    assert summary["mean_val_loss"] == pytest.approx(np.mean(losses), abs=1e-5)
    assert (out / "model.ckpt").read_bytes() == (out / f"fold{summary['selected_fold']}.ckpt").read_bytes()


def test_detect_eval_plot_report(workspace, capsys):
    ds, ckpt = workspace / "ds", workspace / "run" / "model.ckpt"
    for kind in ("pearson", "euclidean"):
        assert main(["detect", "--checkpoint", str(ckpt), "--data", str(ds), "--out", str(workspace / kind),
                     "--distance", kind]) == EXIT_OK
        assert len(list((workspace / kind).glob("test_*.json"))) == 4
    masks = {k: json.loads((workspace / k / "test_0000.json").read_text())["cluster"] for k in ("pearson", "euclidean")}
    assert {m["distance"] for m in masks.values()} == {"pearson", "euclidean"}

    assert main(["eval", "--data", str(ds), "--hyp", f"pearson={workspace / 'pearson'}",
                 "--hyp", f"euclidean={workspace / 'euclidean'}", "--out", str(workspace / "ev" / "m")]) == EXIT_OK
    report = json.loads((workspace / "ev" / "m.json").read_text())
    assert set(report["cluster_precision"]) == {"pearson", "euclidean"}
    assert (workspace / "ev" / "m.csv").read_text().startswith("section,key,value\n")

    fig = workspace / "clip.png"
    assert main(["plot", "--checkpoint", str(ckpt), "--data", str(ds), "--clip", "test_0002", "--out", str(fig)]) == 0
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    out = workspace / "report"
    assert main(["report", "--checkpoint", str(ckpt), "--data", str(ds), "--out", str(out)]) == EXIT_OK
    assert {p.name for p in (out / "figures").iterdir()} >= {"class_er.png", "tagging_accuracy.png",
                                                             "cluster_precision.png", "clip_test_0000.png"}
    assert capsys.readouterr().out.splitlines()[-1].startswith("cluster_precision_pearson,")


def test_eval_perfect_and_empty_hypotheses(workspace):
    ds = workspace / "ds"
    records = pipeline.load_records(ds, "test")
    cfg = config.load(ds / "run.cfg")

    def hyp(events_of):
        return [{"events": events_of(r), "sequence": r.sld, "activity": np.zeros(10, bool), "hop_seconds": 0.4}
                for r in records]

    perfect = pipeline.build_report(cfg, records, {"pearson": hyp(lambda r: r.strong)})
    assert perfect["overall"]["er"] == 0.0 and perfect["overall"]["er_equals_d_plus_i_plus_s"]
    empty = pipeline.build_report(cfg, records, {"pearson": hyp(lambda r: [])})
    assert empty["overall"]["er"] == 1.0 and empty["overall"]["d_rate"] == 1.0


def test_exit_codes(workspace, tmp_path, capsys, monkeypatch):
    assert main([]) == EXIT_USAGE
    assert main(["detect", "--nope"]) == EXIT_USAGE
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    corrupt = tmp_path / "bad.ckpt"
    corrupt.write_bytes(b"not a checkpoint")
    assert main(["detect", "--checkpoint", str(corrupt), "--data", str(workspace / "ds"),
                 "--out", str(tmp_path / "h")]) == EXIT_DATA
    err = capsys.readouterr().err.strip().splitlines()
    assert str(corrupt) in err[-1]
    assert all(len(block.splitlines()) == 1 for block in err)

    def explode(*a, **k):
        raise NumericFailure("non-finite activations", layer=2)

    monkeypatch.setattr(pipeline, "run_detect", explode)
    assert main(["detect", "--checkpoint", str(corrupt), "--data", str(workspace / "ds"),
                 "--out", str(tmp_path / "h")]) == EXIT_NUMERIC
    assert capsys.readouterr().err.count("\n") == 1


def test_env_override_reaches_subcommand(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("SLDSED_DISTANCE", "euclidean")
    out = tmp_path / "hyp"
    assert main(["detect", "--checkpoint", str(workspace / "run" / "model.ckpt"), "--data", str(workspace / "ds"),
                 "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "test_0000.json").read_text())["cluster"]["distance"] == "euclidean"
