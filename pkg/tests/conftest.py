import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA_LINES = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    CRITERIA_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full desk-scale pipeline through the CLI: 5 classes, 200/40/40 clips, 0 dB SNR."""
    import json

    from sldsed.cli import main

    root = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    stamps = {}
    assert main(["synth", "--out", str(root / "ds"), "--classes", "5", "--train", "200", "--validation", "40",
                 "--test", "40", "--snr", "0", "--seed", "7"]) == 0
    stamps["synth"] = time.perf_counter() - start
    assert main(["train", "--data", str(root / "ds"), "--out", str(root / "run")]) == 0
    stamps["train"] = time.perf_counter() - start
    assert main(["report", "--checkpoint", str(root / "run" / "model.ckpt"), "--data", str(root / "ds"),
                 "--out", str(root / "report")]) == 0
    stamps["report"] = time.perf_counter() - start
    report = json.loads((root / "report" / "report.json").read_text())
    summary = json.loads((root / "run" / "train_summary.json").read_text())
    return {"root": root, "report": report, "train": summary, "elapsed": stamps["report"], "stamps": stamps}
