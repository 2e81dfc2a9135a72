"""Run configuration: one flat set of key=value settings shared by every subcommand.

Precedence, lowest first: dataclass defaults, a config file, ``SLDSED_<KEY>``
environment variables, explicit command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import DataError, InvalidArgument
from .nnet import Architecture, TrainConfig
from .synth import DatasetConfig

ENV_PREFIX = "SLDSED_"


@dataclass(frozen=True)
class RunConfig:
    # dataset
    n_classes: int = 5
    n_train: int = 200
    n_validation: int = 40
    n_test: int = 40
    snr_db: float = 0.0
    clip_s: float = 10.0
    sample_rate: int = 32000
    min_events: int = 2
    max_events: int = 4
    # features
    n_mels: int = 64
    window_ms: float = 64.0
    overlap: float = 0.5
    fmin: float = 50.0
    # model
    channels: str = "16,32,32"
    pools: str = "2,2,2"
    hidden: int = 64
    # training
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 60
    patience: int = 8
    dropout: float = 0.2
    clip_norm: float = 5.0
    folds: int = 1
    # stage 2
    distance: str = "pearson"
    min_dur: float = 0.1
    gap_merge: float = 0.1
    # global
    seed: int = 7
    jobs: int = 1

    def __post_init__(self):
        if self.distance not in ("pearson", "euclidean"):
            raise InvalidArgument(f"distance must be pearson or euclidean, got {self.distance!r}")
        if self.folds < 1:
            raise InvalidArgument("folds must be >= 1")
        if self.jobs < 1:
            raise InvalidArgument("jobs must be >= 1")
        if self.min_dur < 0 or self.gap_merge < 0:
            raise InvalidArgument("min_dur and gap_merge must be >= 0")
        _int_tuple(self.channels, "channels")
        _int_tuple(self.pools, "pools")

    # --- derived component configs ---

    def dataset(self) -> DatasetConfig:
        return DatasetConfig(n_classes=self.n_classes, n_train=self.n_train, n_validation=self.n_validation,
                             n_test=self.n_test, seed=self.seed, snr_db=self.snr_db, clip_s=self.clip_s,
                             sample_rate=self.sample_rate, min_events=self.min_events,
                             max_events=self.max_events)

    def architecture(self) -> Architecture:
        return Architecture(n_classes=self.n_classes, n_mels=self.n_mels,
                            channels=_int_tuple(self.channels, "channels"),
                            pools=_int_tuple(self.pools, "pools"), hidden=self.hidden)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience, dropout=self.dropout,
                           clip_norm=self.clip_norm, seed=self.seed)

    def feature_kwargs(self) -> dict:
        return {"n_mels": self.n_mels, "window_ms": self.window_ms, "overlap": self.overlap, "fmin": self.fmin}

    # --- text form ---

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_text())
        tmp.replace(path)

    def updated(self, values: dict) -> "RunConfig":
        return replace(self, **{k: _coerce(k, v) for k, v in values.items()})


def _int_tuple(text, name) -> tuple:
    try:
        out = tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise InvalidArgument(f"{name} must be a comma-separated list of integers, got {text!r}") from None
    if not out:
        raise InvalidArgument(f"{name} is empty")
    return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _TYPES:
        raise InvalidArgument(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if kind == "str":
        return str(value)
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise InvalidArgument(f"{key}: cannot parse {value!r} as {kind}") from None
    return value


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise DataError(f"{source}:{n}: unknown key {key!r}")
        values[key] = value
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in _TYPES:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = environ[name]
    return out


def load(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Defaults, then ``path``, then environment, then ``overrides`` (flags)."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"{path}: cannot read config ({exc})") from exc
        values.update(parse_text(text, str(path)))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig().updated(values)
