"""Experiment configuration: one YAML file describes a full run.

Example::

    seed: 0
    paths: {corpus: data/manifest.txt, trials: data/trials.txt, workdir: exp}
    frontend: {n_mels: 40, segment_s: 1.0}
    labeling: multi_global
    backbone: {preset: resnet-tiny, embedding_dim: 64, train: {n_steps: 200}}
    subjudges:
      hifigan: {preset: tiny, train: {n_steps: 200}}
    fusion: calibrate
    metrics: {}

Relative paths resolve against the config file's directory; the
``SASVKIT_WORKDIR`` environment variable overrides ``paths.workdir``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .backbone import BackboneConfig
from .exceptions import ConfigError, ValidationError
from .frontend import FrontendConfig
from .labeling import LabelStrategy
from .metrics import MetricConfig
from .scoring import SUBJUDGES, FusionConfig
from .subjudge import SubJudgeConfig

WORKDIR_ENV = "SASVKIT_WORKDIR"


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    segment_s: float | None = None  # sub-judge crop length; backbone uses frontend.segment_s

    @classmethod
    def from_dict(cls, data, where: str) -> "TrainConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(where, f"unknown fields {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.n_steps < 1:
            raise ConfigError(f"{where}.n_steps", "must be >= 1")
        if cfg.batch_size < 1:
            raise ConfigError(f"{where}.batch_size", "must be >= 1")
        if not cfg.learning_rate > 0:
            raise ConfigError(f"{where}.learning_rate", "must be positive")
        return cfg


@dataclass
class RunConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    labeling: LabelStrategy = LabelStrategy.MULTI_GLOBAL
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    backbone_train: TrainConfig = field(default_factory=TrainConfig)
    subjudges: dict = field(default_factory=dict)  # family -> SubJudgeConfig
    subjudge_train: dict = field(default_factory=dict)  # family -> TrainConfig
    fusion: FusionConfig | str = "calibrate"
    metrics: MetricConfig = field(default_factory=MetricConfig)
    corpus: Path | None = None
    trials: Path | None = None
    workdir: Path = Path("exp")
    seed: int = 0

    def checkpoint_dir(self, model: str) -> Path:
        if model == "backbone":
            return self.workdir / "backbone"
        return self.workdir / f"subjudge_{model}"

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a mapping")
        known = {"frontend", "labeling", "backbone", "subjudges", "fusion", "metrics", "paths", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("<root>", f"unknown sections {sorted(unknown)}")
        base = Path(base_dir)

        def section(name, build):
            try:
                return build(data.get(name))
            except ConfigError:
                raise
            except (ValidationError, TypeError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from None

        frontend = section("frontend", lambda d: FrontendConfig(**(d or {})))
        labeling = section("labeling", lambda d: LabelStrategy(d or "multi_global"))

        bb = dict(data.get("backbone") or {})
        backbone_train = TrainConfig.from_dict(bb.pop("train", None), "backbone.train")
        backbone = section("backbone", lambda _: BackboneConfig.from_dict(bb))

        subjudges, subjudge_train = {}, {}
        for name, sj in dict(data.get("subjudges") or {}).items():
            if name not in SUBJUDGES:
                raise ConfigError(f"subjudges.{name}", f"unknown sub-judge; expected one of {SUBJUDGES}")
            sj = dict(sj or {})
            if sj.setdefault("family", name) != name:
                raise ConfigError(f"subjudges.{name}.family", f"must be {name!r}")
            subjudge_train[name] = TrainConfig.from_dict(sj.pop("train", None), f"subjudges.{name}.train")
            try:
                subjudges[name] = SubJudgeConfig.from_dict(sj)
            except ConfigError as exc:
                sub = exc.field.removeprefix("subjudge").lstrip(".")
                raise ConfigError(f"subjudges.{name}" + (f".{sub}" if sub else ""), exc.reason) from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"subjudges.{name}", str(exc)) from None

        fusion_raw = data.get("fusion", "calibrate")
        if fusion_raw == "calibrate":
            fusion = "calibrate"
        else:
            fusion = section("fusion", lambda d: FusionConfig(d or {}))
        metrics = section("metrics", MetricConfig.from_dict)

        paths = dict(data.get("paths") or {})
        unknown = set(paths) - {"corpus", "trials", "workdir"}
        if unknown:
            raise ConfigError("paths", f"unknown fields {sorted(unknown)}")

        def resolve(p):
            return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

        workdir = os.environ.get(WORKDIR_ENV) or paths.get("workdir", "exp")
        seed = data.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed", "must be an integer")
        return cls(
            frontend=frontend,
            labeling=labeling,
            backbone=backbone,
            backbone_train=backbone_train,
            subjudges=subjudges,
            subjudge_train=subjudge_train,
            fusion=fusion,
            metrics=metrics,
            corpus=resolve(paths.get("corpus")),
            trials=resolve(paths.get("trials")),
            workdir=resolve(workdir),
            seed=seed,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError("<file>", f"invalid YAML: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)


def load_yaml_mapping(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("<file>", f"{path} must contain a mapping")
    return data
