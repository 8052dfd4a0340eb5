"""On-disk checkpoint directories.

Layout::

    <dir>/meta.json     kind, format version, estimator params, fitted attributes
    <dir>/params.pt     torch state dict
    <dir>/labels.txt    label-map sidecar (backbone checkpoints)
    <dir>/loss.log      one "step loss" line per optimisation step
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .exceptions import ValidationError
from .labeling import LabelMap

FORMAT_VERSION = 1
KINDS = ("backbone", "subjudge")


def write_loss_log(losses, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for step, loss in enumerate(losses, start=1):
            fh.write(f"{step} {loss!r}\n")


def read_loss_log(path) -> list[float]:
    with open(path, encoding="utf-8") as fh:
        return [float(line.split()[1]) for line in fh if line.strip()]


@dataclass
class Checkpoint:
    kind: str
    model: object
    label_map: LabelMap | None = None
    step: int = 0
    loss_curve: list[float] = field(default_factory=list)

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "kind": self.kind,
            "format_version": FORMAT_VERSION,
            "step": self.step,
            **self.model._checkpoint_meta(),
        }
        with open(path / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        torch.save(self.model._state_dict(), path / "params.pt")
        if self.label_map is not None:
            self.label_map.save(path / "labels.txt")
        write_loss_log(self.loss_curve, path / "loss.log")
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        from .backbone import SpeakerEmbedder
        from .subjudge import SubJudgeClassifier

        path = Path(path)
        if not (path / "meta.json").exists():
            raise FileNotFoundError(f"no checkpoint at {path}")
        with open(path / "meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        kind = meta.get("kind")
        if kind not in KINDS:
            raise ValidationError(f"unknown checkpoint kind {kind!r}")
        est_cls = SpeakerEmbedder if kind == "backbone" else SubJudgeClassifier
        state = torch.load(path / "params.pt", weights_only=True)
        model = est_cls._from_checkpoint(meta, state)
        label_map = LabelMap.load(path / "labels.txt") if (path / "labels.txt").exists() else None
        losses = read_loss_log(path / "loss.log") if (path / "loss.log").exists() else []
        return cls(kind, model, label_map, int(meta.get("step", 0)), losses)
