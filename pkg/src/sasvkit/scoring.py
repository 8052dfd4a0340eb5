"""Cosine trial scoring, spoof-posterior fusion, and score files.

Score file lines::

    enroll_ids test_id label asv p_hifigan p_bigvgan fused

with ``NA`` marking absent values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import TrialRecord, index_records, resolve_audio_path
from .exceptions import ParseError, ValidationError
from .frontend import read_wav
from .metrics import MetricConfig, a_dcf, partition_scores

SUBJUDGES = ("hifigan", "bigvgan")

# The four evaluation configurations: which sub-judges contribute to the fused score.
CONFIGURATIONS = {
    "original": (),
    "+hifigan": ("hifigan",),
    "+bigvgan": ("bigvgan",),
    "+hifigan+bigvgan": ("hifigan", "bigvgan"),
}


@dataclass
class ScoreEntry:
    trial: TrialRecord
    asv_score: float
    spoof_posteriors: dict = field(default_factory=dict)
    fused_score: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.asv_score):
            raise ValidationError(f"non-finite asv score for trial {self.trial.test_utt_id!r}")
        for name, p in self.spoof_posteriors.items():
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"posterior {name}={p} outside [0, 1]")


@dataclass(frozen=True)
class FusionConfig:
    """``fused = asv - sum_k alpha_k * p_spoof_k``; an empty mapping is backbone-only."""

    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        w = {str(k): float(v) for k, v in dict(self.weights).items()}
        for name, a in w.items():
            if not math.isfinite(a) or a < 0:
                raise ValidationError(f"fusion weight {name}={a} must be finite and >= 0")
        object.__setattr__(self, "weights", w)

    @property
    def l1(self) -> float:
        return sum(self.weights.values())

    def masked(self, names) -> "FusionConfig":
        """Keep only the sub-judges in ``names``."""
        return FusionConfig({k: v for k, v in self.weights.items() if k in names})

    @classmethod
    def parse(cls, spec: str) -> "FusionConfig":
        """Parse ``"hifigan=0.5,bigvgan=0.2"``."""
        weights = {}
        for part in filter(None, (p.strip() for p in spec.split(","))):
            name, sep, value = part.partition("=")
            if not sep:
                raise ValidationError(f"fusion term {part!r} should look like name=alpha")
            weights[name.strip()] = float(value)
        return cls(weights)

    def __str__(self):
        return ",".join(f"{k}={v:g}" for k, v in sorted(self.weights.items())) or "none"


# ---------------------------------------------------------------------------
# Trial scoring
# ---------------------------------------------------------------------------


def cosine_score(enroll_embeddings, test_embedding) -> float:
    """Cosine between the length-normalised mean enrollment embedding and the test embedding."""
    enroll = np.atleast_2d(np.asarray(enroll_embeddings, dtype=np.float64))
    test = np.asarray(test_embedding, dtype=np.float64)
    mean = enroll.mean(axis=0)
    denom = np.linalg.norm(mean) * np.linalg.norm(test)
    if denom == 0:
        raise ValidationError("cannot score a zero-norm embedding")
    return float(np.clip(mean @ test / denom, -1.0, 1.0))


class UtteranceCache:
    """Lazily loads audio and memoises per-utterance model outputs."""

    def __init__(self, records, root, sample_rate: int):
        self.records = index_records(records)
        self.root = root
        self.sample_rate = sample_rate
        self._audio = {}
        self._outputs = {}

    def audio(self, utt_id: str) -> np.ndarray:
        if utt_id not in self._audio:
            if utt_id not in self.records:
                raise FileNotFoundError(f"utterance {utt_id!r} is not in the manifest")
            path = resolve_audio_path(self.records[utt_id], self.root)
            if not path.exists():
                raise FileNotFoundError(f"audio for {utt_id!r} not found: {path}")
            self._audio[utt_id] = read_wav(path, self.sample_rate).samples
        return self._audio[utt_id]

    def output(self, key: str, utt_id: str, fn):
        slot = (key, utt_id)
        if slot not in self._outputs:
            self._outputs[slot] = fn(self.audio(utt_id))
        return self._outputs[slot]


def score_trial(trial: TrialRecord, embedder, cache: UtteranceCache) -> float:
    def embed(x):
        return embedder.transform([x])[0]

    enroll = [cache.output("asv", u, embed) for u in trial.enroll_utt_ids]
    test = cache.output("asv", trial.test_utt_id, embed)
    return cosine_score(enroll, test)


def score_trials(trials, embedder, records, root, subjudges: Mapping | None = None) -> list[ScoreEntry]:
    """Score every trial with the backbone and attach each sub-judge's test-side posterior."""
    subjudges = dict(subjudges or {})
    cache = UtteranceCache(records, root, embedder._fe().sample_rate)
    entries = []
    for t in trials:
        asv = score_trial(t, embedder, cache)
        posts = {}
        for name, clf in subjudges.items():
            posts[name] = float(cache.output(name, t.test_utt_id, lambda x, c=clf: c.predict_proba([x])[0, 1]))
        entries.append(ScoreEntry(t, asv, posts))
    return entries


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def fuse_scores(entries: Sequence[ScoreEntry], fusion: FusionConfig) -> list[ScoreEntry]:
    out = []
    for e in entries:
        fused = e.asv_score
        for name, alpha in fusion.weights.items():
            if name not in e.spoof_posteriors:
                if alpha == 0:
                    continue
                raise ValidationError(f"trial {e.trial.test_utt_id!r} lacks a {name!r} posterior")
            fused -= alpha * e.spoof_posteriors[name]
        out.append(replace(e, fused_score=fused))
    return out


def alpha_grid(names: Sequence[str], values: Sequence[float]) -> list[FusionConfig]:
    """Cartesian grid of fusion weights over ``names``."""
    return [FusionConfig(dict(zip(names, combo))) for combo in itertools.product(values, repeat=len(names))]


DEFAULT_ALPHAS = tuple(np.round(np.linspace(0.0, 2.0, 21), 10))


def calibrate_fusion(entries: Sequence[ScoreEntry], grid: Sequence[FusionConfig], metric_cfg=None) -> FusionConfig:
    """Pick the grid point with the lowest fused a-DCF; ties go to the smaller L1 norm."""
    grid = list(grid)
    if not grid:
        raise ValidationError("calibration grid is empty")
    metric_cfg = metric_cfg or MetricConfig()
    best, best_key = None, None
    for cand in grid:
        g = partition_scores(fuse_scores(entries, cand), "fused")
        value, _ = a_dcf(g["target"], g["nontarget"], g["spoof"], metric_cfg)
        key = (value, cand.l1)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    return best


class FusionCalibrator(BaseEstimator):
    """Grid-searched linear fusion as an estimator.

    ``X`` columns are ``[asv, p_<subjudge_1>, ...]`` in the order of
    ``subjudges``; ``y`` holds the trial labels.
    """

    def __init__(self, subjudges=SUBJUDGES, alphas=DEFAULT_ALPHAS, metric_config=None):
        self.subjudges = subjudges
        self.alphas = alphas
        self.metric_config = metric_config

    def _entries(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        names = list(self.subjudges)
        if X.ndim != 2 or X.shape[1] != 1 + len(names):
            raise ValidationError(f"X must have shape [n, {1 + len(names)}]")
        labels = y if y is not None else ["target"] * len(X)
        return [
            ScoreEntry(TrialRecord(("-",), str(i), lab), row[0], dict(zip(names, row[1:])))
            for i, (row, lab) in enumerate(zip(X, labels))
        ]

    def fit(self, X, y):
        entries = self._entries(X, y)
        self.fusion_ = calibrate_fusion(entries, alpha_grid(list(self.subjudges), self.alphas), self.metric_config)
        self.alpha_ = np.array([self.fusion_.weights[n] for n in self.subjudges])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "fusion_")
        X = np.asarray(X, dtype=np.float64)
        return X[:, 0] - X[:, 1:] @ self.alpha_

    def score(self, X, y):
        """Negative a-DCF of the fused scores (higher is better)."""
        s = self.decision_function(X)
        y = np.asarray(y)
        value, _ = a_dcf(s[y == "target"], s[y == "nontarget"], s[y == "spoof"], self.metric_config)
        return -value


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


def write_scores(entries: Sequence[ScoreEntry], path, subjudges=SUBJUDGES) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            posts = [_fmt(e.spoof_posteriors.get(n)) for n in subjudges]
            fields = [",".join(e.trial.enroll_utt_ids), e.trial.test_utt_id, e.trial.label, _fmt(e.asv_score)]
            fh.write(" ".join(fields + posts + [_fmt(e.fused_score)]) + "\n")


def read_scores(path, subjudges=SUBJUDGES) -> list[ScoreEntry]:
    n_fields = 5 + len(subjudges)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) != n_fields:
                raise ParseError(f"expected {n_fields} fields, found {len(fields)}", path, lineno)
            try:
                trial = TrialRecord(tuple(fields[0].split(",")), fields[1], fields[2])
                if fields[3] == "NA":
                    raise ValidationError("asv score is required")
                posts = {n: float(v) for n, v in zip(subjudges, fields[4:-1]) if v != "NA"}
                fused = None if fields[-1] == "NA" else float(fields[-1])
                entries.append(ScoreEntry(trial, float(fields[3]), posts, fused))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return entries


def available_configurations(entries: Sequence[ScoreEntry]) -> dict[str, tuple]:
    """The subset of the four configurations whose sub-judge columns are present everywhere."""
    present = {n for n in SUBJUDGES if entries and all(n in e.spoof_posteriors for e in entries)}
    return {name: subs for name, subs in CONFIGURATIONS.items() if set(subs) <= present}
