"""Manifest and trial-list I/O plus a deterministic synthetic micro-corpus.

Manifest lines hold four whitespace-separated fields::

    utt_id speaker_id source_tag audio_path

Trial lines hold three::

    enroll_id[,enroll_id...] test_id {target|nontarget|spoof}

Relative audio paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .exceptions import ParseError, ValidationError

BONAFIDE = "bonafide"
TRIAL_LABELS = ("target", "nontarget", "spoof")

# Longest analysis window used anywhere downstream (largest MRD FFT).
MIN_SEGMENT_SAMPLES = 2048


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    source_tag: str
    audio_path: str

    def __post_init__(self):
        for name in ("utt_id", "speaker_id", "source_tag", "audio_path"):
            value = getattr(self, name)
            if not value or any(c.isspace() for c in value):
                raise ValidationError(f"{name} must be a non-empty token, got {value!r}")

    @property
    def is_bonafide(self) -> bool:
        return self.source_tag == BONAFIDE


@dataclass(frozen=True)
class TrialRecord:
    enroll_utt_ids: tuple[str, ...]
    test_utt_id: str
    label: str

    def __post_init__(self):
        object.__setattr__(self, "enroll_utt_ids", tuple(self.enroll_utt_ids))
        if not self.enroll_utt_ids:
            raise ValidationError("trial needs at least one enrollment utterance")
        if self.label not in TRIAL_LABELS:
            raise ValidationError(f"unknown trial label {self.label!r}; expected one of {TRIAL_LABELS}")


@dataclass(frozen=True)
class MicroCorpusSpec:
    n_speakers: int = 4
    n_tts_systems: int = 2
    utts_per_cell: int = 6
    duration_s: float = 1.5
    sample_rate: int = 16000
    seed: int = 0
    # artifact strengths: tone level relative to utterance RMS, quantiser depth
    # of the first TTS system, per-utterance formant jitter
    tone_level: float = 0.05
    base_bits: int = 6
    formant_jitter: float = 0.08

    def __post_init__(self):
        for name in ("n_speakers", "n_tts_systems", "utts_per_cell", "sample_rate"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if not self.duration_s > 0:
            raise ValidationError(f"duration_s must be positive, got {self.duration_s!r}")
        if not self.tone_level >= 0:
            raise ValidationError(f"tone_level must be >= 0, got {self.tone_level!r}")
        if int(self.base_bits) != self.base_bits or not 4 <= self.base_bits <= 16:
            raise ValidationError(f"base_bits must be an integer in [4, 16], got {self.base_bits!r}")
        if not 0 <= self.formant_jitter < 0.5:
            raise ValidationError(f"formant_jitter must be in [0, 0.5), got {self.formant_jitter!r}")
        if self.n_samples < MIN_SEGMENT_SAMPLES:
            raise ValidationError(
                f"duration_s*sample_rate = {self.n_samples} is below the "
                f"minimum segment of {MIN_SEGMENT_SAMPLES} samples"
            )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    @classmethod
    def from_dict(cls, data: dict) -> "MicroCorpusSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown micro-corpus fields: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Manifest / trial I/O
# ---------------------------------------------------------------------------


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, stripped.split()


def load_manifest(path) -> list[UtteranceRecord]:
    """Read a manifest file, rejecting malformed lines and duplicate ids."""
    records = []
    seen = {}
    for lineno, fields in _content_lines(path):
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, found {len(fields)}", path, lineno)
        try:
            rec = UtteranceRecord(*fields)
        except ValidationError as exc:
            raise ParseError(str(exc), path, lineno) from None
        if rec.utt_id in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate utt_id {rec.utt_id!r} (first seen on line {seen[rec.utt_id]})"
            )
        seen[rec.utt_id] = lineno
        records.append(rec)
    return records


def write_manifest(records: Iterable[UtteranceRecord], path) -> None:
    records = list(records)
    ids = [r.utt_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate utt_id in records")
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.utt_id} {r.speaker_id} {r.source_tag} {r.audio_path}\n")


def load_trials(path) -> list[TrialRecord]:
    trials = []
    for lineno, fields in _content_lines(path):
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, found {len(fields)}", path, lineno)
        enroll, test, label = fields
        if label not in TRIAL_LABELS:
            raise ParseError(f"unknown trial label {label!r}", path, lineno)
        enroll_ids = tuple(e for e in enroll.split(","))
        if any(not e for e in enroll_ids):
            raise ParseError(f"empty enrollment id in {enroll!r}", path, lineno)
        trials.append(TrialRecord(enroll_ids, test, label))
    return trials


def write_trials(trials: Iterable[TrialRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{','.join(t.enroll_utt_ids)} {t.test_utt_id} {t.label}\n")


def resolve_audio_path(record: UtteranceRecord, root) -> Path:
    p = Path(record.audio_path)
    return p if p.is_absolute() else Path(root) / p


def index_records(records: Sequence[UtteranceRecord]) -> dict[str, UtteranceRecord]:
    return {r.utt_id: r for r in records}


def check_trials_resolve(trials: Sequence[TrialRecord], records: Sequence[UtteranceRecord]) -> None:
    """Raise if any trial references an utterance missing from ``records``."""
    known = index_records(records)
    for i, t in enumerate(trials):
        for uid in (*t.enroll_utt_ids, t.test_utt_id):
            if uid not in known:
                raise ValidationError(f"trial {i} references unknown utterance {uid!r}")


def split_by_trials(records, trials):
    """Partition records into (training, held-out) by trial membership.

    Any utterance referenced by a trial is held out so that models are
    never fitted on evaluation audio.
    """
    used = set()
    for t in trials:
        used.update(t.enroll_utt_ids)
        used.add(t.test_utt_id)
    train = [r for r in records if r.utt_id not in used]
    held = [r for r in records if r.utt_id in used]
    return train, held


# ---------------------------------------------------------------------------
# Synthetic micro-corpus
# ---------------------------------------------------------------------------


@dataclass
class _Speaker:
    formants: np.ndarray
    radii: np.ndarray


@dataclass
class _TTSSystem:
    tone_hz: float
    bits: int


def _speaker_params(seed: int, k: int) -> _Speaker:
    rng = np.random.default_rng([seed, 0, k])
    f1 = rng.uniform(300.0, 1200.0)
    f2 = rng.uniform(1500.0, 3800.0)
    return _Speaker(np.array([f1, f2]), rng.uniform(0.97, 0.99, size=2))


def _system_params(j: int, n_systems: int, sample_rate: int, base_bits: int) -> _TTSSystem:
    # j is 1-based; tones are spread over the upper band, away from the formant region.
    lo, hi = 4200.0, 0.45 * sample_rate
    tone = lo + (hi - lo) * (j - 1) / max(n_systems, 1)
    return _TTSSystem(tone_hz=float(tone), bits=base_bits - (j - 1) % 3)


def _synthesize(spec: MicroCorpusSpec, spk: _Speaker, system: _TTSSystem | None, rng) -> np.ndarray:
    sr = spec.sample_rate
    n = spec.n_samples
    x = rng.standard_normal(n)
    sos = signal.butter(4, [60.0, 0.45 * sr], btype="bandpass", fs=sr, output="sos")
    x = signal.sosfilt(sos, x)
    jitter = rng.uniform(1.0 - spec.formant_jitter, 1.0 + spec.formant_jitter, size=2)
    for f, r in zip(spk.formants * jitter, spk.radii):
        w = 2 * np.pi * f / sr
        a = [1.0, -2 * r * np.cos(w), r * r]
        x = signal.lfilter([1.0 - r], a, x)
    t = np.arange(n) / sr
    rate = rng.uniform(2.0, 6.0)
    x = x * (0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) ** 2)
    x = x / (np.sqrt(np.mean(x**2)) + 1e-12) * rng.uniform(0.05, 0.15)
    if system is not None:
        rms = np.sqrt(np.mean(x**2))
        x = x + spec.tone_level * rms * np.sin(2 * np.pi * system.tone_hz * t + rng.uniform(0, 2 * np.pi))
        half = 2 ** (system.bits - 1)
        x = np.round(x * half) / half
    return np.clip(x, -0.99, 0.99)


def _to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.round(x * 32767.0).astype("<i2")


def _n_dev(utts_per_cell: int) -> int:
    return utts_per_cell // 3


def _micro_trials(spec: MicroCorpusSpec, cells: dict) -> list[TrialRecord]:
    """Build the trial list over the held-out tail of every cell.

    Enrollment uses each speaker's first bona fide utterance; test
    utterances come from the last ``utts_per_cell // 3`` items of each cell
    (or the whole cell when that is zero).
    """
    rng = np.random.default_rng([spec.seed, 3])
    n_dev = _n_dev(spec.utts_per_cell)

    def dev_part(ids):
        return ids[-n_dev:] if n_dev else ids[1:]

    speakers = sorted({k for k, _ in cells})
    tags = sorted({tag for _, tag in cells if tag != BONAFIDE})
    trials = []
    for k in speakers:
        enroll = cells[(k, BONAFIDE)][0]
        trials.extend(TrialRecord((enroll,), u, "target") for u in dev_part(cells[(k, BONAFIDE)]))
        spoof = [u for tag in tags for u in (cells[(k, tag)][-n_dev:] if n_dev else cells[(k, tag)])]
        trials.extend(TrialRecord((enroll,), u, "spoof") for u in spoof)
        pool = [u for other in speakers if other != k for u in dev_part(cells[(other, BONAFIDE)])]
        if pool:
            take = min(len(pool), max(len(spoof), 1))
            picks = rng.choice(len(pool), size=take, replace=False)
            trials.extend(TrialRecord((enroll,), pool[i], "nontarget") for i in sorted(picks))
    return trials


def generate_micro_corpus(spec: MicroCorpusSpec, out_dir) -> tuple[Path, Path]:
    """Write a synthetic SASV corpus and return (manifest path, trial path).

    Every speaker has a bona fide cell and one cell per TTS system.  Bona
    fide audio is band-limited noise through a speaker-specific pair of
    resonators; TTS audio uses the same speaker filter and adds a
    system-specific tone plus amplitude quantisation.  Output is a pure
    function of ``spec``.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out_dir}")

    records = []
    cells: dict[tuple[str, str], list[str]] = {}
    for k in range(spec.n_speakers):
        spk = _speaker_params(spec.seed, k)
        speaker_id = f"spk{1001 + k}"
        for j in range(spec.n_tts_systems + 1):
            system = None if j == 0 else _system_params(j, spec.n_tts_systems, spec.sample_rate, spec.base_bits)
            tag = BONAFIDE if j == 0 else f"tts{j:02d}"
            ids = cells.setdefault((speaker_id, tag), [])
            for i in range(spec.utts_per_cell):
                rng = np.random.default_rng([spec.seed, 2, k, j, i])
                x = _synthesize(spec, spk, system, rng)
                utt_id = f"{speaker_id}-{tag}-{i:03d}"
                rel = f"wav/{utt_id}.wav"
                wavfile.write(out_dir / rel, spec.sample_rate, _to_pcm16(x))
                records.append(UtteranceRecord(utt_id, speaker_id, tag, rel))
                ids.append(utt_id)

    manifest_path = out_dir / "manifest.txt"
    trial_path = out_dir / "trials.txt"
    write_manifest(records, manifest_path)
    write_trials(_micro_trials(spec, cells), trial_path)
    return manifest_path, trial_path
