"""Waveform handling and the fixed time-frequency views fed to the networks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.io import wavfile

from .exceptions import ValidationError

MPD_PERIODS = (2, 3, 5, 7, 11)
MRD_RESOLUTIONS = ((512, 128), (1024, 256), (2048, 512))


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size < 1:
            raise ValidationError(f"waveform must be a non-empty 1-D array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("waveform contains non-finite samples")
        if not self.sample_rate > 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 80
    log_floor: float = 1e-6
    segment_s: float = 3.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if not 0 < self.hop_ms <= self.win_ms:
            raise ValidationError(f"need 0 < hop_ms <= win_ms, got hop={self.hop_ms} win={self.win_ms}")
        if self.win_length > self.n_fft:
            raise ValidationError(f"window of {self.win_length} samples exceeds n_fft={self.n_fft}")
        if not 1 <= self.n_mels <= self.n_fft // 2 + 1:
            raise ValidationError(f"n_mels must be in [1, n_fft/2+1], got {self.n_mels}")
        if not self.log_floor > 0:
            raise ValidationError("log_floor must be positive")
        if not self.segment_s > 0:
            raise ValidationError("segment_s must be positive")

    @property
    def win_length(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_s * self.sample_rate))

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LogMel:
    values: np.ndarray
    params: FrontendConfig

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def read_wav(path, target_rate: int | None = None) -> Waveform:
    """Load a PCM WAV file as float samples in [-1, 1)."""
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    w = Waveform(x, int(rate))
    if target_rate is not None and target_rate != w.sample_rate:
        w = resample(w, target_rate)
    return w


def resample(w: Waveform, target: int) -> Waveform:
    """Polyphase band-limited resampling to ``target`` Hz."""
    if not target > 0:
        raise ValidationError(f"target rate must be positive, got {target}")
    if target == w.sample_rate:
        return w
    g = gcd(int(target), int(w.sample_rate))
    y = signal.resample_poly(w.samples, int(target) // g, int(w.sample_rate) // g)
    return Waveform(y, int(target))


def crop_or_pad(w: Waveform, segment_s: float, offset: int = 0) -> Waveform:
    """Return exactly ``round(segment_s * sample_rate)`` samples.

    Long inputs are cropped starting at ``offset`` (clipped to the valid
    range); short inputs are tiled and truncated.
    """
    if not segment_s > 0:
        raise ValidationError("segment_s must be positive")
    n = int(round(segment_s * w.sample_rate))
    x = w.samples
    if x.size > n:
        start = int(np.clip(offset, 0, x.size - n))
        x = x[start : start + n]
    elif x.size < n:
        x = np.tile(x, -(-n // x.size))[:n]
    return Waveform(x, w.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-scale filters spanning 0 .. sample_rate/2, shape [n_mels, n_fft//2+1]."""
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _frames(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    return sliding_window_view(x, frame_length)[::hop]


def stft_magnitude(x: np.ndarray, n_fft: int, hop: int, win_length: int | None = None) -> np.ndarray:
    """Uncentred Hann-window STFT magnitude, shape [n_fft//2+1, n_frames]."""
    win_length = n_fft if win_length is None else win_length
    if x.size < win_length:
        raise ValidationError(f"signal of {x.size} samples is shorter than one window ({win_length})")
    window = signal.get_window("hann", win_length)
    frames = _frames(x, win_length, hop) * window
    spec = np.fft.rfft(frames, n=n_fft, axis=-1)
    return np.abs(spec).T


def log_mel(w: Waveform, cfg: FrontendConfig) -> LogMel:
    if w.sample_rate != cfg.sample_rate:
        raise ValidationError(f"waveform is at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    power = stft_magnitude(w.samples, cfg.n_fft, cfg.hop_length, cfg.win_length) ** 2
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate)
    return LogMel(np.log(fb @ power + cfg.log_floor), cfg)


def periodize(w: Waveform | np.ndarray, period: int) -> np.ndarray:
    """Zero-pad to a multiple of ``period`` and fold row-major into [ceil(T/p), p]."""
    if int(period) != period or period < 1:
        raise ValidationError(f"period must be a positive integer, got {period}")
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    pad = (-x.size) % period
    if pad:
        x = np.concatenate([x, np.zeros(pad, dtype=x.dtype)])
    return x.reshape(-1, period)


def multi_resolution_spectrograms(w: Waveform, resolutions=MRD_RESOLUTIONS) -> list[np.ndarray]:
    """One linear-magnitude STFT ([bins, frames]) per ``(n_fft, hop)`` pair."""
    out = []
    for n_fft, hop in resolutions:
        if hop < 1 or n_fft < 2 * hop:
            raise ValidationError(f"resolution ({n_fft}, {hop}) needs n_fft >= 2*hop >= 2")
        out.append(stft_magnitude(w.samples, n_fft, hop))
    return out


def load_corpus_audio(records, root, sample_rate: int) -> list[np.ndarray]:
    """Read every record's audio, resampled to ``sample_rate``."""
    from .corpus import resolve_audio_path

    out = []
    for r in records:
        path = resolve_audio_path(r, root)
        if not path.exists():
            raise FileNotFoundError(f"audio for {r.utt_id!r} not found: {path}")
        out.append(read_wav(path, sample_rate).samples)
    return out
