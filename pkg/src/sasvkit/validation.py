"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError


def check_waveforms(X, min_length: int = 1) -> list[np.ndarray]:
    """Coerce ``X`` into a list of finite float64 1-D waveforms.

    Accepts a 2-D array (one fixed-length waveform per row) or any sequence
    of 1-D arrays of varying length.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        rows = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        raise ValidationError("expected a batch of waveforms; wrap a single waveform in a list")
    else:
        rows = list(X)
    if not rows:
        raise ValidationError("received an empty batch of waveforms")
    out = []
    for i, row in enumerate(rows):
        x = np.asarray(getattr(row, "samples", row), dtype=np.float64)
        if x.ndim != 1:
            raise ValidationError(f"waveform {i} must be 1-D, got shape {x.shape}")
        if x.size < min_length:
            raise ValidationError(f"waveform {i} has {x.size} samples, need at least {min_length}")
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"waveform {i} contains non-finite samples")
        out.append(x)
    return out


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.size != n_samples:
        raise ValidationError(f"y must be 1-D with {n_samples} entries, got shape {y.shape}")
    return y


def random_crop(x: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random window of ``length`` along the last axis, tiling short inputs."""
    n = x.shape[-1]
    if n < length:
        return np.concatenate([x] * -(-length // n), axis=-1)[..., :length]
    start = int(rng.integers(0, n - length + 1))
    return x[..., start : start + length]
