"""Residual log-mel speaker embedder trained with an additive angular margin softmax."""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint
from .exceptions import ConfigError, TrainingDivergedError, ValidationError
from .frontend import FrontendConfig, LogMel, Waveform, load_corpus_audio, log_mel
from .pooling import statistics_pooling
from .validation import check_labels, check_waveforms, random_crop

logger = logging.getLogger(__name__)

# Three stride-2 transitions between the four stages.
MIN_FRAMES = 8

PRESETS = {
    "resnet-tiny": dict(stage_blocks=(2, 2, 2, 2), stage_channels=(16, 32, 64, 128), block="basic"),
    # 1 stem conv + 73 bottlenecks x 3 convs + embedding layer + margin head = 221 weighted layers
    "resnet221": dict(stage_blocks=(6, 16, 48, 3), stage_channels=(64, 128, 256, 512), block="bottleneck"),
}


@dataclass(frozen=True)
class BackboneConfig:
    preset: str = "resnet-tiny"
    stage_blocks: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (16, 32, 64, 128)
    block: str = "basic"
    embedding_dim: int = 256
    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "stage_blocks", tuple(int(b) for b in self.stage_blocks))
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ConfigError("backbone.stage_blocks", "need four counts >= 1")
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise ConfigError("backbone.stage_channels", "need four counts >= 1")
        if self.block not in ("basic", "bottleneck"):
            raise ConfigError("backbone.block", f"unknown block type {self.block!r}")
        if self.embedding_dim < 1:
            raise ConfigError("backbone.embedding_dim", "must be >= 1")
        if not 0 <= self.margin < 1:
            raise ConfigError("backbone.margin", "must satisfy 0 <= m < 1")
        if not self.scale > 0:
            raise ConfigError("backbone.scale", "must be positive")

    @classmethod
    def from_preset(cls, name: str = "resnet-tiny", **overrides) -> "BackboneConfig":
        if name not in PRESETS:
            raise ConfigError("backbone.preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(preset=name, **{**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, data: dict | None) -> "BackboneConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("backbone", f"unknown fields {sorted(unknown)}")
        return cls.from_preset(data.pop("preset", "resnet-tiny"), **data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        d["stage_channels"] = list(self.stage_channels)
        return d


@contextmanager
def seeded(seed: int):
    """Run a block under a fixed torch seed without disturbing global RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Bottleneck(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        mid = max(cout // 4, 1)
        self.conv1 = nn.Conv2d(cin, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.conv3 = nn.Conv2d(mid, cout, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + self.shortcut(x))


class ResNetEmbedder(nn.Module):
    """Conv stem, four residual stages, statistics pooling, linear embedding."""

    def __init__(self, n_mels: int, cfg: BackboneConfig):
        super().__init__()
        block = BasicBlock if cfg.block == "basic" else Bottleneck
        c0 = cfg.stage_channels[0]
        self.stem = nn.Sequential(nn.Conv2d(1, c0, 3, 1, 1, bias=False), nn.BatchNorm2d(c0), nn.ReLU())
        stages = []
        cin = c0
        for i, (n_blocks, cout) in enumerate(zip(cfg.stage_blocks, cfg.stage_channels)):
            layers = []
            for j in range(n_blocks):
                layers.append(block(cin, cout, 2 if (i > 0 and j == 0) else 1))
                cin = cout
            stages.append(nn.Sequential(*layers))
        self.stages = nn.Sequential(*stages)
        freq_out = n_mels
        for _ in range(3):
            freq_out = (freq_out + 1) // 2
        self.n_mels = n_mels
        self.pooled_dim = 2 * cin * freq_out
        self.embedding = nn.Linear(self.pooled_dim, cfg.embedding_dim)

    def frame_features(self, mel: torch.Tensor) -> torch.Tensor:
        """[B, n_mels, T] log-mels to [B, C*F', T'] frame-level features."""
        if mel.shape[1] != self.n_mels:
            raise ValidationError(f"expected {self.n_mels} mel bands, got {mel.shape[1]}")
        if mel.shape[2] < MIN_FRAMES:
            raise ValidationError(f"need at least {MIN_FRAMES} frames to survive downsampling, got {mel.shape[2]}")
        # scalar per-utterance offset removes global gain while keeping spectral shape
        x = mel - mel.mean(dim=(1, 2), keepdim=True)
        x = self.stages(self.stem(x.unsqueeze(1)))
        b, c, f, t = x.shape
        return x.reshape(b, c * f, t)

    def forward(self, mel):
        return self.embedding(statistics_pooling(self.frame_features(mel)))


def aam_logits(embeddings, weights, targets, margin: float, scale: float) -> torch.Tensor:
    """Additive angular margin logits.

    Non-target logits are ``s*cos(theta_j)``; the target logit is
    ``s*cos(theta_t + m)``, replaced by ``s*(cos(theta_t) - m*sin(m))`` once
    ``theta_t + m`` passes pi so the logit stays monotonic in theta_t.
    """
    e = torch.as_tensor(embeddings)
    w = torch.as_tensor(weights, dtype=e.dtype)
    squeeze = e.ndim == 1
    if squeeze:
        e = e.unsqueeze(0)
    targets = torch.as_tensor(targets).reshape(-1)
    if torch.any(e.norm(dim=-1) == 0) or torch.any(w.norm(dim=-1) == 0):
        raise ValidationError("embeddings and class weights must have non-zero norm")
    cos = F.normalize(e, dim=-1) @ F.normalize(w, dim=-1).T
    cos_t = cos.gather(1, targets[:, None]).squeeze(1)
    sin_t = torch.sqrt((1.0 - cos_t * cos_t).clamp(min=1e-12))
    phi = cos_t * math.cos(margin) - sin_t * math.sin(margin)
    phi = torch.where(cos_t > math.cos(math.pi - margin), phi, cos_t - math.sin(math.pi - margin) * margin)
    onehot = F.one_hot(targets, cos.shape[1]).to(cos.dtype)
    logits = scale * (onehot * phi[:, None] + (1 - onehot) * cos)
    return logits[0] if squeeze else logits


class AAMSoftmaxHead(nn.Module):
    def __init__(self, embedding_dim: int, n_classes: int, margin: float, scale: float):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_classes, embedding_dim))
        nn.init.xavier_uniform_(self.weight)
        self.margin = margin
        self.scale = scale

    def forward(self, embeddings, targets):
        return aam_logits(embeddings, self.weight, targets, self.margin, self.scale)

    def loss(self, embeddings, targets):
        return F.cross_entropy(self(embeddings, targets), targets)


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------


class SpeakerEmbedder(TransformerMixin, BaseEstimator):
    """Speaker/spoof embedding extractor with an sklearn interface.

    ``fit`` takes raw waveforms (at ``frontend.sample_rate``) and integer
    class labels; ``transform`` returns one embedding row per waveform,
    computed on the full utterance.

    Parameters
    ----------
    config : BackboneConfig, optional
        Network shape and margin settings. Defaults to the ``resnet-tiny`` preset.
    frontend : FrontendConfig, optional
        Feature extraction; ``segment_s`` sets the training crop length.
    n_steps, batch_size, learning_rate, weight_decay :
        Adam optimisation settings.
    seed : int
        Fixes weight initialisation and batch order.
    """

    def __init__(
        self,
        config=None,
        frontend=None,
        n_steps=200,
        batch_size=16,
        learning_rate=1e-3,
        weight_decay=0.0,
        seed=0,
    ):
        self.config = config
        self.frontend = frontend
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed

    def _cfg(self):
        return self.config or BackboneConfig()

    def _fe(self):
        return self.frontend or FrontendConfig()

    def _build(self, n_classes: int):
        cfg, fe = self._cfg(), self._fe()
        with seeded(self.seed):
            self.model_ = ResNetEmbedder(fe.n_mels, cfg)
            self.head_ = AAMSoftmaxHead(cfg.embedding_dim, n_classes, cfg.margin, cfg.scale)

    def _mels(self, waves):
        fe = self._fe()
        return [log_mel(Waveform(w, fe.sample_rate), fe).values.astype(np.float32) for w in waves]

    def fit(self, X, y):
        fe = self._fe()
        waves = check_waveforms(X, min_length=fe.win_length)
        y = check_labels(y, len(waves))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        mels = self._mels(waves)
        seg_frames = max(fe.n_frames(fe.segment_samples), MIN_FRAMES)
        self._build(len(self.classes_))

        rng = np.random.default_rng(self.seed)
        params = list(self.model_.parameters()) + list(self.head_.parameters())
        opt = torch.optim.Adam(params, lr=self.learning_rate, weight_decay=self.weight_decay)
        y_t = torch.as_tensor(y_idx, dtype=torch.long)
        self.model_.train()
        self.loss_curve_ = []
        for step in range(self.n_steps):
            idx = rng.integers(0, len(mels), size=self.batch_size)
            batch = torch.from_numpy(np.stack([random_crop(mels[i], seg_frames, rng) for i in idx]))
            loss = self.head_.loss(self.model_(batch), y_t[idx])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(f"backbone loss became {value} at step {step + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_curve_.append(value)
            if (step + 1) % 50 == 0:
                logger.info("backbone step %d loss %.4f", step + 1, value)
        self.model_.eval()
        self.n_steps_ = self.n_steps
        return self

    def embed_mel(self, mel) -> np.ndarray:
        check_is_fitted(self, "model_")
        values = mel.values if isinstance(mel, LogMel) else np.asarray(mel)
        dtype = next(self.model_.parameters()).dtype
        self.model_.eval()
        with torch.no_grad():
            out = self.model_(torch.as_tensor(values, dtype=dtype).unsqueeze(0))[0]
        return out.double().numpy()

    def transform(self, X):
        check_is_fitted(self, "model_")
        waves = check_waveforms(X, min_length=self._fe().win_length)
        return np.stack([self.embed_mel(m) for m in self._mels(waves)])

    # checkpoint hooks
    def _checkpoint_meta(self):
        check_is_fitted(self, "model_")
        return {
            "params": {
                "config": self._cfg().to_dict(),
                "frontend": self._fe().to_dict(),
                "n_steps": self.n_steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "weight_decay": self.weight_decay,
                "seed": self.seed,
            },
            "classes": [c.item() if hasattr(c, "item") else c for c in self.classes_],
        }

    def _state_dict(self):
        return {"model": self.model_.state_dict(), "head": self.head_.state_dict()}

    @classmethod
    def _from_checkpoint(cls, meta, state):
        p = dict(meta["params"])
        p["config"] = BackboneConfig.from_dict(p["config"])
        p["frontend"] = FrontendConfig(**p["frontend"])
        est = cls(**p)
        est.classes_ = np.asarray(meta["classes"])
        est._build(len(est.classes_))
        est.model_.load_state_dict(state["model"])
        est.head_.load_state_dict(state["head"])
        est.model_.eval()
        est.n_steps_ = int(meta.get("step", 0))
        est.loss_curve_ = []
        return est


def forward_embed(mel: LogMel, embedder: SpeakerEmbedder) -> np.ndarray:
    """Embedding of one log-mel matrix under a fitted embedder."""
    return embedder.embed_mel(mel)


def train_backbone(
    records,
    label_map,
    root=".",
    config: BackboneConfig | None = None,
    frontend: FrontendConfig | None = None,
    n_steps: int = 200,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    weight_decay: float = 0.0,
    seed: int = 0,
) -> Checkpoint:
    """Fit a SpeakerEmbedder on manifest records labelled through ``label_map``."""
    records = list(records)
    if not records:
        raise ValidationError("no training records")
    labels = label_map.labels(records)
    frontend = frontend or FrontendConfig()
    audio = load_corpus_audio(records, root, frontend.sample_rate)
    est = SpeakerEmbedder(
        config=config,
        frontend=frontend,
        n_steps=n_steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        seed=seed,
    )
    # classes_ must span the whole map so indices line up with the sidecar
    missing = sorted(set(range(label_map.n_classes)) - set(labels))
    if missing:
        raise ValidationError(f"label map classes {missing} have no training records")
    est.fit(audio, labels)
    return Checkpoint("backbone", est, label_map, est.n_steps_, list(est.loss_curve_))
