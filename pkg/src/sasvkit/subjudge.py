"""Vocoder-discriminator "sub-judges": spoof classifiers built from GAN discriminator stacks.

A sub-judge runs the waveform through a bank of sub-discriminators,
keeps every post-activation feature map, pools each sub-discriminator's
maps with MQMHA and classifies the concatenation as bona fide or generated.

``hifigan`` family: multi-period (MPD) + multi-scale (MSD) discriminators.
``bigvgan`` family: the same MPD + multi-resolution spectrogram (MRD) discriminators.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from math import gcd, log2

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import seeded
from .checkpoint import Checkpoint
from .exceptions import ConfigError, TrainingDivergedError, ValidationError
from .frontend import MPD_PERIODS, MRD_RESOLUTIONS, Waveform, load_corpus_audio
from .pooling import MQMHAConfig, MQMHAPooling
from .validation import check_labels, check_waveforms, random_crop

logger = logging.getLogger(__name__)

FAMILIES = ("hifigan", "bigvgan")
LRELU_SLOPE = 0.1
RMS_FLOOR = 1e-8

MPD_KERNEL, MPD_STRIDES = 5, (3, 3, 3, 3, 1)
MSD_LAYERS = (  # (kernel, stride, groups)
    (15, 1, 1),
    (41, 2, 4),
    (41, 2, 16),
    (41, 4, 16),
    (41, 4, 16),
    (41, 1, 16),
    (5, 1, 1),
)
MRD_LAYERS = (  # (kernel (time, freq), stride (time, freq))
    ((3, 9), (1, 1)),
    ((3, 9), (1, 2)),
    ((3, 9), (1, 2)),
    ((3, 9), (1, 2)),
    ((3, 3), (1, 1)),
)


@dataclass(frozen=True)
class SubJudgeConfig:
    family: str = "hifigan"
    mpd_periods: tuple = MPD_PERIODS
    msd_scales: tuple = (1, 2, 4)
    mrd_resolutions: tuple = ()
    mpd_channels: tuple = (32, 128, 512, 1024, 1024)
    msd_channels: tuple = (128, 128, 256, 512, 1024, 1024, 1024)
    mrd_channels: tuple = (32, 32, 32, 32, 32)
    mqmha: MQMHAConfig = field(default_factory=MQMHAConfig)
    head_hidden_dims: tuple = (256,)
    uniform_attention_init: bool = False

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("mpd_periods", tuple(int(p) for p in self.mpd_periods))
        set_("msd_scales", tuple(int(s) for s in self.msd_scales))
        set_("mrd_resolutions", tuple((int(n), int(h)) for n, h in self.mrd_resolutions))
        for name in ("mpd_channels", "msd_channels", "mrd_channels", "head_hidden_dims"):
            set_(name, tuple(int(c) for c in getattr(self, name)))
        if isinstance(self.mqmha, dict):
            set_("mqmha", MQMHAConfig(**self.mqmha))

        if self.family not in FAMILIES:
            raise ConfigError("subjudge.family", f"expected one of {FAMILIES}, got {self.family!r}")
        if self.family == "hifigan" and (not self.msd_scales or self.mrd_resolutions):
            raise ConfigError("subjudge.msd_scales", "hifigan needs msd_scales and no mrd_resolutions")
        if self.family == "bigvgan" and (not self.mrd_resolutions or self.msd_scales):
            raise ConfigError("subjudge.mrd_resolutions", "bigvgan needs mrd_resolutions and no msd_scales")
        if not self.mpd_periods or min(self.mpd_periods) < 1:
            raise ConfigError("subjudge.mpd_periods", "need at least one period >= 1")
        for s in self.msd_scales:
            if s < 1 or not log2(s).is_integer():
                raise ConfigError("subjudge.msd_scales", f"scale {s} is not a power of two")
        for n_fft, hop in self.mrd_resolutions:
            if hop < 1 or n_fft < 2 * hop:
                raise ConfigError("subjudge.mrd_resolutions", f"({n_fft}, {hop}) needs n_fft >= 2*hop")
        if len(self.mpd_channels) != len(MPD_STRIDES):
            raise ConfigError("subjudge.mpd_channels", f"need {len(MPD_STRIDES)} entries")
        if len(self.msd_channels) != len(MSD_LAYERS):
            raise ConfigError("subjudge.msd_channels", f"need {len(MSD_LAYERS)} entries")
        if len(self.mrd_channels) != len(MRD_LAYERS):
            raise ConfigError("subjudge.mrd_channels", f"need {len(MRD_LAYERS)} entries")
        for name in ("mpd_channels", "msd_channels", "mrd_channels"):
            if min(getattr(self, name)) < 1:
                raise ConfigError(f"subjudge.{name}", "channel counts must be >= 1")
        for name, total in self.stack_channels().items():
            if total % self.mqmha.n_heads:
                raise ConfigError("subjudge.mqmha.n_heads", f"{name} has {total} channels, not divisible by heads")

    @classmethod
    def default(cls, family: str = "hifigan", **overrides) -> "SubJudgeConfig":
        if family == "bigvgan":
            base = dict(msd_scales=(), mrd_resolutions=MRD_RESOLUTIONS)
        else:
            base = dict(msd_scales=(1, 2, 4), mrd_resolutions=())
        return cls(family=family, **{**base, **overrides})

    @classmethod
    def tiny(cls, family: str = "hifigan", **overrides) -> "SubJudgeConfig":
        """Four-channel stacks, single-query single-head pooling: for tests and desk-scale runs."""
        small = dict(
            mpd_channels=(4,) * 5,
            msd_channels=(4,) * 7,
            mrd_channels=(4,) * 5,
            mqmha=MQMHAConfig(n_queries=1, n_heads=1, hidden_dim=8),
            head_hidden_dims=(16,),
        )
        return cls.default(family, **{**small, **overrides})

    @classmethod
    def from_dict(cls, data: dict | None) -> "SubJudgeConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)} - {"preset"}
        if unknown:
            raise ConfigError("subjudge", f"unknown fields {sorted(unknown)}")
        preset = data.pop("preset", "default")
        family = data.pop("family", "hifigan")
        if isinstance(data.get("mqmha"), dict):
            data["mqmha"] = MQMHAConfig(**data["mqmha"])
        if preset == "tiny":
            return cls.tiny(family, **data)
        if preset != "default":
            raise ConfigError("subjudge.preset", f"unknown preset {preset!r}")
        return cls.default(family, **data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mrd_resolutions"] = [list(r) for r in self.mrd_resolutions]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def sub_names(self) -> list[str]:
        names = [f"mpd_p{p}" for p in self.mpd_periods]
        if self.family == "hifigan":
            names += [f"msd_x{s}" for s in self.msd_scales]
        else:
            names += [f"mrd_{n}_{h}" for n, h in self.mrd_resolutions]
        return names

    def stack_channels(self) -> dict[str, int]:
        """Channels after concatenating all layers of each sub-discriminator."""
        out = {f"mpd_p{p}": sum(self.mpd_channels) for p in self.mpd_periods}
        if self.family == "hifigan":
            out.update({f"msd_x{s}": sum(self.msd_channels) for s in self.msd_scales})
        else:
            out.update({f"mrd_{n}_{h}": sum(self.mrd_channels) for n, h in self.mrd_resolutions})
        return out

    def pooled_dim(self) -> int:
        return sum(2 * c * self.mqmha.n_queries for c in self.stack_channels().values())

    def min_samples(self) -> int:
        need = [math.prod(MPD_STRIDES) * max(self.mpd_periods)]
        if self.msd_scales:
            need.append(math.prod(s for _, s, _ in MSD_LAYERS) * max(self.msd_scales))
        if self.mrd_resolutions:
            need.append(max(n for n, _ in self.mrd_resolutions))
        return max(need)


# ---------------------------------------------------------------------------
# Sub-discriminators; each returns its post-activation maps as [B, C, T]
# ---------------------------------------------------------------------------


def periodize_batch(x: torch.Tensor, period: int) -> torch.Tensor:
    """[B, T] -> [B, 1, ceil(T/p), p] with zero right-padding."""
    pad = (-x.shape[-1]) % period
    if pad:
        x = F.pad(x, (0, pad))
    return x.reshape(x.shape[0], 1, -1, period)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels):
        super().__init__()
        self.period = period
        convs, cin = [], 1
        for cout, stride in zip(channels, MPD_STRIDES):
            convs.append(nn.Conv2d(cin, cout, (MPD_KERNEL, 1), (stride, 1), padding=(MPD_KERNEL // 2, 0)))
            cin = cout
        self.convs = nn.ModuleList(convs)

    def forward(self, x):
        h = periodize_batch(x, self.period)
        maps = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            maps.append(h.mean(dim=-1))  # collapse the phase axis
        return maps


class ScaleDiscriminator(nn.Module):
    def __init__(self, scale: int, channels):
        super().__init__()
        self.n_pool = int(log2(scale))
        convs, cin = [], 1
        for cout, (k, s, g) in zip(channels, MSD_LAYERS):
            convs.append(nn.Conv1d(cin, cout, k, s, groups=gcd(g, gcd(cin, cout)), padding=k // 2))
            cin = cout
        self.convs = nn.ModuleList(convs)

    def forward(self, x):
        h = x.unsqueeze(1)
        for _ in range(self.n_pool):
            h = F.avg_pool1d(h, 4, 2, padding=2)
        maps = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            maps.append(h)
        return maps


class ResolutionDiscriminator(nn.Module):
    def __init__(self, n_fft: int, hop: int, channels):
        super().__init__()
        self.n_fft, self.hop = n_fft, hop
        convs, cin = [], 1
        for cout, (k, s) in zip(channels, MRD_LAYERS):
            convs.append(nn.Conv2d(cin, cout, k, s, padding=(k[0] // 2, k[1] // 2)))
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.register_buffer("window", torch.hann_window(n_fft), persistent=False)

    def spectrogram(self, x):
        spec = torch.stft(
            x, self.n_fft, self.hop, window=self.window.to(x.dtype), center=False, return_complex=True
        )
        return spec.abs()  # [B, F, frames]

    def forward(self, x):
        h = self.spectrogram(x).transpose(1, 2).unsqueeze(1)  # [B, 1, frames, F]
        maps = []
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            maps.append(h.mean(dim=-1))  # collapse the frequency axis
        return maps


def align_and_concat(maps) -> torch.Tensor:
    """Linearly resample every map to the longest time axis, then stack channels."""
    t_max = max(m.shape[-1] for m in maps)
    aligned = [
        m if m.shape[-1] == t_max else F.interpolate(m, size=t_max, mode="linear", align_corners=False)
        for m in maps
    ]
    return torch.cat(aligned, dim=1)


class SubJudgeNet(nn.Module):
    def __init__(self, cfg: SubJudgeConfig):
        super().__init__()
        self.cfg = cfg
        # MPD is built first so both families share identical MPD weights for a given seed.
        subs = [PeriodDiscriminator(p, cfg.mpd_channels) for p in cfg.mpd_periods]
        if cfg.family == "hifigan":
            subs += [ScaleDiscriminator(s, cfg.msd_channels) for s in cfg.msd_scales]
        else:
            subs += [ResolutionDiscriminator(n, h, cfg.mrd_channels) for n, h in cfg.mrd_resolutions]
        self.subs = nn.ModuleList(subs)
        self.names = cfg.sub_names()
        chans = cfg.stack_channels()
        self.poolers = nn.ModuleList(
            MQMHAPooling(chans[n], cfg.mqmha, uniform_init=cfg.uniform_attention_init) for n in self.names
        )
        layers, d = [], cfg.pooled_dim()
        for hidden in cfg.head_hidden_dims:
            layers += [nn.Linear(d, hidden), nn.ReLU()]
            d = hidden
        layers.append(nn.Linear(d, 2))
        self.head = nn.Sequential(*layers)

    def layer_features(self, x: torch.Tensor) -> list[list[torch.Tensor]]:
        if x.shape[-1] < self.cfg.min_samples():
            raise ValidationError(
                f"waveform of {x.shape[-1]} samples is shorter than the {self.cfg.min_samples()} "
                f"samples the deepest sub-discriminator needs"
            )
        # unit-RMS input: quiet recordings otherwise leave the conv stacks bias-dominated
        x = x / x.pow(2).mean(dim=-1, keepdim=True).sqrt().clamp(min=RMS_FLOOR)
        return [sub(x) for sub in self.subs]

    def pool(self, stacks) -> torch.Tensor:
        return torch.cat([pool(align_and_concat(maps)) for pool, maps in zip(self.poolers, stacks)], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.pool(self.layer_features(x)))


@dataclass
class LayerFeatureStack:
    names: list[str]
    layers: list[list[np.ndarray]]

    def __len__(self):
        return len(self.layers)


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------


class SubJudgeClassifier(ClassifierMixin, BaseEstimator):
    """Binary bona fide (0) vs. generated (1) classifier over raw waveforms.

    Training draws class-balanced batches of random ``segment_s`` crops.
    Inference runs on whole utterances.
    """

    def __init__(
        self,
        config=None,
        sample_rate=16000,
        segment_s=1.0,
        n_steps=200,
        batch_size=8,
        learning_rate=1e-3,
        weight_decay=0.0,
        seed=0,
    ):
        self.config = config
        self.sample_rate = sample_rate
        self.segment_s = segment_s
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed

    def _cfg(self) -> SubJudgeConfig:
        return self.config or SubJudgeConfig.default()

    def _build(self):
        with seeded(self.seed):
            self.net_ = SubJudgeNet(self._cfg())
        self.classes_ = np.array([0, 1])
        return self.net_

    def _net(self):
        """The fitted network, or a freshly seeded one when unfitted."""
        return self.net_ if hasattr(self, "net_") else self._build()

    def _tensor(self, x):
        dtype = next(self._net().parameters()).dtype
        return torch.as_tensor(np.asarray(x), dtype=dtype)

    def fit(self, X, y):
        cfg = self._cfg()
        seg = int(round(self.segment_s * self.sample_rate))
        if seg < cfg.min_samples():
            raise ValidationError(f"segment of {seg} samples is below the {cfg.min_samples()}-sample minimum")
        waves = check_waveforms(X)
        y = check_labels(y, len(waves)).astype(int)
        if not set(np.unique(y)) <= {0, 1}:
            raise ValidationError("labels must be 0 (bona fide) or 1 (generated)")
        pools = [np.flatnonzero(y == c) for c in (0, 1)]
        if any(p.size == 0 for p in pools):
            raise ValidationError("training data must contain both bona fide and generated utterances")

        net = self._build()
        net.train()
        rng = np.random.default_rng(self.seed)
        opt = torch.optim.Adam(net.parameters(), lr=self.learning_rate, weight_decay=self.weight_decay)
        half = max(self.batch_size // 2, 1)
        targets = torch.tensor([0] * half + [1] * half)
        self.loss_curve_ = []
        for step in range(self.n_steps):
            idx = np.concatenate([rng.choice(pools[0], half), rng.choice(pools[1], half)])
            batch = self._tensor(np.stack([random_crop(waves[i], seg, rng) for i in idx]))
            loss = F.cross_entropy(net(batch), targets)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(f"sub-judge loss became {value} at step {step + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_curve_.append(value)
            if (step + 1) % 50 == 0:
                logger.info("subjudge step %d loss %.4f", step + 1, value)
        net.eval()
        self.n_steps_ = self.n_steps
        return self

    def predict_proba(self, X) -> np.ndarray:
        net = self._net()
        net.eval()
        waves = check_waveforms(X)
        out = []
        with torch.no_grad():
            for w in waves:
                out.append(torch.softmax(net(self._tensor(w)[None]), dim=-1)[0].double().numpy())
        return np.stack(out)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def decision_function(self, X):
        """Spoof posterior, usable as a detection score."""
        return self.predict_proba(X)[:, 1]

    def layer_features(self, x) -> LayerFeatureStack:
        net = self._net()
        net.eval()
        with torch.no_grad():
            stacks = net.layer_features(self._tensor(x)[None])
        return LayerFeatureStack(
            list(net.names), [[m[0].double().numpy() for m in maps] for maps in stacks]
        )

    # checkpoint hooks
    def _checkpoint_meta(self):
        check_is_fitted(self, "net_")
        return {
            "params": {
                "config": self._cfg().to_dict(),
                "sample_rate": self.sample_rate,
                "segment_s": self.segment_s,
                "n_steps": self.n_steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "weight_decay": self.weight_decay,
                "seed": self.seed,
            }
        }

    def _state_dict(self):
        return {"net": self.net_.state_dict()}

    @classmethod
    def _from_checkpoint(cls, meta, state):
        p = dict(meta["params"])
        cfg = dict(p["config"])
        cfg["mqmha"] = MQMHAConfig(**cfg["mqmha"])
        p["config"] = SubJudgeConfig(**cfg)
        est = cls(**p)
        est._build().load_state_dict(state["net"])
        est.net_.eval()
        est.n_steps_ = int(meta.get("step", 0))
        est.loss_curve_ = []
        return est


def extract_layer_features(w: Waveform, cfg: SubJudgeConfig, seed: int = 0, model=None) -> LayerFeatureStack:
    """Per-sub-discriminator feature maps ([C, T] each) for one waveform.

    Uses ``model`` when given, else a freshly seeded network for ``cfg``.
    """
    model = model or SubJudgeClassifier(config=cfg, sample_rate=w.sample_rate, seed=seed)
    return model.layer_features(w.samples)


def subjudge_forward(w: Waveform, model: SubJudgeClassifier) -> float:
    """Spoof posterior of a single waveform."""
    return float(model.predict_proba([w.samples])[0, 1])


def train_subjudge(
    records,
    root=".",
    config: SubJudgeConfig | None = None,
    sample_rate: int = 16000,
    segment_s: float = 1.0,
    n_steps: int = 200,
    batch_size: int = 8,
    learning_rate: float = 1e-3,
    weight_decay: float = 0.0,
    seed: int = 0,
) -> Checkpoint:
    """Fit a sub-judge on manifest records (bona fide = 0, any generator = 1)."""
    records = list(records)
    audio = load_corpus_audio(records, root, sample_rate)
    y = np.array([0 if r.is_bonafide else 1 for r in records])
    est = SubJudgeClassifier(
        config=config,
        sample_rate=sample_rate,
        segment_s=segment_s,
        n_steps=n_steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        seed=seed,
    ).fit(audio, y)
    return Checkpoint("subjudge", est, None, est.n_steps_, list(est.loss_curve_))
