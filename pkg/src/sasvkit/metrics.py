"""Detection metrics: EER, min-DCF and the three-class a-DCF.

All metrics sweep the same threshold set: midpoints between consecutive
distinct scores, bracketed by -inf and +inf.  A trial is accepted when its
score is ``>= threshold``, so at threshold ``t``::

    P_miss(t) = #{target < t} / #target
    P_fa(t)   = #{impostor >= t} / #impostor
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ValidationError


@dataclass(frozen=True)
class MetricConfig:
    """Priors and costs for DCF-style metrics.

    Defaults are the usual SASV a-DCF operating point.  ``min_dcf`` folds the
    spoof class out (prior renormalised over target/nontarget) unless
    ``dcf_p_target`` is given explicitly.
    """

    p_target: float = 0.9405
    p_nontarget: float = 0.0095
    p_spoof: float = 0.05
    c_miss: float = 1.0
    c_fa_nontarget: float = 10.0
    c_fa_spoof: float = 10.0
    normalize: bool = True
    dcf_p_target: float | None = None

    def __post_init__(self):
        priors = (self.p_target, self.p_nontarget, self.p_spoof)
        if any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
            raise ValidationError(f"priors must lie on the simplex, got {priors}")
        if self.p_target <= 0:
            raise ValidationError("p_target must be positive")
        for name in ("c_miss", "c_fa_nontarget", "c_fa_spoof"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.dcf_p_target is not None and not 0 < self.dcf_p_target < 1:
            raise ValidationError("dcf_p_target must be in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict | None) -> "MetricConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown metric config fields: {sorted(unknown)}")
        return cls(**data)

    def two_class(self) -> tuple[float, float, float]:
        """(p_target, c_miss, c_fa) for the two-class DCF."""
        if self.dcf_p_target is not None:
            return self.dcf_p_target, self.c_miss, self.c_fa_nontarget
        p = self.p_target / (self.p_target + self.p_nontarget)
        return p, self.c_miss, self.c_fa_nontarget


@dataclass
class MetricReport:
    eer: float
    eer_threshold: float
    min_dcf: float
    a_dcf: float
    a_dcf_threshold: float
    p_miss: float
    p_fa_nontarget: float
    p_fa_spoof: float
    counts: dict = field(default_factory=dict)

    def to_kv(self, prefix: str = "") -> str:
        lines = []
        for key, value in asdict(self).items():
            if key == "counts":
                lines.extend(f"{prefix}n_{k}={v}" for k, v in value.items())
            else:
                lines.append(f"{prefix}{key}={value!r}")
        return "\n".join(lines)

    def to_text(self, title: str = "") -> str:
        head = f"== {title} ==\n" if title else ""
        return (
            f"{head}"
            f"EER      {100 * self.eer:8.3f} %   (threshold {self.eer_threshold:.6g})\n"
            f"min-DCF  {self.min_dcf:10.4f}\n"
            f"a-DCF    {self.a_dcf:10.4f}   (threshold {self.a_dcf_threshold:.6g}; "
            f"P_miss {self.p_miss:.4f}, P_fa_non {self.p_fa_nontarget:.4f}, P_fa_spf {self.p_fa_spoof:.4f})"
        )


def _as_scores(x, name: str, allow_empty: bool = False) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0 and not allow_empty:
        raise ValidationError(f"{name} scores must be non-empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} scores must be finite")
    return a


def sweep_thresholds(*score_sets) -> np.ndarray:
    """Midpoints between consecutive distinct scores, plus -inf and +inf."""
    allv = np.unique(np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in score_sets]))
    mids = (allv[:-1] + allv[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _count_below(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(scores), thresholds, side="left")


def _miss_rate(target, thresholds):
    return _count_below(target, thresholds) / target.size


def _fa_rate(impostor, thresholds):
    if impostor.size == 0:
        return np.zeros(thresholds.shape)
    return (impostor.size - _count_below(impostor, thresholds)) / impostor.size


def det_curve(pos, neg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Operating points (thresholds, P_miss, P_fa) over the sweep, increasing threshold."""
    pos = _as_scores(pos, "positive")
    neg = _as_scores(neg, "negative")
    thr = sweep_thresholds(pos, neg)
    return thr, _miss_rate(pos, thr), _fa_rate(neg, thr)


def _finite_threshold(t: float, lo: float, hi: float) -> float:
    if t == -np.inf:
        return lo
    if t == np.inf:
        return hi
    return t


def eer(pos, neg) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Walks the operating points in increasing threshold order and stops at
    the first point with ``P_miss >= P_fa``.  Without an exact tie the rate
    is linearly interpolated between that point and its predecessor.
    """
    thr, pmiss, pfa = det_curve(pos, neg)
    k = int(np.flatnonzero(pmiss >= pfa)[0])
    if pmiss[k] == pfa[k]:
        return float(pmiss[k]), float(thr[k])
    # k >= 1 because P_miss(-inf) = 0 < 1 = P_fa(-inf)
    d0 = pfa[k - 1] - pmiss[k - 1]
    d1 = pfa[k] - pmiss[k]
    t = d0 / (d0 - d1)
    rate = pmiss[k - 1] + t * (pmiss[k] - pmiss[k - 1])
    allv = np.concatenate([np.asarray(pos, float).ravel(), np.asarray(neg, float).ravel()])
    lo, hi = float(allv.min()), float(np.nextafter(allv.max(), np.inf))
    a = _finite_threshold(thr[k - 1], lo, hi)
    b = _finite_threshold(thr[k], lo, hi)
    return float(rate), float(a + t * (b - a))


def min_dcf(pos, neg, cfg: MetricConfig | None = None) -> float:
    """Minimum two-class detection cost over the threshold sweep."""
    cfg = cfg or MetricConfig()
    p, c_miss, c_fa = cfg.two_class()
    thr, pmiss, pfa = det_curve(pos, neg)
    cost = c_miss * p * pmiss + c_fa * (1.0 - p) * pfa
    value = float(cost.min())
    if cfg.normalize:
        value /= min(c_miss * p, c_fa * (1.0 - p))
    return value


def a_dcf_curve(tar, non, spf, cfg: MetricConfig | None = None):
    """(thresholds, cost, P_miss, P_fa_non, P_fa_spf) before normalisation."""
    cfg = cfg or MetricConfig()
    tar = _as_scores(tar, "target")
    non = _as_scores(non, "nontarget", allow_empty=True)
    spf = _as_scores(spf, "spoof", allow_empty=True)
    thr = sweep_thresholds(tar, non, spf)
    pmiss = _miss_rate(tar, thr)
    pfa_non = _fa_rate(non, thr)
    pfa_spf = _fa_rate(spf, thr)
    cost = (
        cfg.c_miss * cfg.p_target * pmiss
        + cfg.c_fa_nontarget * cfg.p_nontarget * pfa_non
        + cfg.c_fa_spoof * cfg.p_spoof * pfa_spf
    )
    return thr, cost, pmiss, pfa_non, pfa_spf


def a_dcf_default(n_non: int, n_spf: int, cfg: MetricConfig) -> float:
    """Cost of the better trivial system (accept all vs. reject all).

    Impostor classes with no trials contribute nothing.
    """
    accept_all = (cfg.c_fa_nontarget * cfg.p_nontarget if n_non else 0.0) + (
        cfg.c_fa_spoof * cfg.p_spoof if n_spf else 0.0
    )
    return min(cfg.c_miss * cfg.p_target, accept_all)


def _a_dcf_full(tar, non, spf, cfg):
    thr, cost, pmiss, pfa_non, pfa_spf = a_dcf_curve(tar, non, spf, cfg)
    k = int(np.argmin(cost))
    value = float(cost[k])
    if cfg.normalize:
        denom = a_dcf_default(np.size(non), np.size(spf), cfg)
        value = value / denom if denom > 0 else 0.0
    return value, float(thr[k]), float(pmiss[k]), float(pfa_non[k]), float(pfa_spf[k])


def a_dcf(tar, non, spf, cfg: MetricConfig | None = None) -> tuple[float, float]:
    """Minimum a-DCF over the sweep and the threshold attaining it."""
    cfg = cfg or MetricConfig()
    value, thr, *_ = _a_dcf_full(tar, non, spf, cfg)
    return value, thr


def partition_scores(entries: Sequence, which_score: str = "asv") -> dict[str, np.ndarray]:
    """Group entry scores by trial label."""
    if which_score not in ("asv", "fused"):
        raise ValidationError(f"which_score must be 'asv' or 'fused', got {which_score!r}")
    groups: dict[str, list[float]] = {"target": [], "nontarget": [], "spoof": []}
    for e in entries:
        score = e.asv_score if which_score == "asv" else e.fused_score
        if score is None:
            raise ValidationError(f"entry for trial {e.trial.test_utt_id!r} has no {which_score} score")
        groups[e.trial.label].append(score)
    return {k: np.asarray(v, dtype=np.float64) for k, v in groups.items()}


def report(entries: Sequence, cfg: MetricConfig | None = None, which_score: str = "asv") -> MetricReport:
    """Score a labelled trial list: EER/min-DCF on target vs. the rest, a-DCF three-way."""
    cfg = cfg or MetricConfig()
    g = partition_scores(entries, which_score)
    if g["target"].size == 0:
        raise ValidationError("no target trials to evaluate")
    neg = np.concatenate([g["nontarget"], g["spoof"]])
    if neg.size == 0:
        raise ValidationError("no nontarget or spoof trials to evaluate")
    rate, eer_thr = eer(g["target"], neg)
    value, thr, pmiss, pfa_non, pfa_spf = _a_dcf_full(g["target"], g["nontarget"], g["spoof"], cfg)
    return MetricReport(
        eer=rate,
        eer_threshold=eer_thr,
        min_dcf=min_dcf(g["target"], neg, cfg),
        a_dcf=value,
        a_dcf_threshold=thr,
        p_miss=pmiss,
        p_fa_nontarget=pfa_non,
        p_fa_spoof=pfa_spf,
        counts={k: int(v.size) for k, v in g.items()},
    )
