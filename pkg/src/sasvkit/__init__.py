"""Spoof-aware speaker verification toolkit.

Residual speaker embedder with dual / multi speaker-ID labelling,
vocoder-discriminator sub-judges, linear score fusion and SASV metrics.
"""

__version__ = "0.1.0"

from .backbone import BackboneConfig, SpeakerEmbedder, train_backbone
from .checkpoint import Checkpoint
from .corpus import MicroCorpusSpec, TrialRecord, UtteranceRecord, generate_micro_corpus, load_manifest, load_trials
from .frontend import FrontendConfig, LogMel, Waveform, log_mel
from .labeling import LabelMap, LabelStrategy, build_label_map
from .metrics import MetricConfig, MetricReport, a_dcf, eer, min_dcf, report
from .scoring import FusionCalibrator, FusionConfig, ScoreEntry, calibrate_fusion, fuse_scores
from .subjudge import SubJudgeClassifier, SubJudgeConfig, train_subjudge

__all__ = [
    "BackboneConfig",
    "Checkpoint",
    "FrontendConfig",
    "FusionCalibrator",
    "FusionConfig",
    "LabelMap",
    "LabelStrategy",
    "LogMel",
    "MetricConfig",
    "MetricReport",
    "MicroCorpusSpec",
    "ScoreEntry",
    "SpeakerEmbedder",
    "SubJudgeClassifier",
    "SubJudgeConfig",
    "TrialRecord",
    "UtteranceRecord",
    "Waveform",
    "a_dcf",
    "build_label_map",
    "calibrate_fusion",
    "eer",
    "fuse_scores",
    "generate_micro_corpus",
    "load_manifest",
    "load_trials",
    "log_mel",
    "min_dcf",
    "report",
    "train_backbone",
    "train_subjudge",
]
