"""Command-line entry point: ``sasvkit {gen-data,train,score,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import train_backbone
from .checkpoint import Checkpoint
from .config import RunConfig, load_yaml_mapping
from .corpus import MicroCorpusSpec, check_trials_resolve, generate_micro_corpus, load_manifest, load_trials, split_by_trials
from .exceptions import ConfigError, SASVError
from .labeling import build_label_map
from .metrics import MetricConfig, det_curve, partition_scores, report
from .scoring import (
    DEFAULT_ALPHAS,
    FusionConfig,
    alpha_grid,
    available_configurations,
    calibrate_fusion,
    fuse_scores,
    read_scores,
    score_trials,
    write_scores,
)
from .subjudge import train_subjudge

logger = logging.getLogger("sasvkit")

MODELS = ("backbone", "subjudge:hifigan", "subjudge:bigvgan")


def _training_records(cfg: RunConfig):
    if cfg.corpus is None:
        raise ConfigError("paths.corpus", "required for training")
    records = load_manifest(cfg.corpus)
    if cfg.trials is not None and Path(cfg.trials).exists():
        records, _ = split_by_trials(records, load_trials(cfg.trials))
    return records


def cmd_gen_data(args) -> int:
    spec = MicroCorpusSpec.from_dict(load_yaml_mapping(args.spec))
    manifest, trials = generate_micro_corpus(spec, args.out)
    print(f"manifest {manifest}")
    print(f"trials {trials}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    records = _training_records(cfg)
    root = Path(cfg.corpus).parent
    if args.model == "backbone":
        label_map = build_label_map(records, cfg.labeling)
        tc = cfg.backbone_train
        ckpt = train_backbone(
            records,
            label_map,
            root=root,
            config=cfg.backbone,
            frontend=cfg.frontend,
            n_steps=tc.n_steps,
            batch_size=tc.batch_size,
            learning_rate=tc.learning_rate,
            weight_decay=tc.weight_decay,
            seed=cfg.seed,
        )
    else:
        family = args.model.split(":", 1)[1]
        if family not in cfg.subjudges:
            raise ConfigError(f"subjudges.{family}", "not configured; cannot train this sub-judge")
        tc = cfg.subjudge_train[family]
        ckpt = train_subjudge(
            records,
            root=root,
            config=cfg.subjudges[family],
            sample_rate=cfg.frontend.sample_rate,
            segment_s=tc.segment_s or cfg.frontend.segment_s,
            n_steps=tc.n_steps,
            batch_size=tc.batch_size,
            learning_rate=tc.learning_rate,
            weight_decay=tc.weight_decay,
            seed=cfg.seed,
        )
    out = cfg.checkpoint_dir("backbone" if args.model == "backbone" else family)
    ckpt.save(out)
    print(f"checkpoint {out}")
    print(f"final_loss {ckpt.loss_curve[-1]!r}")
    return 0


def cmd_score(args) -> int:
    cfg = RunConfig.load(args.config)
    if cfg.corpus is None:
        raise ConfigError("paths.corpus", "required for scoring")
    records = load_manifest(cfg.corpus)
    trials = load_trials(args.trials)
    check_trials_resolve(trials, records)
    backbone = Checkpoint.load(cfg.checkpoint_dir("backbone"))
    subjudges = {name: Checkpoint.load(cfg.checkpoint_dir(name)).model for name in cfg.subjudges}
    entries = score_trials(trials, backbone.model, records, Path(cfg.corpus).parent, subjudges)
    write_scores(entries, args.out)
    print(f"scores {args.out} ({len(entries)} trials)")
    return 0


def _fusions_for(entries, args, metric_cfg):
    """Per-configuration fusion weights, keyed by configuration name."""
    configs = available_configurations(entries)
    if args.fusion == "calibrate":
        if not args.dev:
            raise ConfigError("--dev", "calibration needs a dev score file")
        dev = read_scores(args.dev)
        return {
            name: calibrate_fusion(dev, alpha_grid(list(subs), DEFAULT_ALPHAS), metric_cfg) if subs else FusionConfig()
            for name, subs in configs.items()
        }
    base = FusionConfig.parse(args.fusion) if args.fusion else None
    out = {}
    for name, subs in configs.items():
        if base is None:
            out[name] = FusionConfig({s: 1.0 for s in subs})
        else:
            out[name] = FusionConfig({s: base.weights.get(s, 0.0) for s in subs})
    return out


def cmd_evaluate(args) -> int:
    metric_cfg = MetricConfig.from_dict(load_yaml_mapping(args.metrics_config)) if args.metrics_config else MetricConfig()
    entries = read_scores(args.scores)
    fusions = _fusions_for(entries, args, metric_cfg)
    kv_lines = []
    for name, fusion in fusions.items():
        rep = report(fuse_scores(entries, fusion), metric_cfg, "fused")
        print(rep.to_text(f"{name} [alpha: {fusion}]"))
        kv_lines.append(f"{name}.alpha={fusion}")
        kv_lines.append(rep.to_kv(prefix=f"{name}."))
    print()
    print("\n".join(kv_lines))
    if args.out:
        Path(args.out).write_text("\n".join(kv_lines) + "\n", encoding="utf-8")
    if args.det:
        g = partition_scores(entries, "asv")
        thr, pmiss, pfa = det_curve(g["target"], np.concatenate([g["nontarget"], g["spoof"]]))
        with open(args.det, "w", encoding="utf-8") as fh:
            for t, m, f in zip(thr, pmiss, pfa):
                fh.write(f"{t!r} {m!r} {f!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasvkit", description="Spoof-aware speaker verification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic micro-corpus")
    p.add_argument("--spec", required=True, help="YAML file with micro-corpus fields")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the backbone or a sub-judge")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True, choices=MODELS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="report EER / min-DCF / a-DCF for each configuration")
    p.add_argument("--scores", required=True)
    p.add_argument("--metrics-config", help="YAML file with metric priors and costs")
    p.add_argument("--fusion", help="'name=alpha,...' or 'calibrate' (default: alpha=1 per sub-judge)")
    p.add_argument("--dev", help="dev score file for --fusion calibrate")
    p.add_argument("--out", help="also write the key=value report here")
    p.add_argument("--det", help="dump backbone DET points (threshold p_miss p_fa)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SASVError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
