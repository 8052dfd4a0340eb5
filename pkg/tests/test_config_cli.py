import shutil

import pytest
import yaml

from sasvkit.cli import main
from sasvkit.config import WORKDIR_ENV, RunConfig
from sasvkit.exceptions import ConfigError
from sasvkit.labeling import LabelStrategy
from sasvkit.scoring import FusionConfig, read_scores


def base_config(**overrides):
    cfg = {
        "seed": 0,
        "paths": {"corpus": "data/manifest.txt", "trials": "data/trials.txt", "workdir": "exp"},
        "frontend": {"n_mels": 16, "segment_s": 0.25},
        "labeling": "multi_global",
        "backbone": {"preset": "resnet-tiny", "stage_channels": [4, 4, 8, 8], "embedding_dim": 8, "train": {"n_steps": 6, "batch_size": 4}},
        "subjudges": {
            "hifigan": {"preset": "tiny", "train": {"n_steps": 2, "batch_size": 2, "segment_s": 0.25}},
            "bigvgan": {"preset": "tiny", "train": {"n_steps": 2, "batch_size": 2, "segment_s": 0.25}},
        },
        "fusion": "calibrate",
        "metrics": {},
    }
    cfg.update(overrides)
    return cfg


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# config parsing


def test_config_defaults_and_paths(tmp_path):
    cfg = RunConfig.load(write_yaml(tmp_path / "c.yaml", base_config()))
    assert cfg.labeling is LabelStrategy.MULTI_GLOBAL
    assert cfg.corpus == tmp_path / "data/manifest.txt"
    assert cfg.checkpoint_dir("backbone") == tmp_path / "exp/backbone"
    assert cfg.checkpoint_dir("hifigan") == tmp_path / "exp/subjudge_hifigan"
    assert cfg.backbone.stage_channels == (4, 4, 8, 8)
    assert cfg.subjudge_train["hifigan"].n_steps == 2


def test_workdir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKDIR_ENV, str(tmp_path / "elsewhere"))
    cfg = RunConfig.from_dict(base_config(), tmp_path)
    assert cfg.workdir == tmp_path / "elsewhere"


def test_fixed_fusion(tmp_path):
    cfg = RunConfig.from_dict(base_config(fusion={"hifigan": 0.5}), tmp_path)
    assert cfg.fusion == FusionConfig({"hifigan": 0.5})


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"labeling": "triple"}, "labeling"),
        ({"frontend": {"n_mels": 0}}, "frontend"),
        ({"backbone": {"preset": "nope"}}, "backbone.preset"),
        ({"backbone": {"train": {"n_steps": 0}}}, "backbone.train.n_steps"),
        ({"subjudges": {"wavegan": {}}}, "subjudges.wavegan"),
        ({"subjudges": {"hifigan": {"family": "bigvgan"}}}, "subjudges.hifigan.family"),
        ({"subjudges": {"bigvgan": {"mqmha": {"n_heads": 0}}}}, "subjudges.bigvgan.mqmha.n_heads"),
        ({"metrics": {"p_target": 2.0}}, "metrics"),
        ({"seed": "x"}, "seed"),
        ({"paths": {"corpus_dir": "x"}}, "paths"),
        ({"extra": 1}, "<root>"),
    ],
)
def test_config_errors_name_the_field(tmp_path, patch, field):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(base_config(**patch), tmp_path)
    assert info.value.field == field


def test_invalid_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: [unclosed\n")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.yaml")


# command line


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train (all three models) -> score, on a small corpus."""
    root = tmp_path_factory.mktemp("run")
    spec = {"n_speakers": 3, "n_tts_systems": 2, "utts_per_cell": 6, "duration_s": 1.0, "seed": 3}
    write_yaml(root / "spec.yaml", spec)
    assert main(["gen-data", "--spec", str(root / "spec.yaml"), "--out", str(root / "data")]) == 0
    config = write_yaml(root / "config.yaml", base_config())
    for model in ("backbone", "subjudge:hifigan", "subjudge:bigvgan"):
        assert main(["train", "--config", str(config), "--model", model]) == 0
    scores = root / "scores.txt"
    assert main(["score", "--config", str(config), "--trials", str(root / "data/trials.txt"), "--out", str(scores)]) == 0
    return root, config, scores


def test_gen_data_outputs(pipeline, capsys):
    root, _, _ = pipeline
    assert (root / "data/manifest.txt").exists() and (root / "data/trials.txt").exists()
    (root / "bad.yaml").write_text("n_speakers: 0\n")
    assert main(["gen-data", "--spec", str(root / "bad.yaml"), "--out", str(root / "x")]) != 0
    assert "n_speakers" in capsys.readouterr().err


def test_train_writes_checkpoint_and_is_deterministic(pipeline, tmp_path, monkeypatch):
    root, config, _ = pipeline
    log = (root / "exp/backbone/loss.log").read_text().splitlines()
    assert [int(line.split()[0]) for line in log] == list(range(1, 7))
    monkeypatch.setenv(WORKDIR_ENV, str(tmp_path / "again"))
    assert main(["train", "--config", str(config), "--model", "backbone"]) == 0
    assert (tmp_path / "again/backbone/loss.log").read_text().splitlines() == log


def test_train_unconfigured_subjudge(pipeline, tmp_path, capsys):
    root, _, _ = pipeline
    cfg = base_config(subjudges={"bigvgan": {"preset": "tiny"}})
    cfg["paths"] = {k: str(root / v) for k, v in cfg["paths"].items()}
    config = write_yaml(tmp_path / "c.yaml", cfg)
    assert main(["train", "--config", str(config), "--model", "subjudge:hifigan"]) == 2
    assert "subjudges.hifigan" in capsys.readouterr().err


def test_score_file_columns(pipeline):
    root, _, scores = pipeline
    entries = read_scores(scores)
    assert {e.trial.label for e in entries} == {"target", "nontarget", "spoof"}
    assert all(set(e.spoof_posteriors) == {"hifigan", "bigvgan"} for e in entries)


def test_score_self_trial_and_missing_subjudge(pipeline, tmp_path):
    root, _, _ = pipeline
    enroll = (root / "data/trials.txt").read_text().split()[0]
    (tmp_path / "t.txt").write_text(f"{enroll} {enroll} target\n")
    cfg = base_config(subjudges={})
    cfg["paths"] = {k: str(root / v) for k, v in cfg["paths"].items()}
    config = write_yaml(tmp_path / "c.yaml", cfg)
    assert main(["score", "--config", str(config), "--trials", str(tmp_path / "t.txt"), "--out", str(tmp_path / "s")]) == 0
    line = (tmp_path / "s").read_text().split()
    assert float(line[3]) == pytest.approx(1.0, abs=1e-6)
    assert line[4:] == ["NA", "NA", "NA"]


def test_score_errors(pipeline, tmp_path):
    root, config, _ = pipeline
    trials = str(root / "data/trials.txt")
    cfg = base_config()
    cfg["paths"] = {"corpus": str(root / "data/manifest.txt"), "workdir": str(tmp_path / "empty")}
    missing_ckpt = write_yaml(tmp_path / "c.yaml", cfg)
    assert main(["score", "--config", str(missing_ckpt), "--trials", trials, "--out", str(tmp_path / "s")]) == 1

    data = tmp_path / "data"
    shutil.copytree(root / "data", data)
    victim = (data / "trials.txt").read_text().split()[1]
    (data / "wav" / f"{victim}.wav").unlink()
    cfg["paths"] = {"corpus": str(data / "manifest.txt"), "workdir": str(root / "exp")}
    missing_audio = write_yaml(tmp_path / "d.yaml", cfg)
    assert main(["score", "--config", str(missing_audio), "--trials", trials, "--out", str(tmp_path / "s")]) == 1


def kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_evaluate_reports_all_configurations(pipeline, tmp_path, capsys):
    _, _, scores = pipeline
    out = tmp_path / "r.txt"
    assert main(["evaluate", "--scores", str(scores), "--fusion", "calibrate", "--dev", str(scores), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    report = kv(out)
    for name in ("original", "+hifigan", "+bigvgan", "+hifigan+bigvgan"):
        assert f"== {name}" in text
        assert f"{name}.a_dcf" in report
    # evaluating the same file again is idempotent
    assert main(["evaluate", "--scores", str(scores), "--fusion", "calibrate", "--dev", str(scores), "--out", str(tmp_path / "r2.txt")]) == 0
    assert (tmp_path / "r2.txt").read_text() == out.read_text()


def test_evaluate_alpha_zero_equals_backbone(pipeline, tmp_path):
    _, _, scores = pipeline
    out = tmp_path / "r.txt"
    assert main(["evaluate", "--scores", str(scores), "--fusion", "hifigan=0,bigvgan=0", "--out", str(out)]) == 0
    report = kv(out)
    for key in ("eer", "min_dcf", "a_dcf"):
        assert report[f"+hifigan+bigvgan.{key}"] == report[f"original.{key}"]


def test_evaluate_oracle_posteriors(tmp_path):
    lines = [
        "e t1 target 0.9 0.0 NA NA",
        "e t2 target 0.6 0.0 NA NA",
        "e n1 nontarget 0.1 0.0 NA NA",
        "e s1 spoof 0.95 1.0 NA NA",
        "e s2 spoof 0.5 1.0 NA NA",
    ]
    (tmp_path / "s.txt").write_text("\n".join(lines) + "\n")
    out = tmp_path / "r.txt"
    assert main(["evaluate", "--scores", str(tmp_path / "s.txt"), "--out", str(out), "--det", str(tmp_path / "det")]) == 0
    report = kv(out)
    assert float(report["+hifigan.a_dcf"]) <= float(report["original.a_dcf"])
    assert "+bigvgan.a_dcf" not in report
    assert len((tmp_path / "det").read_text().splitlines()) == 6  # 4 midpoints + 2 sentinels


def test_evaluate_errors(tmp_path):
    (tmp_path / "s.txt").write_text("e n1 nontarget 0.1 NA NA NA\n")
    assert main(["evaluate", "--scores", str(tmp_path / "s.txt")]) == 1
    (tmp_path / "t.txt").write_text("e t1 target 0.1 NA NA NA\ne n1 nontarget 0.0 NA NA NA\n")
    assert main(["evaluate", "--scores", str(tmp_path / "t.txt"), "--fusion", "calibrate"]) == 2


def test_evaluate_metrics_config(tmp_path):
    (tmp_path / "s.txt").write_text("e t1 target 0.1 NA NA NA\ne n1 nontarget 0.3 NA NA NA\n")
    write_yaml(tmp_path / "m.yaml", {"normalize": False})
    out = tmp_path / "r.txt"
    assert main(["evaluate", "--scores", str(tmp_path / "s.txt"), "--metrics-config", str(tmp_path / "m.yaml"), "--out", str(out)]) == 0
    assert float(kv(out)["original.a_dcf"]) == pytest.approx(10 * 0.0095)
