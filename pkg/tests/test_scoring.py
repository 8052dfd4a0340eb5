import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasvkit.corpus import TrialRecord, UtteranceRecord
from sasvkit.exceptions import ParseError, ValidationError
from sasvkit.frontend import FrontendConfig
from sasvkit.metrics import a_dcf, partition_scores
from sasvkit.scoring import (
    CONFIGURATIONS,
    FusionCalibrator,
    FusionConfig,
    ScoreEntry,
    UtteranceCache,
    alpha_grid,
    available_configurations,
    calibrate_fusion,
    cosine_score,
    fuse_scores,
    read_scores,
    score_trials,
    write_scores,
)


class StubEmbedder:
    """Looks up a fixed embedding keyed by the first PCM sample of each waveform."""

    def __init__(self, table):
        self.table = table

    def _fe(self):
        return FrontendConfig()

    def transform(self, X):
        return np.stack([self.table[int(round(x[0] * 32768))] for x in X])


@pytest.fixture()
def stub_corpus(tmp_path):
    from scipy.io import wavfile

    records = []
    for i in range(4):
        wavfile.write(tmp_path / f"u{i}.wav", 16000, np.full(1600, i, dtype=np.int16))
        records.append(UtteranceRecord(f"u{i}", "s1", "bonafide", f"u{i}.wav"))
    return tmp_path, records


def test_cosine_self_similarity():
    e = np.array([0.3, -1.2, 2.0])
    assert cosine_score([e], e) == pytest.approx(1.0, abs=1e-6)


def test_cosine_orthogonal():
    assert cosine_score([[1.0, 0.0]], [0.0, 5.0]) == 0.0


def test_cosine_mean_enrollment_idempotent():
    e, t = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 2.0])
    assert cosine_score([e, e], t) == cosine_score([e], t)


def test_cosine_zero_norm():
    with pytest.raises(ValidationError):
        cosine_score([[0.0, 0.0]], [1.0, 0.0])


def test_score_trials_with_stub(stub_corpus):
    root, records = stub_corpus
    emb = StubEmbedder({0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0]), 2: np.array([2.0, 0.0]), 3: np.array([1.0, 1.0])})
    trials = [
        TrialRecord(("u0",), "u0", "target"),
        TrialRecord(("u0",), "u1", "nontarget"),
        TrialRecord(("u0", "u2"), "u3", "spoof"),
    ]

    class ConstJudge:
        def predict_proba(self, X):
            return np.array([[0.25, 0.75]] * len(X))

    entries = score_trials(trials, emb, records, root, {"hifigan": ConstJudge()})
    assert entries[0].asv_score == pytest.approx(1.0)
    assert entries[1].asv_score == 0.0
    assert entries[2].asv_score == pytest.approx(1 / np.sqrt(2))
    assert all(e.spoof_posteriors == {"hifigan": 0.75} for e in entries)


def test_missing_audio_raises(stub_corpus):
    root, records = stub_corpus
    (root / "u1.wav").unlink()
    cache = UtteranceCache(records, root, 16000)
    with pytest.raises(FileNotFoundError):
        cache.audio("u1")
    with pytest.raises(FileNotFoundError):
        cache.audio("nope")


def entry(label, asv, **posts):
    return ScoreEntry(TrialRecord(("e",), f"t{asv}", label), asv, posts)


def test_fuse_arithmetic():
    (out,) = fuse_scores([entry("spoof", 0.8, hifigan=1.0)], FusionConfig({"hifigan": 1.0}))
    assert out.fused_score == pytest.approx(-0.2)


def test_fuse_alpha_zero_is_identity():
    entries = [entry("target", 0.3, hifigan=0.9), entry("spoof", 0.1)]
    out = fuse_scores(entries, FusionConfig({"hifigan": 0.0}))
    assert [e.fused_score for e in out] == [0.3, 0.1]


def test_fuse_missing_posterior():
    with pytest.raises(ValidationError):
        fuse_scores([entry("target", 0.3)], FusionConfig({"bigvgan": 0.5}))


def test_fusion_config_validation_and_parse():
    assert FusionConfig.parse("hifigan=0.5, bigvgan=2").weights == {"hifigan": 0.5, "bigvgan": 2.0}
    assert str(FusionConfig()) == "none"
    with pytest.raises(ValidationError):
        FusionConfig({"hifigan": -1})
    with pytest.raises(ValidationError):
        FusionConfig.parse("hifigan")


def test_posterior_range_checked():
    with pytest.raises(ValidationError):
        entry("target", 0.1, hifigan=1.5)


def oracle_entries(tar, non, spf):
    out = [entry("target", float(s), hifigan=0.0) for s in tar]
    out += [entry("nontarget", float(s), hifigan=0.0) for s in non]
    out += [entry("spoof", float(s), hifigan=1.0) for s in spf]
    return out


def adcf_of(entries, which):
    g = partition_scores(entries, which)
    return a_dcf(g["target"], g["nontarget"], g["spoof"])[0]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=20),
    st.lists(st.floats(-3, 3), max_size=20),
    st.lists(st.floats(-3, 3), min_size=1, max_size=20),
    st.floats(0.01, 5),
)
def test_oracle_posteriors_never_hurt(tar, non, spf, alpha):
    entries = oracle_entries(tar, non, spf)
    fused = fuse_scores(entries, FusionConfig({"hifigan": alpha}))
    assert adcf_of(fused, "fused") <= adcf_of(entries, "asv")


def test_calibration_picks_one_with_oracle_posteriors():
    entries = oracle_entries([1.0, 1.2], [0.0], [1.5, 2.0])
    best = calibrate_fusion(entries, alpha_grid(["hifigan"], [0.0, 1.0]))
    assert best.weights == {"hifigan": 1.0}


def test_calibration_tie_prefers_small_l1():
    entries = oracle_entries([1.0], [0.0], [-1.0])  # already perfect
    best = calibrate_fusion(entries, alpha_grid(["hifigan"], [2.0, 0.0, 1.0]))
    assert best.weights == {"hifigan": 0.0}


def test_alpha_grid_cartesian():
    grid = alpha_grid(["hifigan", "bigvgan"], [0.0, 1.0, 2.0])
    assert len(grid) == 9 and len({str(g) for g in grid}) == 9


def test_configuration_lattice():
    assert {frozenset(v) for v in CONFIGURATIONS.values()} == {
        frozenset(),
        frozenset({"hifigan"}),
        frozenset({"bigvgan"}),
        frozenset({"hifigan", "bigvgan"}),
    }
    assert list(available_configurations([entry("target", 0.1, hifigan=0.2)])) == ["original", "+hifigan"]


def test_fusion_calibrator_estimator():
    X = np.array([[1.0, 0.0], [1.2, 0.0], [0.0, 0.0], [1.5, 1.0], [1.8, 1.0]])
    y = ["target", "target", "nontarget", "spoof", "spoof"]
    cal = FusionCalibrator(subjudges=("hifigan",), alphas=(0.0, 1.0)).fit(X, y)
    assert cal.alpha_.tolist() == [1.0]
    np.testing.assert_allclose(cal.decision_function(X), X[:, 0] - X[:, 1])
    assert cal.score(X, y) == 0.0
    assert cal.get_params()["alphas"] == (0.0, 1.0)


def test_score_file_round_trip(tmp_path):
    entries = [
        ScoreEntry(TrialRecord(("a", "b"), "c", "spoof"), 0.1 + 0.2, {"hifigan": 1 / 3}, -0.1),
        ScoreEntry(TrialRecord(("a",), "d", "target"), -0.7, {"bigvgan": 0.0}),
        ScoreEntry(TrialRecord(("a",), "e", "nontarget"), 1e-300, {}),
    ]
    write_scores(entries, tmp_path / "s.txt")
    assert read_scores(tmp_path / "s.txt") == entries


def test_score_file_malformed(tmp_path):
    (tmp_path / "s.txt").write_text("a c target 0.1 NA\n")
    with pytest.raises(ParseError):
        read_scores(tmp_path / "s.txt")
    (tmp_path / "s.txt").write_text("a c target oops NA NA NA\n")
    with pytest.raises(ParseError):
        read_scores(tmp_path / "s.txt")
