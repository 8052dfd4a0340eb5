import random

import pytest

from sasvkit.corpus import UtteranceRecord
from sasvkit.exceptions import LabelLookupError, ValidationError
from sasvkit.labeling import LabelMap, build_label_map


def corpus(speakers=("s1", "s2"), tags=("bonafide", "ttsA", "ttsB")):
    return [UtteranceRecord(f"{s}-{t}-{i}", s, t, "x.wav") for s in speakers for t in tags for i in range(2)]


def test_dual_counts_and_sharing():
    m = build_label_map(corpus(), "dual")
    assert m.n_classes == 4
    assert m.label_of("s1", "ttsA") == m.label_of("s1", "ttsB")
    assert m.label_of("s1", "ttsA") != m.label_of("s2", "ttsA")


def test_multi_global_counts_and_sharing():
    m = build_label_map(corpus(), "multi_global")
    assert m.n_classes == 4
    assert m.label_of("s1", "ttsA") == m.label_of("s2", "ttsA")
    assert m.label_of("s1", "ttsA") != m.label_of("s1", "ttsB")


def test_multi_per_speaker_counts():
    m = build_label_map(corpus(), "multi_per_speaker")
    assert m.n_classes == 6


@pytest.mark.parametrize("strategy", ["dual", "multi_global", "multi_per_speaker"])
def test_bonafide_classes(strategy):
    m = build_label_map(corpus(), strategy)
    for s in ("s1", "s2"):
        assert m.is_bonafide_class(m.label_of(s, "bonafide"))
        assert not m.is_bonafide_class(m.label_of(s, "ttsA"))
    # bona fide classes come first
    assert m.bonafide_classes == frozenset({0, 1})


def test_is_bonafide_class_range():
    m = build_label_map(corpus(), "dual")
    with pytest.raises(IndexError):
        m.is_bonafide_class(m.n_classes)


def test_unseen_pair_raises():
    m = build_label_map(corpus(), "dual")
    with pytest.raises(LabelLookupError):
        m.label_of("s9", "bonafide")
    g = build_label_map(corpus(), "multi_global")
    with pytest.raises(LabelLookupError):
        g.label_of("s1", "ttsZ")


def test_empty_records_rejected():
    with pytest.raises(ValidationError):
        build_label_map([], "dual")


def test_unknown_strategy():
    with pytest.raises(ValueError):
        build_label_map(corpus(), "triple")


def test_sidecar_round_trip(tmp_path):
    for strategy in ("dual", "multi_global", "multi_per_speaker"):
        m = build_label_map(corpus(), strategy)
        m.save(tmp_path / "labels.txt")
        assert LabelMap.load(tmp_path / "labels.txt") == m


def random_corpus(rng):
    n_spk = rng.randint(1, 6)
    tags = [f"tts{j}" for j in range(rng.randint(0, 4))]
    records = []
    for k in range(n_spk):
        sources = ["bonafide"] + [t for t in tags if rng.random() < 0.7]
        for src in sources:
            for i in range(rng.randint(1, 3)):
                records.append(UtteranceRecord(f"u{k}-{src}-{i}", f"spk{k}", src, "a.wav"))
    return records


def check_label_properties(records, shuffled):
    """Purity, class-count formulas and order determinism for every strategy."""
    speakers = {r.speaker_id for r in records}
    generated_speakers = {r.speaker_id for r in records if not r.is_bonafide}
    tags = {r.source_tag for r in records if not r.is_bonafide}
    expected = {
        "dual": 2 * len(generated_speakers) + (len(speakers) - len(generated_speakers)),
        "multi_global": len(speakers) + len(tags),
        "multi_per_speaker": len(speakers) + len({(r.speaker_id, r.source_tag) for r in records if not r.is_bonafide}),
    }
    for strategy, n in expected.items():
        m = build_label_map(records, strategy)
        assert m.n_classes == n
        members = {}
        for r in records:
            members.setdefault(m.label_of(r.speaker_id, r.source_tag), set()).add(r.is_bonafide)
        assert sorted(members) == list(range(m.n_classes))
        assert all(len(kinds) == 1 for kinds in members.values())
        assert {c for c, kinds in members.items() if kinds == {True}} == set(m.bonafide_classes)
        assert build_label_map(shuffled, strategy) == m


def test_label_properties_on_random_corpora():
    rng = random.Random(0)
    for _ in range(100):
        records = random_corpus(rng)
        shuffled = records[:]
        rng.shuffle(shuffled)
        check_label_properties(records, shuffled)
