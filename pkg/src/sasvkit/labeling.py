"""Speaker-ID label design: map (speaker, source) pairs to class indices.

Three strategies are supported:

``dual``
    Each speaker owns a bona fide class and a second class that pools every
    generated utterance carrying that speaker's identity.
``multi_global``
    One class per bona fide speaker plus one class per generator, shared by
    all speakers the generator imitates.
``multi_per_speaker``
    One class per bona fide speaker plus one per (speaker, generator) pair.

Classes are ordered with bona fide classes first, then lexicographically by key.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .corpus import BONAFIDE, UtteranceRecord
from .exceptions import LabelLookupError, ParseError, ValidationError

SPOOF_GROUP = "*spoof*"


class LabelStrategy(str, Enum):
    DUAL = "dual"
    MULTI_GLOBAL = "multi_global"
    MULTI_PER_SPEAKER = "multi_per_speaker"


@dataclass(frozen=True)
class LabelMap:
    strategy: LabelStrategy
    classes: tuple[tuple[str, str], ...]
    bonafide_classes: frozenset[int]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def _index(self) -> dict:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {key: i for i, key in enumerate(self.classes)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def key_of(self, speaker_id: str, source_tag: str) -> tuple[str, str]:
        if source_tag == BONAFIDE:
            return (speaker_id, BONAFIDE)
        if self.strategy is LabelStrategy.DUAL:
            return (speaker_id, SPOOF_GROUP)
        if self.strategy is LabelStrategy.MULTI_GLOBAL:
            return ("", source_tag)
        return (speaker_id, source_tag)

    def label_of(self, speaker_id: str, source_tag: str) -> int:
        key = self.key_of(speaker_id, source_tag)
        try:
            return self._index[key]
        except KeyError:
            raise LabelLookupError(
                f"({speaker_id!r}, {source_tag!r}) is not covered by this {self.strategy.value} label map"
            ) from None

    def labels(self, records: Iterable[UtteranceRecord]) -> list[int]:
        return [self.label_of(r.speaker_id, r.source_tag) for r in records]

    def is_bonafide_class(self, index: int) -> bool:
        if not 0 <= index < self.n_classes:
            raise IndexError(f"class index {index} out of range [0, {self.n_classes})")
        return index in self.bonafide_classes

    def save(self, path) -> None:
        """Write the ``index speaker source`` sidecar table."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# strategy {self.strategy.value}\n")
            for i, (spk, src) in enumerate(self.classes):
                fh.write(f"{i} {spk or '-'} {src}\n")

    @classmethod
    def load(cls, path) -> "LabelMap":
        strategy = None
        classes = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if line.startswith("# strategy"):
                    strategy = LabelStrategy(line.split()[-1])
                    continue
                if not line or line.startswith("#"):
                    continue
                fields = line.split()
                if len(fields) != 3 or int(fields[0]) != len(classes):
                    raise ParseError("expected contiguous 'index speaker source' rows", path, lineno)
                classes.append(("" if fields[1] == "-" else fields[1], fields[2]))
        if strategy is None:
            raise ParseError("missing '# strategy' header", path)
        bona = frozenset(i for i, (_, src) in enumerate(classes) if src == BONAFIDE)
        return cls(strategy, tuple(classes), bona)


def build_label_map(records: Iterable[UtteranceRecord], strategy="multi_global") -> LabelMap:
    strategy = LabelStrategy(strategy)
    records = list(records)
    if not records:
        raise ValidationError("cannot build a label map from zero records")
    bona, spoof = set(), set()
    probe = LabelMap(strategy, (), frozenset())
    for r in records:
        if not r.source_tag:
            raise ValidationError(f"record {r.utt_id!r} has an empty source_tag")
        key = probe.key_of(r.speaker_id, r.source_tag)
        (bona if r.source_tag == BONAFIDE else spoof).add(key)
    classes = tuple(sorted(bona)) + tuple(sorted(spoof))
    return LabelMap(strategy, classes, frozenset(range(len(bona))))
