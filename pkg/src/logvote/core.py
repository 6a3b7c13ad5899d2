"""Domain types shared by every stage of the pipeline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

WILDCARD = "<*>"


class Label(enum.IntEnum):
    NORMAL = 0
    ANOMALOUS = 1

    @property
    def word(self) -> str:
        return "anomalous" if self is Label.ANOMALOUS else "normal"


def label_from_int(v: int) -> Label:
    if isinstance(v, bool) or v not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {v!r}")
    return Label(v)


@dataclass(frozen=True)
class LogMessage:
    content: str
    header: str = ""
    session_key: Optional[str] = None
    arrival_index: int = 0
    source: str = ""


@dataclass(frozen=True)
class LogTemplate:
    id: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("template id must be non-negative")
        if not self.tokens:
            raise ValueError("template tokens must be non-empty")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def literals(self) -> list[str]:
        return [t for t in self.tokens if t != WILDCARD]


@dataclass(frozen=True)
class SessionOrigin:
    key: str


@dataclass(frozen=True)
class WindowOrigin:
    start_index: int


Origin = Union[SessionOrigin, WindowOrigin]


@dataclass(frozen=True)
class LogSequence:
    template_ids: tuple[int, ...]
    origin: Optional[Origin] = None

    def __post_init__(self):
        if not self.template_ids:
            raise ValueError("a log sequence needs at least one template id")
        object.__setattr__(self, "template_ids", tuple(int(i) for i in self.template_ids))

    def __len__(self) -> int:
        return len(self.template_ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.template_ids)

    @property
    def key(self) -> tuple[int, ...]:
        return self.template_ids


@dataclass(frozen=True)
class LabeledSequence:
    sequence: LogSequence
    label: Label

    @property
    def key(self) -> tuple[int, ...]:
        return self.sequence.template_ids


class DatasetFrozenError(RuntimeError):
    pass


@dataclass
class LabeledDataset:
    name: str
    train: list[LabeledSequence]
    test: list[LabeledSequence]
    template_store: Mapping[int, LogTemplate] = field(default_factory=dict)
    frozen: bool = False

    def __setattr__(self, key, value):
        if getattr(self, "frozen", False):
            raise DatasetFrozenError(f"dataset {self.name!r} is frozen")
        super().__setattr__(key, value)

    def validate(self) -> None:
        if not self.template_store:
            return
        for part in (self.train, self.test):
            for item in part:
                missing = [i for i in item.sequence.template_ids if i not in self.template_store]
                if missing:
                    raise ValueError(f"template ids {missing} not in template store")

    def freeze(self) -> "LabeledDataset":
        self.validate()
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        object.__setattr__(self, "template_store", MappingProxyType(dict(self.template_store)))
        object.__setattr__(self, "frozen", True)
        return self


# Canonical interchange: "label<TAB>id1 id2 id3" per line.

def format_sequence_line(item: LabeledSequence) -> str:
    ids = " ".join(str(i) for i in item.sequence.template_ids)
    return f"{int(item.label)}\t{ids}"


def parse_sequence_line(line: str) -> LabeledSequence:
    line = line.rstrip("\n")
    try:
        label_part, ids_part = line.split("\t", 1)
    except ValueError:
        raise ValueError(f"malformed sequence line: {line!r}") from None
    label = label_from_int(int(label_part))
    ids = tuple(int(tok) for tok in ids_part.split())
    return LabeledSequence(LogSequence(ids), label)


def write_sequences(path: Union[str, Path], items: Iterable[LabeledSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in items:
            fh.write(format_sequence_line(item) + "\n")


def read_sequences(path: Union[str, Path]) -> list[LabeledSequence]:
    with open(path, encoding="utf-8") as fh:
        return [parse_sequence_line(line) for line in fh if line.strip()]


def unique_keys(items: Sequence[LabeledSequence]) -> set[tuple[int, ...]]:
    return {item.key for item in items}
