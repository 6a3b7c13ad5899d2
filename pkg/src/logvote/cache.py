"""Exact-match prediction cache keyed by ordered template-id sequences."""
from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .core import Label, LogSequence, label_from_int

# Memory estimate constants (bytes).
BASE_BYTES = 64
ID_BYTES = 4
ENTRY_OVERHEAD_BYTES = 32


class AddOutcome(enum.Enum):
    INSERTED = "inserted"
    ALREADY_PRESENT = "already_present"
    FULL = "full"


class UpdateOutcome(enum.Enum):
    UPDATED = "updated"
    MISSING = "missing"


class DeleteOutcome(enum.Enum):
    DELETED = "deleted"
    MISSING = "missing"


@dataclass(frozen=True)
class CacheEntry:
    label: Label
    inserted_at: int


Key = tuple[int, ...]


def _key(seq: Union[LogSequence, Sequence[int]]) -> Key:
    if isinstance(seq, LogSequence):
        return seq.template_ids
    return tuple(int(i) for i in seq)


class PredictionCache:
    """Four-operation cache (query/add/update/delete) with no automatic eviction.

    Writes are serialized by a lock; readers see whole entries because each
    write swaps in a new immutable ``CacheEntry``.
    """

    def __init__(self, max_entries: Optional[int] = None):
        self.max_entries = max_entries
        self._entries: dict[Key, CacheEntry] = {}
        self._clock = itertools.count()
        self._write_lock = threading.Lock()
        self._key_ids = 0  # running sum of key lengths
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, seq) -> bool:
        return _key(seq) in self._entries

    def query(self, seq) -> Optional[Label]:
        entry = self._entries.get(_key(seq))
        return None if entry is None else entry.label

    def lookup(self, seq) -> Optional[Label]:
        """``query`` plus hit/miss bookkeeping."""
        label = self.query(seq)
        if label is None:
            self.misses += 1
        else:
            self.hits += 1
        return label

    def add(self, seq, label: Label) -> AddOutcome:
        key = _key(seq)
        with self._write_lock:
            if key in self._entries:
                return AddOutcome.ALREADY_PRESENT
            if self.max_entries is not None and len(self._entries) >= self.max_entries:
                return AddOutcome.FULL
            self._entries[key] = CacheEntry(Label(label), next(self._clock))
            self._key_ids += len(key)
            return AddOutcome.INSERTED

    def update(self, seq, label: Label) -> UpdateOutcome:
        key = _key(seq)
        with self._write_lock:
            entry = self._entries.get(key)
            if entry is None:
                return UpdateOutcome.MISSING
            self._entries[key] = CacheEntry(Label(label), entry.inserted_at)
            return UpdateOutcome.UPDATED

    def delete(self, seq) -> DeleteOutcome:
        key = _key(seq)
        with self._write_lock:
            if self._entries.pop(key, None) is None:
                return DeleteOutcome.MISSING
            self._key_ids -= len(key)
            return DeleteOutcome.DELETED

    def memory_usage_bytes(self) -> int:
        """``BASE_BYTES + sum(len(key) * ID_BYTES + ENTRY_OVERHEAD_BYTES)``."""
        return BASE_BYTES + self._key_ids * ID_BYTES + len(self._entries) * ENTRY_OVERHEAD_BYTES

    def items(self) -> Iterable[tuple[Key, CacheEntry]]:
        return sorted(self._entries.items(), key=lambda kv: kv[1].inserted_at)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for key, entry in self.items():
                fh.write(f"{int(entry.label)}\t{' '.join(map(str, key))}\n")

    @classmethod
    def load(cls, path: Union[str, Path], max_entries: Optional[int] = None) -> "PredictionCache":
        cache = cls(max_entries)
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                label, ids = line.split("\t", 1)
                key = tuple(int(i) for i in ids.split())
                if not key:
                    raise ValueError(f"{path}:{n}: empty key")
                cache.add(key, label_from_int(int(label)))
        return cache
