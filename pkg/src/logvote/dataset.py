"""Partitioning, de-duplication, instability injection and training-subset sampling."""
from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

from .core import (
    WILDCARD,
    Label,
    LabeledDataset,
    LabeledSequence,
    LogMessage,
    LogSequence,
    SessionOrigin,
    WindowOrigin,
)
from .parser import TemplateStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Session:
    pass


@dataclass(frozen=True)
class SlidingWindow:
    window: int
    step: int

    def __post_init__(self):
        if self.window < 1 or not 1 <= self.step <= self.window:
            raise ValueError("sliding window needs window >= 1 and 1 <= step <= window")


@dataclass(frozen=True)
class Truncate:
    max_len: int

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


PartitionSpec = Union[Session, SlidingWindow, Truncate]


# -- partitioning -----------------------------------------------------------

def partition_by_session(
    messages: Sequence[LogMessage], parse: Callable[[LogMessage], int]
) -> list[LogSequence]:
    groups: dict[str, list[int]] = {}
    for msg in sorted(messages, key=lambda m: m.arrival_index):
        if msg.session_key is None:
            raise ValueError(f"message {msg.arrival_index} has no session key")
        groups.setdefault(msg.session_key, []).append(parse(msg))
    return [LogSequence(tuple(ids), SessionOrigin(key)) for key, ids in groups.items()]


def window_starts(n: int, window: int, step: int) -> list[int]:
    if window < 1 or step < 1:
        raise ValueError("window and step must be positive")
    return list(range(0, n, step))


def partition_sliding_window(template_ids: Sequence[int], window: int, step: int) -> list[LogSequence]:
    """Cut an id stream into windows starting at 0, step, 2*step, ...

    Every start below the stream length yields a window, so tails shorter
    than ``window`` are kept rather than dropped.
    """
    ids = list(template_ids)
    return [
        LogSequence(tuple(ids[s : s + window]), WindowOrigin(s))
        for s in window_starts(len(ids), window, step)
    ]


def truncate_sessions(sequences: Iterable[LogSequence], max_len: int) -> list[LogSequence]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return [LogSequence(s.template_ids[:max_len], s.origin) for s in sequences]


# -- de-duplication ---------------------------------------------------------

def deduplicate(
    test: Sequence[LabeledSequence], train: Sequence[LabeledSequence]
) -> tuple[list[LabeledSequence], float]:
    seen = {item.key for item in train}
    kept = [item for item in test if item.key not in seen]
    ratio = (len(test) - len(kept)) / len(test) if test else 0.0
    return kept, ratio


# -- instability injection --------------------------------------------------

class InjectionInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class InjectionSpec:
    ratio: float
    level: str = "sequence"  # "sequence" | "template"
    seed: int = 0
    safe_template_ids: Optional[frozenset[int]] = None  # None: every template is safe
    shuffle_span: int = 3

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("injection ratio must lie in [0, 1]")
        if self.level not in ("sequence", "template"):
            raise ValueError(f"unknown injection level {self.level!r}")
        if self.shuffle_span < 1:
            raise ValueError("shuffle_span must be positive")
        if self.safe_template_ids is not None:
            object.__setattr__(self, "safe_template_ids", frozenset(self.safe_template_ids))


SEQUENCE_EDITS = ("remove", "duplicate", "shuffle")


def _is_safe(spec: InjectionSpec, tid: int) -> bool:
    return spec.safe_template_ids is None or tid in spec.safe_template_ids


def _shuffle_starts(ids: Sequence[int], spec: InjectionSpec) -> list[int]:
    span = min(spec.shuffle_span, len(ids))
    starts = []
    for s in range(len(ids) - span + 1):
        chunk = ids[s : s + span]
        if len(set(chunk)) > 1 and all(_is_safe(spec, t) for t in chunk):
            starts.append(s)
    return starts


def _feasible_edits(ids: Sequence[int], spec: InjectionSpec) -> list[str]:
    safe_positions = [i for i, t in enumerate(ids) if _is_safe(spec, t)]
    edits = []
    if safe_positions and len(ids) > 1:
        edits.append("remove")
    if safe_positions:
        edits.append("duplicate")
    if _shuffle_starts(ids, spec):
        edits.append("shuffle")
    return edits


def edit_sequence(ids: Sequence[int], kind: str, spec: InjectionSpec, rng: random.Random) -> tuple[int, ...]:
    """Apply one edit of ``kind``; the result always differs from ``ids``."""
    ids = list(ids)
    safe_positions = [i for i, t in enumerate(ids) if _is_safe(spec, t)]
    if kind == "remove":
        pos = rng.choice(safe_positions)
        del ids[pos]
    elif kind == "duplicate":
        pos = rng.choice(safe_positions)
        ids.insert(pos, ids[pos])
    elif kind == "shuffle":
        span = min(spec.shuffle_span, len(ids))
        start = rng.choice(_shuffle_starts(ids, spec))
        chunk = ids[start : start + span]
        shuffled = list(chunk)
        while shuffled == chunk:
            rng.shuffle(shuffled)
        ids[start : start + span] = shuffled
    else:
        raise ValueError(f"unknown edit {kind!r}")
    return tuple(ids)


def inject_sequence_changes(dataset: LabeledDataset, spec: InjectionSpec) -> tuple[LabeledDataset, dict]:
    """Edit ``round(ratio * |test|)`` test sequences once each; train is left alone."""
    if spec.level != "sequence":
        raise ValueError("inject_sequence_changes needs a sequence-level spec")
    rng = random.Random(spec.seed)
    test = list(dataset.test)
    target = round(spec.ratio * len(test))
    order = list(range(len(test)))
    rng.shuffle(order)

    counts = Counter({k: 0 for k in SEQUENCE_EDITS})
    edited, skipped = [], 0
    for idx in order:
        if len(edited) == target:
            break
        item = test[idx]
        options = _feasible_edits(item.sequence.template_ids, spec)
        if not options:
            skipped += 1
            log.warning("test sequence %d has no editable template; drawing a replacement", idx)
            continue
        kind = rng.choice(SEQUENCE_EDITS)
        if kind not in options:
            kind = rng.choice(options)
        new_ids = edit_sequence(item.sequence.template_ids, kind, spec, rng)
        test[idx] = LabeledSequence(LogSequence(new_ids, item.sequence.origin), item.label)
        counts[kind] += 1
        edited.append(idx)
    if len(edited) < target:
        raise InjectionInfeasibleError(f"only {len(edited)} of {target} test sequences could be edited")

    out = LabeledDataset(dataset.name, list(dataset.train), test, dict(dataset.template_store))
    report = {
        "level": "sequence",
        "ratio": spec.ratio,
        "seed": spec.seed,
        "shuffle_span": spec.shuffle_span,
        "target": target,
        "edited": len(edited),
        "skipped": skipped,
        "edits": dict(counts),
        "edited_indices": sorted(edited),
    }
    return out, report


TEMPLATE_EDITS = ("insert", "delete", "replace")


def inject_template_changes(
    store: TemplateStore, spec: InjectionSpec, word_pool: Sequence[str]
) -> tuple[TemplateStore, dict]:
    """Insert, delete or replace one literal word in ``round(ratio * |templates|)`` templates."""
    if spec.level != "template":
        raise ValueError("inject_template_changes needs a template-level spec")
    if not word_pool and spec.ratio > 0:
        raise ValueError("word_pool must not be empty")
    rng = random.Random(spec.seed)
    out = store.copy()
    ids = sorted(out.templates)
    chosen = sorted(rng.sample(ids, round(spec.ratio * len(ids))))
    counts = Counter({k: 0 for k in TEMPLATE_EDITS})
    for tid in chosen:
        tokens = list(out[tid].tokens)
        literal_pos = [i for i, t in enumerate(tokens) if t != WILDCARD]
        kinds = list(TEMPLATE_EDITS)
        kind = rng.choice(kinds)
        while kind == "delete" and len(literal_pos) < 2:
            kind = rng.choice(kinds)
        if kind == "replace" and not [w for w in word_pool if w not in {tokens[i] for i in literal_pos}]:
            kind = "insert"
        if kind == "insert":
            tokens.insert(rng.randint(0, len(tokens)), rng.choice(list(word_pool)))
        elif kind == "delete":
            del tokens[rng.choice(literal_pos)]
        else:
            pos = rng.choice(literal_pos)
            tokens[pos] = rng.choice([w for w in word_pool if w != tokens[pos]] or list(word_pool))
        out.replace(tid, tokens)
        counts[kind] += 1
    report = {
        "level": "template",
        "ratio": spec.ratio,
        "seed": spec.seed,
        "edited": len(chosen),
        "edits": dict(counts),
        "edited_ids": chosen,
    }
    return out, report


# -- training subset sampling -----------------------------------------------

@dataclass(frozen=True)
class RandomSample:
    n: int


@dataclass(frozen=True)
class AnomalousPlusNormalFraction:
    fraction: float

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


SamplingStrategy = Union[RandomSample, AnomalousPlusNormalFraction]


def sample_training_subset(
    train: Sequence[LabeledSequence], strategy: SamplingStrategy, seed: int
) -> list[LabeledSequence]:
    rng = random.Random(seed)
    if isinstance(strategy, RandomSample):
        if not 0 <= strategy.n <= len(train):
            raise ValueError(f"cannot sample {strategy.n} of {len(train)} sequences")
        idx = sorted(rng.sample(range(len(train)), strategy.n))
        return [train[i] for i in idx]
    if isinstance(strategy, AnomalousPlusNormalFraction):
        anomalous = [item for item in train if item.label is Label.ANOMALOUS]
        representatives: dict[tuple[int, ...], LabeledSequence] = {}
        for item in train:
            if item.label is Label.NORMAL:
                representatives.setdefault(item.key, item)
        normals = list(representatives.values())
        picked = rng.sample(normals, round(strategy.fraction * len(normals)))
        return anomalous + picked
    raise TypeError(f"unknown sampling strategy {strategy!r}")


# -- data efficiency ---------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyStats:
    d_count: int
    u_count: int
    u_pct: float
    delta_u_pct: float


def compute_data_efficiency(
    subset: Sequence[LabeledSequence], full: Sequence[LabeledSequence]
) -> EfficiencyStats:
    full_keys = {item.key for item in full}
    if not full_keys:
        raise ValueError("full training set is empty")
    subset_keys = {item.key for item in subset}
    if not subset_keys <= full_keys:
        raise ValueError("subset contains sequences absent from the full set")
    u_pct = len(subset_keys) / len(full_keys)
    return EfficiencyStats(len(subset), len(subset_keys), u_pct, 1.0 - u_pct)
