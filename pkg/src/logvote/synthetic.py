"""Synthetic log corpora with a planted anomaly pattern.

A sequence is anomalous iff it contains the planted template, so a detector
that learns that rule reaches perfect scores. Used by the end-to-end tests
and the example experiment scripts.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .core import Label, LabeledDataset, LabeledSequence, LogSequence, SessionOrigin
from .dataset import deduplicate
from .parser import TemplateStore

_WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee",
]
_ACTIONS = ["opened", "closed", "verified", "replicated", "flushed", "scheduled", "served", "acked"]
PLANTED_WORD = "zulu"
PLANTED_FORMAT = "zulu fatal checksum mismatch on block {}"


def message_formats(n_normal: int) -> list[str]:
    if n_normal > len(_WORDS):
        raise ValueError(f"at most {len(_WORDS)} normal templates")
    return [
        f"{_WORDS[i]} worker {_ACTIONS[i % len(_ACTIONS)]} resource {{}} in {{}} ms"
        for i in range(n_normal)
    ]


@dataclass(frozen=True)
class PlantedSpec:
    n_normal_templates: int = 20
    min_len: int = 6
    max_len: int = 16
    anomaly_rate: float = 0.2
    # templates only present after the "evolution" (test side)
    n_new_templates: int = 3
    new_template_rate: float = 0.3


def _draw_ids(rng: random.Random, spec: PlantedSpec, pool: list[int], anomalous: bool, planted_id: int) -> tuple[int, ...]:
    length = rng.randint(spec.min_len, spec.max_len)
    ids = [rng.choice(pool) for _ in range(length)]
    if anomalous:
        ids[rng.randrange(length)] = planted_id
    return tuple(ids)


def planted_store(spec: PlantedSpec) -> tuple[TemplateStore, int, list[int]]:
    """Templates 0..n-1 normal, then the planted one, then the test-only ones."""
    store = TemplateStore()
    for fmt in message_formats(spec.n_normal_templates):
        store.mint(fmt.format("<*>", "<*>").split())
    planted_id = store.mint(PLANTED_FORMAT.format("<*>").split()).id
    new_ids = []
    for i in range(spec.n_new_templates):
        new_ids.append(store.mint(f"{_WORDS[-1 - i]} upgraded component {{}} restarted".format("<*>").split()).id)
    return store, planted_id, new_ids


def planted_sequences(
    n: int, seed: int, spec: PlantedSpec = PlantedSpec(), evolved: bool = False
) -> tuple[list[LabeledSequence], TemplateStore, int]:
    rng = random.Random(seed)
    store, planted_id, new_ids = planted_store(spec)
    base = list(range(spec.n_normal_templates))
    out = []
    for i in range(n):
        anomalous = rng.random() < spec.anomaly_rate
        pool = base + new_ids if evolved and rng.random() < spec.new_template_rate else base
        ids = _draw_ids(rng, spec, pool, anomalous, planted_id)
        label = Label.ANOMALOUS if planted_id in ids else Label.NORMAL
        out.append(LabeledSequence(LogSequence(ids, SessionOrigin(f"s{i}")), label))
    return out, store, planted_id


def planted_dataset(
    n_train: int = 500, n_test: int = 1000, seed: int = 0, spec: PlantedSpec = PlantedSpec()
) -> tuple[LabeledDataset, int]:
    """Train on the stable distribution, test on an evolved one, de-duplicated to ``n_test``."""
    train, store, planted_id = planted_sequences(n_train, seed, spec)
    candidates, _, _ = planted_sequences(4 * n_test, seed + 1, spec, evolved=True)
    test, _ = deduplicate(candidates, train)
    if len(test) < n_test:
        raise RuntimeError("not enough unseen test sequences; widen the PlantedSpec ranges")
    return LabeledDataset("planted", train, test[:n_test], dict(store.templates)), planted_id


LOG_FORMAT = r"^(?P<header>\S+ \S+) (?P<session>\S+) (?P<content>.*)$"


def write_planted_logs(
    directory: Union[str, Path],
    n_train: int = 300,
    n_test: int = 300,
    seed: int = 0,
    spec: PlantedSpec = PlantedSpec(),
) -> dict[str, Path]:
    """Write raw train/test log files and a session label file.

    Line layout: ``<date> <level> <session> <content>``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed + 7)
    formats = message_formats(spec.n_normal_templates)
    store, planted_id, new_ids = planted_store(spec)
    text_for = {tid: fmt for tid, fmt in enumerate(formats)}
    text_for[planted_id] = PLANTED_FORMAT
    for tid in new_ids:
        text_for[tid] = store.render(tid).replace("<*>", "{}")

    def render(tid: int) -> str:
        fmt = text_for[tid]
        return fmt.format(*(rng.randint(1, 9999) for _ in range(fmt.count("{}"))))

    paths = {"train": directory / "train.log", "test": directory / "test.log", "labels": directory / "labels.tsv"}
    train, _, _ = planted_sequences(n_train, seed, spec)
    test, _, _ = planted_sequences(n_test, seed + 1, spec, evolved=True)
    with open(paths["labels"], "w", encoding="utf-8", newline="\n") as labels:
        for part, items in (("train", train), ("test", test)):
            with open(paths[part], "w", encoding="utf-8", newline="\n") as fh:
                for i, item in enumerate(items):
                    session = f"{part}_{i:05d}"
                    labels.write(f"{session}\t{int(item.label)}\n")
                    for tid in item.sequence.template_ids:
                        fh.write(f"2024-05-01 INFO {session} {render(tid)}\n")
    return paths
