"""Cache-fronted majority-vote ensemble over ML and LLM base models."""
from __future__ import annotations

import enum
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence, Union

from .cache import PredictionCache
from .core import Label, LogSequence
from .evaluation import TimingReport, timing_report
from .models import Vectorizer

MODEL_ORDER = ("knn", "dt", "slfn", "llm")


def majority_vote(votes: Sequence[Label]) -> Label:
    if not votes:
        raise ValueError("majority vote over no votes")
    anomalous = sum(int(v) for v in votes)
    return Label.ANOMALOUS if 2 * anomalous > len(votes) else Label.NORMAL


@dataclass(frozen=True)
class EnsembleConfig:
    use_knn: bool = True
    use_dt: bool = True
    use_slfn: bool = True
    use_llm: bool = True
    rag_enabled: bool = True
    cache_enabled: bool = True

    def __post_init__(self):
        if not self.enabled_models:
            raise ValueError("at least one base model must be enabled")

    @property
    def enabled_models(self) -> tuple[str, ...]:
        flags = {"knn": self.use_knn, "dt": self.use_dt, "slfn": self.use_slfn, "llm": self.use_llm}
        return tuple(name for name in MODEL_ORDER if flags[name])


class BaseModel(Protocol):
    def predict_sequence(self, seq: LogSequence) -> Label: ...


class MlClassifier:
    """Adapts a count-vector model to the sequence-level interface."""

    def __init__(self, model, vectorizer: Vectorizer):
        if model.dim != vectorizer.dim:
            raise ValueError(f"model expects dimension {model.dim}, vectorizer gives {vectorizer.dim}")
        self.model = model
        self.vectorizer = vectorizer

    def predict_sequence(self, seq: LogSequence) -> Label:
        return self.model.predict_one(self.vectorizer.transform_one(seq))


class Source(enum.Enum):
    CACHE_HIT = "cache_hit"
    COMPUTED = "computed"


@dataclass(frozen=True)
class VoteRecord:
    final: Label
    source: Source
    per_model: Mapping[str, Label] = field(default_factory=dict)

    def format_line(self) -> str:
        votes = ",".join(f"{name}={int(v)}" for name, v in self.per_model.items())
        return f"{int(self.final)}\t{self.source.value}\t{votes}"

    @classmethod
    def parse_line(cls, line: str) -> "VoteRecord":
        final, source, votes = line.rstrip("\n").split("\t")
        per_model = {}
        for part in filter(None, votes.split(",")):
            name, v = part.split("=")
            per_model[name] = Label(int(v))
        return cls(Label(int(final)), Source(source), per_model)


class BatchAborted(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"detection aborted at sequence {index}: {cause}")
        self.index = index
        self.cause = cause


@dataclass
class BatchResult:
    records: list[Optional[VoteRecord]]
    timing: TimingReport
    cache_seconds: float = 0.0
    errors: list[tuple[int, BaseException]] = field(default_factory=list)

    @property
    def computed(self) -> int:
        return sum(1 for r in self.records if r is not None and r.source is Source.COMPUTED)

    @property
    def cache_hits(self) -> int:
        return sum(1 for r in self.records if r is not None and r.source is Source.CACHE_HIT)


class EnsemblePipeline:
    def __init__(
        self,
        config: EnsembleConfig,
        models: Mapping[str, BaseModel],
        cache: Optional[PredictionCache] = None,
    ):
        missing = [name for name in config.enabled_models if name not in models]
        if missing:
            raise ValueError(f"enabled models without an implementation: {missing}")
        self.config = config
        self.models = {name: models[name] for name in config.enabled_models}
        self.cache = cache if cache is not None else PredictionCache()
        self.invocations = 0
        self.cache_seconds = 0.0
        self._count_lock = threading.Lock()

    def vote(self, seq: LogSequence, pool: Optional[ThreadPoolExecutor] = None) -> dict[str, Label]:
        with self._count_lock:
            self.invocations += 1
        if pool is None:
            return {name: m.predict_sequence(seq) for name, m in self.models.items()}
        futures = {name: pool.submit(m.predict_sequence, seq) for name, m in self.models.items()}
        return {name: f.result() for name, f in futures.items()}

    def _cached(self, seq: LogSequence) -> Optional[Label]:
        if not self.config.cache_enabled:
            return None
        t0 = time.perf_counter()
        label = self.cache.lookup(seq)
        self.cache_seconds += time.perf_counter() - t0
        return label

    def _store(self, seq: LogSequence, label: Label) -> None:
        if self.config.cache_enabled:
            t0 = time.perf_counter()
            self.cache.add(seq, label)
            self.cache_seconds += time.perf_counter() - t0

    def _finish(self, seq: LogSequence, votes: dict[str, Label]) -> VoteRecord:
        final = majority_vote(list(votes.values()))
        self._store(seq, final)
        return VoteRecord(final, Source.COMPUTED, votes)

    def detect(self, seq: LogSequence) -> VoteRecord:
        cached = self._cached(seq)
        if cached is not None:
            return VoteRecord(cached, Source.CACHE_HIT, {})
        return self._finish(seq, self.vote(seq))

    def detect_batch(
        self, seqs: Sequence[LogSequence], max_workers: int = 1, strict: bool = True
    ) -> BatchResult:
        """Detect every sequence, keeping input order in the output.

        With ``max_workers > 1`` the distinct uncached sequences are voted on
        concurrently first; records are then assembled in input order so the
        cache sees exactly the same writes as a sequential run.
        """
        start_cache = self.cache_seconds
        if max_workers <= 1:
            records: list[Optional[VoteRecord]] = []
            durations, errors = [], []
            for i, seq in enumerate(seqs):
                t0 = time.perf_counter()
                try:
                    records.append(self.detect(seq))
                except Exception as exc:
                    if strict:
                        raise BatchAborted(i, exc) from exc
                    errors.append((i, exc))
                    records.append(None)
                durations.append(time.perf_counter() - t0)
            return BatchResult(records, timing_report(durations), self.cache_seconds - start_cache, errors)
        return self._detect_parallel(seqs, max_workers, strict, start_cache)

    def _detect_parallel(self, seqs, max_workers, strict, start_cache) -> BatchResult:
        todo: dict[tuple[int, ...], int] = {}
        for i, seq in enumerate(seqs):
            if seq.key not in todo and (not self.config.cache_enabled or seq.key not in self.cache):
                todo[seq.key] = i
        if not self.config.cache_enabled:
            todo = {}

        def timed_vote(seq):
            t0 = time.perf_counter()
            try:
                return self.vote(seq), None, time.perf_counter() - t0
            except Exception as exc:
                return None, exc, time.perf_counter() - t0

        with ThreadPoolExecutor(max_workers) as pool:
            if self.config.cache_enabled:
                futures = {key: pool.submit(timed_vote, seqs[i]) for key, i in todo.items()}
                results = {key: f.result() for key, f in futures.items()}
            else:
                all_results = list(pool.map(timed_vote, seqs))

        records: list[Optional[VoteRecord]] = []
        durations, errors = [], []
        for i, seq in enumerate(seqs):
            t0 = time.perf_counter()
            if self.config.cache_enabled:
                if todo.get(seq.key) == i:
                    votes, exc, spent = results[seq.key]
                else:
                    cached = self._cached(seq)
                    if cached is not None:
                        records.append(VoteRecord(cached, Source.CACHE_HIT, {}))
                        durations.append(time.perf_counter() - t0)
                        continue
                    # first occurrence failed earlier; treat the repeat the same way
                    votes, exc, spent = results[seq.key]
                    spent = 0.0
            else:
                votes, exc, spent = all_results[i]
            if exc is not None:
                if strict:
                    raise BatchAborted(i, exc) from exc
                errors.append((i, exc))
                records.append(None)
            else:
                records.append(self._finish(seq, votes))
            durations.append(spent + time.perf_counter() - t0)
        return BatchResult(records, timing_report(durations), self.cache_seconds - start_cache, errors)


def write_detections(path: Union[str, Path], records: Iterable[Optional[VoteRecord]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            if rec is None:
                raise ValueError("cannot write a failed detection")
            fh.write(rec.format_line() + "\n")


def read_detections(path: Union[str, Path]) -> list[VoteRecord]:
    with open(path, encoding="utf-8") as fh:
        return [VoteRecord.parse_line(line) for line in fh if line.strip()]
