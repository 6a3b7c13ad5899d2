"""Declarative run configuration (YAML or JSON) and seed derivation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .dataset import AnomalousPlusNormalFraction, RandomSample, SamplingStrategy
from .ensemble import EnsembleConfig
from .llm import RetryPolicy
from .parser import ParserConfig


def derive_seed(root: int, stage: str) -> int:
    """Stable per-stage seed so stages never share a random stream."""
    digest = hashlib.sha256(f"{root}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class InputConfig:
    log_format: Optional[str] = None  # regex with named groups content, optional header/session
    train_files: list[str] = field(default_factory=list)
    test_files: list[str] = field(default_factory=list)
    labels: Optional[str] = None
    train_fraction: float = 0.5  # used when test_files is empty


@dataclass
class PartitionConfig:
    mode: str = "session"  # session | window
    window: int = 50
    step: int = 50
    max_len: Optional[int] = None


@dataclass
class InjectionConfig:
    ratio: float = 0.0
    level: str = "sequence"
    shuffle_span: int = 3
    safe_templates: Optional[str] = None
    word_pool: list[str] = field(default_factory=list)


@dataclass
class SamplingConfig:
    strategy: str = "all"  # all | random | anomalous_plus_normal
    n: int = 0
    fraction: float = 0.2

    def build(self) -> Optional[SamplingStrategy]:
        if self.strategy == "all":
            return None
        if self.strategy == "random":
            return RandomSample(self.n)
        if self.strategy == "anomalous_plus_normal":
            return AnomalousPlusNormalFraction(self.fraction)
        raise ValueError(f"unknown sampling strategy {self.strategy!r}")


@dataclass
class ModelConfig:
    knn_k: int = 2
    dt_max_depth: Optional[int] = None
    dt_min_samples_split: int = 2
    slfn_epochs: int = 200
    slfn_lr: float = 1e-3
    slfn_hidden: int = 100


@dataclass
class BackendConfig:
    kind: str = "mock"  # mock | http
    rule: str = "constant"  # mock: constant | contains | keyword | fixture
    patterns: list[str] = field(default_factory=list)
    reply: str = "normal"
    fixture: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    token_env: Optional[str] = None
    timeout: float = 60.0
    max_tokens: int = 8


@dataclass
class DetectConfig:
    max_workers: int = 1
    strict: bool = True
    cache_snapshot: Optional[str] = None
    max_in_flight: int = 4
    render_ids: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    dedup: bool = True
    kb: Optional[str] = None
    input: InputConfig = field(default_factory=InputConfig)
    parser: dict[str, Any] = field(default_factory=dict)
    passthrough: bool = False
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    injection: Optional[InjectionConfig] = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    ensemble: dict[str, bool] = field(default_factory=dict)
    models: ModelConfig = field(default_factory=ModelConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    retry: dict[str, Any] = field(default_factory=dict)
    detect: DetectConfig = field(default_factory=DetectConfig)
    base_dir: str = "."

    def parser_config(self) -> ParserConfig:
        return ParserConfig(**self.parser)

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(**self.ensemble)

    def retry_policy(self) -> RetryPolicy:
        return RetryPolicy(**self.retry)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        self.parser_config()
        self.ensemble_config()
        self.retry_policy()
        for path in [*self.input.train_files, *self.input.test_files, self.input.labels, self.kb]:
            if path is not None and not self.resolve(path).exists():
                raise FileNotFoundError(f"configured file not found: {path}")
        if self.injection is not None and self.injection.safe_templates is not None:
            if not self.resolve(self.injection.safe_templates).exists():
                raise FileNotFoundError(f"configured file not found: {self.injection.safe_templates}")


_NESTED = {
    "input": InputConfig,
    "partition": PartitionConfig,
    "injection": InjectionConfig,
    "sampling": SamplingConfig,
    "models": ModelConfig,
    "backend": BackendConfig,
    "detect": DetectConfig,
}


def config_from_dict(raw: dict[str, Any], base_dir: Union[str, Path] = ".") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _NESTED and value is not None:
            kwargs[key] = _NESTED[key](**value)
        else:
            kwargs[key] = value
    kwargs.setdefault("base_dir", str(base_dir))
    return RunConfig(**kwargs)


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_dict(raw or {}, base_dir=path.parent)
