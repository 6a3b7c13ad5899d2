"""Prompt construction, knowledge-base retrieval and the chat-completion gateway."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence, Union

import requests

from .core import Label, LabeledSequence, LogSequence
from .parser import TemplateStore

log = logging.getLogger(__name__)

DESCRIPTION = (
    "Below is an instruction that describes a task, paired with an input that "
    "provides further context. Write a response that appropriately completes the request."
)
INSTRUCTION = (
    "Classify the given log sequence as normal or anomalous. The log sequence is "
    "delimited by brackets, and its items are separated by commas. "
    "Answer with a single label, either normal or anomalous. No explanation is required."
)
OUTPUT_CUE = "### Output:\nlabel:"


class KnowledgeBase:
    """Exact-match lookup from template text (or system call name) to a description."""

    def __init__(self, entries: Optional[Mapping[str, str]] = None):
        self._entries: dict[str, str] = {}
        for key, desc in (entries or {}).items():
            key = key.strip()
            if key in self._entries:
                raise ValueError(f"duplicate knowledge-base key {key!r}")
            self._entries[key] = desc.strip()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[str]:
        return self._entries.get(key.strip())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "KnowledgeBase":
        entries: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise ValueError(f"{path}:{n}: expected key<TAB>description")
                key, desc = line.split("\t", 1)
                if key.strip() in entries:
                    raise ValueError(f"{path}:{n}: duplicate key {key.strip()!r}")
                entries[key.strip()] = desc
        return cls(entries)


def render_item(store: TemplateStore, template_id: int, render_ids: bool = False) -> str:
    return str(template_id) if render_ids else store.render(template_id)


def retrieve_context(seq: LogSequence, store: TemplateStore, kb: KnowledgeBase) -> Optional[str]:
    lines, done = [], set()
    for tid in seq.template_ids:
        if tid in done:
            continue
        done.add(tid)
        key = store.render(tid)
        desc = kb.get(key)
        if desc is not None:
            lines.append(f"`{key}`: {desc}")
    return "\n".join(lines) if lines else None


@dataclass(frozen=True)
class Prompt:
    description: str
    instruction: str
    relevant_info: Optional[str]
    input_line: str
    output_cue: str = OUTPUT_CUE

    def render(self) -> str:
        parts = [f"### Description:\n{self.description}", f"### Instruction:\n{self.instruction}"]
        if self.relevant_info:
            parts.append(f"### Relevant Information:\n{self.relevant_info}")
        parts.append(f"### Input:\n{self.input_line}")
        parts.append(self.output_cue)
        return "\n\n".join(parts)


def build_prompt(
    seq: LogSequence,
    store: TemplateStore,
    kb: Optional[KnowledgeBase] = None,
    rag_enabled: bool = True,
    render_ids: bool = False,
) -> Prompt:
    items = ", ".join(render_item(store, tid, render_ids) for tid in seq.template_ids)
    info = retrieve_context(seq, store, kb) if (rag_enabled and kb is not None) else None
    return Prompt(DESCRIPTION, INSTRUCTION, info, f"log sequence: [{items}]")


_INPUT_LINE = re.compile(r"^log sequence: \[(.*)\]$", re.MULTILINE)


def items_from_prompt(text: str) -> list[str]:
    """Recover the rendered sequence items from a prompt's input line."""
    m = _INPUT_LINE.search(text)
    if m is None:
        raise ValueError("prompt has no input line")
    body = m.group(1)
    return body.split(", ") if body else []


# -- response parsing ---------------------------------------------------------

ANOMALOUS_TERMS = frozenset({"anomalous", "abnormal", "1"})
NORMAL_TERMS = frozenset({"normal", "0"})
_TOKEN = re.compile(r"[a-z0-9]+")


def parse_label(response: str) -> Optional[Label]:
    tokens = _TOKEN.findall(response.lower())
    if any(t in ANOMALOUS_TERMS for t in tokens):
        return Label.ANOMALOUS
    if any(t in NORMAL_TERMS for t in tokens):
        return Label.NORMAL
    return None


# -- backends -------------------------------------------------------------------

class TransportError(RuntimeError):
    """A single request failed to produce a response."""


class BackendUnavailableError(RuntimeError):
    """Every attempt in the retry ladder failed at the transport level."""


class Backend(Protocol):
    def complete(self, prompt: str, temperature: float) -> str: ...


@dataclass
class HttpBackend:
    """Client for an OpenAI-style ``/chat/completions`` endpoint.

    Request body: ``{"model", "messages": [{"role": "user", "content"}],
    "temperature", "max_tokens", "n": 1}``. The reply text is read from
    ``choices[0].message.content``.
    """

    endpoint: str
    model: str
    token_env: Optional[str] = None
    timeout: float = 60.0
    max_tokens: int = 8
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.environ.get(self.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def request_body(self, prompt: str, temperature: float) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": self.max_tokens,
            "n": 1,
        }

    def complete(self, prompt: str, temperature: float) -> str:
        try:
            resp = self.session.post(
                self.endpoint, json=self.request_body(prompt, temperature), headers=self._headers(), timeout=self.timeout
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise TransportError(str(exc)) from exc


class MockBackend:
    """Offline backend driven by a rule or a script; records every call.

    ``rule`` maps a prompt to a reply. ``script`` is a list of replies consumed
    in order (an ``Exception`` instance in the list is raised instead).
    """

    def __init__(self, rule: Optional[Callable[[str], str]] = None, script: Optional[Iterable] = None):
        if (rule is None) == (script is None):
            raise ValueError("give exactly one of rule or script")
        self.rule = rule
        self.script = list(script) if script is not None else None
        self.calls: list[tuple[str, float]] = []
        self._lock = threading.Lock()

    @property
    def temperatures(self) -> list[float]:
        return [t for _, t in self.calls]

    def complete(self, prompt: str, temperature: float) -> str:
        with self._lock:
            self.calls.append((prompt, temperature))
            if self.script is not None:
                if not self.script:
                    raise TransportError("mock script exhausted")
                reply = self.script.pop(0)
            else:
                reply = None
        if isinstance(reply, Exception):
            raise reply
        return reply if self.rule is None else self.rule(prompt)


def contains_rule(patterns: Sequence[str]) -> Callable[[str], str]:
    """Reply "anomalous" iff any pattern occurs as an item of the prompt's sequence."""
    wanted = set(patterns)

    def rule(prompt: str) -> str:
        return "anomalous" if wanted & set(items_from_prompt(prompt)) else "normal"

    return rule


def fixture_rule(mapping: Mapping[str, str], default: str = "normal") -> Callable[[str], str]:
    """Reply from a table keyed by the prompt's ``log sequence: [...]`` line."""

    def rule(prompt: str) -> str:
        m = _INPUT_LINE.search(prompt)
        return mapping.get(m.group(0) if m else "", default)

    return rule


# -- retry policy ---------------------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    base_temperature: float = 0.1
    ladder: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    default_label: Label = Label.NORMAL

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(self.ladder))
        if self.default_label is not Label.NORMAL:
            raise ValueError("the fallback label must be normal")

    @property
    def max_attempts(self) -> int:
        return 1 + len(self.ladder)

    @property
    def temperatures(self) -> tuple[float, ...]:
        return (self.base_temperature, *self.ladder)


def classify_with_llm(backend: Backend, prompt: Union[Prompt, str], policy: RetryPolicy = RetryPolicy()) -> tuple[Label, int]:
    """Query until a label parses, walking up the temperature ladder.

    Unparseable replies and transport failures both consume an attempt. If
    no reply ever arrived the backend is reported unavailable; otherwise the
    fallback label is returned.
    """
    text = prompt.render() if isinstance(prompt, Prompt) else prompt
    got_reply = False
    last_error: Optional[Exception] = None
    for attempt, temperature in enumerate(policy.temperatures, 1):
        try:
            reply = backend.complete(text, temperature)
        except TransportError as exc:
            last_error = exc
            log.warning("attempt %d at temperature %.2f failed: %s", attempt, temperature, exc)
            continue
        got_reply = True
        label = parse_label(reply)
        if label is not None:
            return label, attempt
        log.debug("unparseable reply %r at temperature %.2f", reply, temperature)
    if not got_reply:
        raise BackendUnavailableError(f"no reply after {policy.max_attempts} attempts") from last_error
    return policy.default_label, policy.max_attempts


class LlmClassifier:
    """Base model wrapping a backend, with a cap on in-flight requests."""

    def __init__(
        self,
        backend: Backend,
        store: TemplateStore,
        kb: Optional[KnowledgeBase] = None,
        rag_enabled: bool = True,
        policy: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 4,
        render_ids: bool = False,
    ):
        self.backend = backend
        self.store = store
        self.kb = kb
        self.rag_enabled = rag_enabled
        self.policy = policy
        self.render_ids = render_ids
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def predict_sequence(self, seq: LogSequence) -> Label:
        prompt = build_prompt(seq, self.store, self.kb, self.rag_enabled, self.render_ids)
        with self._slots:
            label, _ = classify_with_llm(self.backend, prompt, self.policy)
        return label


# -- fine-tuning export -----------------------------------------------------------

def export_finetune_dataset(
    data: Sequence[LabeledSequence],
    store: TemplateStore,
    kb: Optional[KnowledgeBase] = None,
    rag_enabled: bool = True,
    render_ids: bool = False,
) -> list[dict[str, str]]:
    return [
        {
            "prompt": build_prompt(item.sequence, store, kb, rag_enabled, render_ids).render(),
            "completion": item.label.word,
        }
        for item in data
    ]


def write_finetune_jsonl(records: Iterable[Mapping[str, str]], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps({"prompt": rec["prompt"], "completion": rec["completion"]}, ensure_ascii=False) + "\n")
