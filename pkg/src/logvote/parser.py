"""Drain-style template mining over a fixed-depth prefix tree.

The tree routes a message by its token count, then by its first
``tree_depth - 2`` tokens, and finally compares it against the templates
stored in the reached leaf. Passthrough mode skips the tree entirely and
gives every distinct single-token message its own template.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional, Sequence, Union

from .core import WILDCARD, LogTemplate

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_HAS_DIGIT = re.compile(r"\d")


@dataclass
class ParserConfig:
    tree_depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100
    wildcard_marker: str = WILDCARD
    numeric_masking: bool = True

    def __post_init__(self):
        if self.tree_depth < 2:
            raise ValueError("tree_depth must be >= 2")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1)")
        if self.max_children < 1:
            raise ValueError("max_children must be positive")


@dataclass
class TemplateStore:
    templates: dict[int, LogTemplate] = field(default_factory=dict)
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, template_id: int) -> bool:
        return template_id in self.templates

    def __getitem__(self, template_id: int) -> LogTemplate:
        return self.templates[template_id]

    def mint(self, tokens: Sequence[str]) -> LogTemplate:
        template = LogTemplate(self.next_id, tuple(tokens))
        self.templates[template.id] = template
        self.next_id += 1
        return template

    def replace(self, template_id: int, tokens: Sequence[str]) -> LogTemplate:
        if template_id not in self.templates:
            raise KeyError(template_id)
        template = LogTemplate(template_id, tuple(tokens))
        self.templates[template_id] = template
        return template

    def render(self, template_id: int) -> str:
        return self.templates[template_id].text

    def copy(self) -> "TemplateStore":
        return TemplateStore(dict(self.templates), self.next_id)

    def check_dense(self) -> None:
        if sorted(self.templates) != list(range(self.next_id)):
            raise ValueError("template ids are not dense")

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tid in sorted(self.templates):
                fh.write(f"{tid}\t{self.templates[tid].text}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TemplateStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tid, text = line.split("\t", 1)
                store.templates[int(tid)] = LogTemplate(int(tid), tuple(text.split()))
        store.next_id = max(store.templates, default=-1) + 1
        store.check_dense()
        return store


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.template_ids: list[int] = []


class DrainParser:
    """Online template miner; one instance owns one ``TemplateStore``."""

    def __init__(self, config: Optional[ParserConfig] = None, store: Optional[TemplateStore] = None):
        self.config = config or ParserConfig()
        self.store = store if store is not None else TemplateStore()
        self._root = _Node()
        self._seen: dict[str, int] = {}

    def _tokenize(self, content: str) -> tuple[list[str], list[str]]:
        raw = content.split()
        if not raw:
            raise ValueError("cannot parse an empty message")
        if self.config.numeric_masking:
            masked = [self.config.wildcard_marker if _NUMBER.match(t) else t for t in raw]
            if all(t == self.config.wildcard_marker for t in masked):
                # a template must keep at least one literal
                masked = list(raw)
        else:
            masked = list(raw)
        return raw, masked

    def _leaf(self, tokens: list[str]) -> _Node:
        node = self._root.children.setdefault(str(len(tokens)), _Node())
        wildcard = self.config.wildcard_marker
        for token in tokens[: self.config.tree_depth - 2]:
            key = wildcard if _HAS_DIGIT.search(token) else token
            if key in node.children:
                node = node.children[key]
            elif key != wildcard and len(node.children) >= self.config.max_children - 1:
                # last slot is reserved for the wildcard branch
                node = node.children.setdefault(wildcard, _Node())
            else:
                node = node.children.setdefault(key, _Node())
        return node

    def _similarity(self, template: Sequence[str], tokens: Sequence[str]) -> tuple[float, int]:
        wildcard = self.config.wildcard_marker
        same = params = 0
        for t, m in zip(template, tokens):
            if t == wildcard:
                params += 1
            elif t == m:
                same += 1
        return same / len(tokens), params

    def _best_match(self, leaf: _Node, tokens: list[str]) -> Optional[int]:
        best_id, best_key = None, (-1.0, -1)
        for tid in leaf.template_ids:
            key = self._similarity(self.store[tid].tokens, tokens)
            if key > best_key:
                best_id, best_key = tid, key
        if best_id is not None and best_key[0] >= self.config.similarity_threshold:
            return best_id
        return None

    def parse(self, content: str) -> tuple[int, list[str]]:
        """Assign ``content`` to a template, minting one if nothing is similar enough.

        Returns the template id and the raw message tokens found at the
        template's wildcard positions.
        """
        raw, tokens = self._tokenize(content)
        key = " ".join(raw)
        if key in self._seen:
            tid = self._seen[key]
            return tid, self.extract_params(tid, content)

        leaf = self._leaf(tokens)
        tid = self._best_match(leaf, tokens)
        if tid is None:
            tid = self.store.mint(tokens).id
            leaf.template_ids.append(tid)
        else:
            current = self.store[tid].tokens
            merged = [t if t == m else self.config.wildcard_marker for t, m in zip(current, tokens)]
            if tuple(merged) != current:
                self.store.replace(tid, merged)
        self._seen[key] = tid
        return tid, self.extract_params(tid, content)

    def extract_params(self, template_id: int, content: str) -> list[str]:
        """Message tokens aligned to the template's current wildcard positions."""
        raw = content.split()
        template = self.store[template_id].tokens
        return [m for t, m in zip(template, raw) if t == self.config.wildcard_marker]


def parse_message(parser: DrainParser, content: str) -> tuple[int, list[str]]:
    if not content or not content.strip():
        raise ValueError("cannot parse an empty message")
    return parser.parse(content)


def parse_passthrough(store: TemplateStore, content: str) -> int:
    """Map a one-token message (e.g. a system call name) to its own template."""
    parts = content.split()
    if len(parts) != 1:
        raise ValueError(f"passthrough expects exactly one token, got {content!r}")
    token = parts[0]
    for tid, template in store.templates.items():
        if template.tokens == (token,):
            return tid
    return store.mint([token]).id


class PassthroughParser:
    """Passthrough mapping with an O(1) token index."""

    def __init__(self, store: Optional[TemplateStore] = None):
        self.store = store if store is not None else TemplateStore()
        self._index = {t.tokens[0]: tid for tid, t in self.store.templates.items() if len(t.tokens) == 1}

    def parse(self, content: str) -> tuple[int, list[str]]:
        parts = content.split()
        if len(parts) != 1:
            raise ValueError(f"passthrough expects exactly one token, got {content!r}")
        token = parts[0]
        if token not in self._index:
            self._index[token] = self.store.mint([token]).id
        return self._index[token], []


def grouping_accuracy(predicted: Sequence[Hashable], reference: Sequence[Hashable]) -> float:
    """Fraction of message pairs on whose together/apart status both groupings agree."""
    if len(predicted) != len(reference):
        raise ValueError("predicted and reference groupings cover different messages")
    n = len(predicted)
    if n < 2:
        return 1.0

    def pairs(counts) -> int:
        return sum(c * (c - 1) // 2 for c in counts)

    together_pred = pairs(Counter(predicted).values())
    together_ref = pairs(Counter(reference).values())
    together_both = pairs(Counter(zip(predicted, reference)).values())
    total = n * (n - 1) // 2
    disagree = together_pred + together_ref - 2 * together_both
    return (total - disagree) / total
