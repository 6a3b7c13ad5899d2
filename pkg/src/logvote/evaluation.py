"""Confusion metrics, the Mann-Whitney U test and timing aggregates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import Label

ALPHA = 0.05
EXACT_MAX_TOTAL = 16


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(preds: Sequence[Label], truth: Sequence[Label]) -> Confusion:
    if len(preds) != len(truth):
        raise ValueError(f"{len(preds)} predictions for {len(truth)} ground-truth labels")
    tp = fp = fn = tn = 0
    for p, t in zip(preds, truth):
        p, t = int(p), int(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, fn, tn)


def precision_recall_f1(c: Confusion) -> tuple[float, float, float]:
    """Anomalous is the positive class; any zero denominator yields 0."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


# -- Mann-Whitney U ------------------------------------------------------------

@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA


def midranks(values: Sequence[float]) -> tuple[list[float], list[int]]:
    """1-based ranks with ties sharing their mean rank, plus the tie-group sizes."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    ties = []
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        ties.append(j - i + 1)
        i = j + 1
    return ranks, ties


def u_null_counts(n1: int, n2: int) -> list[int]:
    """Number of rank arrangements giving each U in 0..n1*n2 under the null.

    Uses the standard recursion on the largest observation:
    N(u; n1, n2) = N(u - n2; n1 - 1, n2) + N(u; n1, n2 - 1).
    """
    # table[j] holds the counts for (i, j) while sweeping i
    prev = [[1] for _ in range(n2 + 1)]  # i = 0: U is always 0
    for i in range(1, n1 + 1):
        cur = [[1]]  # j = 0
        for j in range(1, n2 + 1):
            size = i * j + 1
            counts = [0] * size
            a = prev[j]  # (i-1, j): largest is from sample 1, contributes j
            for u, c in enumerate(a):
                counts[u + j] += c
            b = cur[j - 1]  # (i, j-1): largest is from sample 2
            for u, c in enumerate(b):
                counts[u] += c
            cur.append(counts)
        prev = cur
    return prev[n2]


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], method: str = "auto") -> UTestResult:
    """Two-sided Mann-Whitney U test.

    ``method="auto"`` uses the exact null distribution when the pooled size
    is at most 16 and there are no ties, and otherwise the normal
    approximation with tie and continuity corrections. ``"exact"`` and
    ``"normal"`` force one branch. The reported statistic is U for ``a``.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples need at least one observation")
    ranks, ties = midranks(list(a) + list(b))
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2
    tied = any(t > 1 for t in ties)
    if method == "exact" and tied:
        raise ValueError("the exact null distribution assumes no ties")

    if method == "exact" or (method == "auto" and n1 + n2 <= EXACT_MAX_TOTAL and not tied):
        counts = u_null_counts(n1, n2)
        total = sum(counts)
        u = int(round(u1))
        lower = sum(counts[: u + 1]) / total
        upper = sum(counts[u:]) / total
        return UTestResult(u1, min(1.0, 2 * min(lower, upper)), "exact")

    n = n1 + n2
    mean = n1 * n2 / 2
    tie_term = sum(t**3 - t for t in ties) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12 * ((n + 1) - tie_term)
    if var <= 0:
        return UTestResult(u1, 1.0, "normal")
    z = max(abs(u1 - mean) - 0.5, 0.0) / math.sqrt(var)
    return UTestResult(u1, min(1.0, 2 * _normal_sf(z)), "normal")


# -- timing --------------------------------------------------------------------

@dataclass(frozen=True)
class TimingReport:
    count: int
    total: float
    mean: float
    max: float


def timing_report(samples: Sequence[float]) -> TimingReport:
    if not samples:
        return TimingReport(0, 0.0, 0.0, 0.0)
    total = float(sum(samples))
    return TimingReport(len(samples), total, total / len(samples), float(max(samples)))
