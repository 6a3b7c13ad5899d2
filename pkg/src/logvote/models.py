"""Count-vector features and the three lightweight base classifiers.

All models are plain numpy. Labels are ints (0 normal, 1 anomalous) at this
layer; ties of any kind resolve to normal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import Label, LogSequence

FORMAT_TAG = "logvote-model"
FORMAT_VERSION = 1


# -- features ----------------------------------------------------------------

def to_count_vector(seq: Union[LogSequence, Sequence[int]], dim: int) -> np.ndarray:
    ids = seq.template_ids if isinstance(seq, LogSequence) else tuple(seq)
    counts = np.zeros(dim, dtype=np.int64)
    for tid in ids:
        if not 0 <= tid < dim:
            raise ValueError(f"template id {tid} outside vector dimension {dim}")
        counts[tid] += 1
    return counts


@dataclass(frozen=True)
class Vectorizer:
    """Fixed-vocabulary featurizer with one trailing bucket for unseen ids.

    Ids at or above ``vocab_size`` (templates minted after training) all
    land in the overflow bucket, so every vector still sums to the
    sequence length.
    """

    vocab_size: int

    @property
    def dim(self) -> int:
        return self.vocab_size + 1

    def transform_one(self, seq: Union[LogSequence, Sequence[int]]) -> np.ndarray:
        ids = seq.template_ids if isinstance(seq, LogSequence) else tuple(seq)
        counts = np.zeros(self.dim, dtype=np.int64)
        for tid in ids:
            if tid < 0:
                raise ValueError(f"negative template id {tid}")
            counts[min(tid, self.vocab_size)] += 1
        return counts

    def transform(self, seqs: Sequence[Union[LogSequence, Sequence[int]]]) -> np.ndarray:
        if not seqs:
            return np.zeros((0, self.dim), dtype=np.int64)
        return np.stack([self.transform_one(s) for s in seqs])


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    return X


def _as_labels(y) -> np.ndarray:
    y = np.asarray([int(v) for v in y], dtype=np.int64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return y


def _check_dim(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected a vector of dimension {dim}, got shape {x.shape}")
    return x


# -- k-nearest neighbours -----------------------------------------------------

@dataclass
class KnnModel:
    k: int
    points: np.ndarray
    labels: np.ndarray
    metric: str = "euclidean"

    kind = "knn"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def predict_one(self, x) -> Label:
        x = _check_dim(x, self.dim)
        # squared distances keep integer inputs exact
        d2 = np.sum((self.points - x) ** 2, axis=1)
        nearest = np.argsort(d2, kind="stable")[: self.k]
        anomalous = int(self.labels[nearest].sum())
        return Label.ANOMALOUS if 2 * anomalous > self.k else Label.NORMAL

    def predict(self, X) -> list[Label]:
        return [self.predict_one(x) for x in _as_matrix(X)]

    def to_dict(self) -> dict:
        return {"k": self.k, "metric": self.metric, "points": self.points.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(int(d["k"]), np.asarray(d["points"], dtype=float), np.asarray(d["labels"], dtype=np.int64), d["metric"])


def train_knn(X, y, k: int = 2) -> KnnModel:
    X, y = _as_matrix(X), _as_labels(y)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(X):
        raise ValueError(f"k={k} exceeds the {len(X)} training points")
    return KnnModel(k, X.copy(), y.copy())


def predict_knn(model: KnnModel, x) -> Label:
    return model.predict_one(x)


# -- decision tree ------------------------------------------------------------

@dataclass
class TreeNode:
    label: int
    counts: tuple[int, int]
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        d = {"label": self.label, "counts": list(self.counts)}
        if not self.is_leaf:
            d.update(feature=self.feature, threshold=self.threshold, left=self.left.to_dict(), right=self.right.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        node = cls(int(d["label"]), tuple(d["counts"]))
        if "feature" in d:
            node.feature, node.threshold = int(d["feature"]), float(d["threshold"])
            node.left, node.right = cls.from_dict(d["left"]), cls.from_dict(d["right"])
        return node

    def internal_nodes(self):
        if self.is_leaf:
            return
        yield self
        yield from self.left.internal_nodes()
        yield from self.right.internal_nodes()


def _majority(counts: Sequence[int]) -> int:
    return 1 if counts[1] > counts[0] else 0


def gini(counts: Sequence[int]) -> float:
    n = sum(counts)
    if n == 0:
        return 0.0
    return 1.0 - sum((c / n) ** 2 for c in counts)


def _purity_score(counts: Sequence[int]) -> tuple[int, int]:
    """(sum of squared class counts, size): weighted Gini is 1 - sum(score)/N."""
    return counts[0] ** 2 + counts[1] ** 2, counts[0] + counts[1]


def split_improves(parent: Sequence[int], left: Sequence[int], right: Sequence[int]) -> bool:
    """Exact integer test that the weighted child Gini is strictly below the parent's."""
    sp, n = _purity_score(parent)
    sl, nl = _purity_score(left)
    sr, nr = _purity_score(right)
    if nl == 0 or nr == 0:
        return False
    # sl/nl + sr/nr > sp/n
    return (sl * nr + sr * nl) * n > sp * nl * nr


def _best_split(X: np.ndarray, y: np.ndarray) -> Optional[tuple[int, float, np.ndarray]]:
    n = len(y)
    parent = (int(n - y.sum()), int(y.sum()))
    best = None
    best_score = -1.0
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cut = np.nonzero(xs[1:] != xs[:-1])[0]
        if cut.size == 0:
            continue
        pos_left = np.cumsum(ys)[cut]
        n_left = cut + 1
        neg_left = n_left - pos_left
        pos_right = parent[1] - pos_left
        n_right = n - n_left
        neg_right = n_right - pos_right
        score = (pos_left**2 + neg_left**2) / n_left + (pos_right**2 + neg_right**2) / n_right
        i = int(np.argmax(score))
        if score[i] > best_score + 1e-12:
            left = (int(neg_left[i]), int(pos_left[i]))
            right = (int(neg_right[i]), int(pos_right[i]))
            if split_improves(parent, left, right):
                best_score = float(score[i])
                threshold = (xs[cut[i]] + xs[cut[i] + 1]) / 2.0
                best = (f, float(threshold), X[:, f] <= threshold)
    return best


@dataclass
class TreeModel:
    root: TreeNode
    n_features: int
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    criterion: str = "gini"

    kind = "dt"

    @property
    def dim(self) -> int:
        return self.n_features

    def predict_one(self, x) -> Label:
        x = _check_dim(x, self.n_features)
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return Label(node.label)

    def predict(self, X) -> list[Label]:
        return [self.predict_one(x) for x in _as_matrix(X)]

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "criterion": self.criterion,
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(TreeNode.from_dict(d["root"]), int(d["n_features"]), d["max_depth"], int(d["min_samples_split"]), d["criterion"])


def train_dt(X, y, max_depth: Optional[int] = None, min_samples_split: int = 2) -> TreeModel:
    """Greedy CART growth on weighted Gini with midpoint thresholds."""
    X, y = _as_matrix(X), _as_labels(y)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        ys = y[idx]
        counts = (int(len(ys) - ys.sum()), int(ys.sum()))
        node = TreeNode(_majority(counts), counts)
        if counts[0] == 0 or counts[1] == 0:
            return node
        if len(idx) < min_samples_split or (max_depth is not None and depth >= max_depth):
            return node
        split = _best_split(X[idx], ys)
        if split is None:
            return node
        node.feature, node.threshold, mask = split
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    root = grow(np.arange(len(y)), 0)
    return TreeModel(root, X.shape[1], max_depth, min_samples_split)


def predict_dt(model: TreeModel, x) -> Label:
    return model.predict_one(x)


# -- single-hidden-layer feedforward network ---------------------------------

@dataclass
class SlfnModel:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray
    W2: np.ndarray  # (2, hidden)
    b2: np.ndarray
    activation: str = "relu"
    loss_history: list[float] = field(default_factory=list)

    kind = "slfn"

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def logits(self, X) -> np.ndarray:
        return forward(self.params(), np.atleast_2d(np.asarray(X, dtype=float)))[0]

    def predict_one(self, x) -> Label:
        x = _check_dim(x, self.dim)
        z = self.logits(x)[0]
        return Label.ANOMALOUS if z[1] > z[0] else Label.NORMAL

    def predict(self, X) -> list[Label]:
        X = _as_matrix(X)
        z = self.logits(X)
        return [Label.ANOMALOUS if a > b else Label.NORMAL for b, a in z]

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.params().items()} | {"activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "SlfnModel":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("W1", "b1", "W2", "b2")), activation=d["activation"])


def forward(p: dict[str, np.ndarray], X: np.ndarray) -> tuple[np.ndarray, tuple]:
    pre = X @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0)
    z = hidden @ p["W2"].T + p["b2"]
    return z, (pre, hidden)


def loss_and_grads(p: dict[str, np.ndarray], X: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its analytic gradient."""
    n = len(y)
    z, (pre, hidden) = forward(p, X)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), y]))

    probs = np.exp(z - logsum[:, None])
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = {"W2": dz.T @ hidden, "b2": dz.sum(axis=0)}
    dh = (dz @ p["W2"]) * (pre > 0)
    grads["W1"] = dh.T @ X
    grads["b1"] = dh.sum(axis=0)
    return loss, grads


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def init_slfn(n_features: int, hidden: int = 100, seed: int = 0) -> SlfnModel:
    rng = np.random.default_rng(seed)
    return SlfnModel(
        W1=glorot_init(rng, n_features, hidden),
        b1=np.zeros(hidden),
        W2=glorot_init(rng, hidden, 2),
        b2=np.zeros(2),
    )


class TrainingError(RuntimeError):
    pass


def train_slfn(
    X,
    y,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    hidden: int = 100,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> SlfnModel:
    """Full-batch Adam on mean cross-entropy.

    The returned weights are the lowest-loss iterate seen, so the final
    training loss never exceeds the initial one.
    """
    X, y = _as_matrix(X), _as_labels(y)
    if len(y) == 0:
        raise ValueError("cannot fit a network on empty data")
    model = init_slfn(X.shape[1], hidden, seed)
    p = {k: v.copy() for k, v in model.params().items()}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    b1, b2 = betas

    best_loss, best = np.inf, None
    history = []
    for t in range(1, epochs + 2):
        loss, grads = loss_and_grads(p, X, y)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {t - 1}")
        history.append(loss)
        if loss < best_loss:
            best_loss, best = loss, {k: a.copy() for k, a in p.items()}
        if t == epochs + 1:
            break
        for k in p:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            m_hat = m[k] / (1 - b1**t)
            v_hat = v[k] / (1 - b2**t)
            p[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return SlfnModel(best["W1"], best["b1"], best["W2"], best["b2"], loss_history=history)


def predict_slfn(model: SlfnModel, x) -> Label:
    return model.predict_one(x)


# -- persistence ---------------------------------------------------------------

MODEL_KINDS = {"knn": KnnModel, "dt": TreeModel, "slfn": SlfnModel}


def save_model(model, path: Union[str, Path]) -> None:
    payload = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "kind": model.kind, "params": model.to_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: Union[str, Path]):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"{path} is not a model file")
    if payload.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {payload.get('version')}")
    return MODEL_KINDS[payload["kind"]].from_dict(payload["params"])
