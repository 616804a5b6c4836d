"""
Random forest of gini-split decision trees, written from scratch.

Everything random comes from a SplitMix64 generator. Tree ``i`` draws from
its own stream seeded by the ``i+1``-th output of ``SplitMix64(seed)``, so
trees can be grown in any order or in parallel and the model is still
bit-identical for a given ``(data, params, seed)``.

Draw order inside a tree: ``n`` bootstrap indices ``below(n)``, then, at
every node that is split-tested (preorder, left child first), a partial
Fisher-Yates shuffle of the feature indices taking ``max_features`` draws.
``below(m)`` is ``(next() * m) >> 64``.
"""
from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ContractError, ModelFormatError

FORMAT_VERSION = 1
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class ClassLabel(IntEnum):
    STACKING_FAULT = 0
    NO_STACKING_FAULT = 1
    MISORIENTED = 2
    AGGLOMERATION = 3
    NO_PARTICLE = 4

    @property
    def wire_name(self) -> str:
        return CLASS_NAMES[self.value]

    @classmethod
    def parse(cls, text: str | int) -> "ClassLabel":
        t = str(text).strip()
        if t.isdigit() and int(t) < N_CLASSES:
            return cls(int(t))
        if t in CLASS_NAMES:
            return cls(CLASS_NAMES.index(t))
        if t.upper() in cls.__members__:
            return cls[t.upper()]
        raise ContractError(f"unknown class label {text!r}")


CLASS_NAMES = ("StackingFault", "NoStackingFault", "Misoriented", "Agglomeration", "NoParticle")
N_CLASSES = len(CLASS_NAMES)


# ---------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------
def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def below(self, n: int) -> int:
        """Integer in ``[0, n)``."""
        return (self.next() * n) >> 64


def tree_stream(seed: int, index: int) -> SplitMix64:
    """Generator for tree *index*: seeded with output ``index+1`` of ``SplitMix64(seed)``."""
    return SplitMix64(_mix((seed + (index + 1) * GOLDEN) & MASK64))


# ---------------------------------------------------------------------
# Impurity
# ---------------------------------------------------------------------
def gini(counts: Sequence[float]) -> float:
    """``1 - sum(p_i^2)`` for per-class counts."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if c.size == 0 or total <= 0:
        raise ValueError("gini needs at least one sample")
    p = c / total
    return float(1.0 - np.dot(p, p))


# ---------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------
@dataclass
class ForestParams:
    n_trees: int = 500
    max_features: int = 2
    min_leaf: int = 1
    class_weight: list[float] | None = None

    def validate(self, n_features: int) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= self.max_features <= n_features:
            raise ValueError(f"max_features must be in [1, {n_features}]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.class_weight is not None:
            if len(self.class_weight) != N_CLASSES or min(self.class_weight) <= 0:
                raise ValueError(f"class_weight needs {N_CLASSES} positive entries")


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, N_CLASSES), leaf class counts (zeros for internal nodes)
    label: np.ndarray   # leaf prediction, -1 for internal nodes

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of *X* (``x <= threshold`` goes left)."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.label[self.apply(X)]


def _leaf_label(weighted_counts: np.ndarray) -> int:
    # argmax returns the first maximum, i.e. the lowest class code on ties
    return int(np.argmax(weighted_counts))


def _best_split(
    Xn: np.ndarray, yn: np.ndarray, weights: np.ndarray | None, feats: list[int], min_leaf: int
):
    """
    Best (score, feature, threshold) over the candidate features, or None.

    score is ``sum(L_i^2)/|L| + sum(R_i^2)/|R|``, which is maximal exactly
    where the weighted child gini is minimal. With unit weights it is formed
    as one division of two exact integers, so equal splits compare equal and
    ties fall to the lower feature index, then the lower threshold.
    """
    n = yn.size
    onehot = np.zeros((n, N_CLASSES), dtype=np.float64)
    onehot[np.arange(n), yn] = 1.0 if weights is None else weights[yn]
    total = onehot.sum(axis=0)
    n_left = np.arange(1, n)
    size_ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    best = None
    for f in feats:
        x = Xn[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        cl = np.cumsum(onehot[order], axis=0)[:-1]
        cr = total - cl
        wl = cl.sum(axis=1)
        wr = cr.sum(axis=1)
        sql = (cl * cl).sum(axis=1)
        sqr = (cr * cr).sum(axis=1)
        score = (sql * wr + sqr * wl) / (wl * wr)
        score[~valid] = -np.inf
        i = int(np.argmax(score))
        if best is None or score[i] > best[0]:
            lo, hi = float(xs[i]), float(xs[i + 1])
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                # midpoint rounded onto the upper value
                thr = lo
            best = (float(score[i]), f, thr)
    return best


def build_tree(
    X: np.ndarray, y: np.ndarray, params: ForestParams, rng: SplitMix64
) -> Tree:
    """Grow one unpruned tree on a bootstrap sample of ``(X, y)``."""
    n, n_features = X.shape
    sample = np.fromiter((rng.below(n) for _ in range(n)), dtype=np.int64, count=n)
    weights = None if params.class_weight is None else np.asarray(params.class_weight, dtype=np.float64)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []
    label: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.zeros(N_CLASSES, dtype=np.int64))
        label.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, sample)]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        raw = np.bincount(yn, minlength=N_CLASSES)
        weighted = raw.astype(np.float64) if weights is None else raw * weights
        split = None
        if np.count_nonzero(raw) > 1 and idx.size >= 2 * params.min_leaf:
            feats = list(range(n_features))
            for i in range(params.max_features):
                j = i + rng.below(n_features - i)
                feats[i], feats[j] = feats[j], feats[i]
            chosen = sorted(feats[: params.max_features])
            split = _best_split(X[idx], yn, weights, chosen, params.min_leaf)
            if split is not None:
                parent = float(np.dot(weighted, weighted) / weighted.sum())
                if not split[0] > parent:
                    split = None
        if split is None:
            counts[node] = raw
            label[node] = _leaf_label(weighted)
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = lnode, rnode
        # right pushed first so the left subtree is grown (and draws) first
        stack.append((rnode, idx[~go_left]))
        stack.append((lnode, idx[go_left]))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.vstack(counts),
        label=np.asarray(label, dtype=np.int64),
    )


# ---------------------------------------------------------------------
# Forest
# ---------------------------------------------------------------------
@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    seed: int
    pad_to: int | None = None
    feature_config: dict[str, Any] = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _as_matrix(features) -> np.ndarray:
    rows = [fv.as_array() if hasattr(fv, "as_array") else fv for fv in features]
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return X


def _grow(args) -> Tree:
    X, y, params, seed, index = args
    return build_tree(X, y, params, tree_stream(seed, index))


def train(
    features,
    labels,
    params: ForestParams | None = None,
    seed: int = 0,
    *,
    pad_to: int | None = None,
    feature_config: dict[str, Any] | None = None,
    jobs: int = 1,
) -> ForestModel:
    """
    Fit a forest on feature rows and class labels.

    *features* is an ``(n, d)`` array or a list of ``FeatureVector``;
    *labels* are ``ClassLabel`` values or their integer codes. *pad_to* and
    *feature_config* are carried into the model so prediction can refuse
    features computed differently.
    """
    params = params or ForestParams()
    X = _as_matrix(features)
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if X.shape[0] != y.size:
        raise ContractError(f"{X.shape[0]} feature rows but {y.size} labels")
    if y.size < 2:
        raise ContractError("training needs at least 2 samples")
    if not np.all(np.isfinite(X)):
        raise ContractError("training features must be finite")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise ContractError(f"labels must be class codes 0..{N_CLASSES - 1}")
    params.validate(X.shape[1])
    if np.unique(y).size < 2:
        warnings.warn("training data has a single class; every tree is one leaf", stacklevel=2)

    seed &= MASK64
    tasks = [(X, y, params, seed, i) for i in range(params.n_trees)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(_grow, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        trees = [_grow(t) for t in tasks]
    return ForestModel(trees, params, seed, pad_to, dict(feature_config or {}))


def predict_votes(model: ForestModel, features) -> np.ndarray:
    """Per-class vote counts, shape ``(n, N_CLASSES)``."""
    X = _as_matrix(features)
    if not np.all(np.isfinite(X)):
        raise ContractError("feature vectors must be finite")
    votes = np.zeros((X.shape[0], N_CLASSES), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.predict(X)), 1)
    return votes


def predict_batch(model: ForestModel, features) -> tuple[np.ndarray, np.ndarray]:
    votes = predict_votes(model, features)
    return np.argmax(votes, axis=1), votes


def predict(model: ForestModel, fv) -> tuple[ClassLabel, np.ndarray]:
    """Majority vote for one feature vector; ties go to the lowest class code."""
    labels, votes = predict_batch(model, [fv])
    return ClassLabel(int(labels[0])), votes[0]


# ---------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------
def _tree_to_obj(tree: Tree) -> dict:
    nodes: list[dict] = []
    for i in range(tree.n_nodes):
        if tree.feature[i] < 0:
            nodes.append({"leaf": [int(c) for c in tree.counts[i]]})
        else:
            nodes.append({"f": int(tree.feature[i]), "t": float(tree.threshold[i])})
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0:
            nodes[i]["l"] = nodes[tree.left[i]]
            nodes[i]["r"] = nodes[tree.right[i]]
    return nodes[0]


def _tree_from_obj(obj: Any, weights: np.ndarray | None) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[list[int]] = []
    label: list[int] = []
    # (node object, parent index, is_left)
    stack: list[tuple[Any, int, bool]] = [(obj, -1, False)]
    while stack:
        node, parent, is_left = stack.pop()
        i = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = i
        if not isinstance(node, dict):
            raise ModelFormatError("tree node must be an object")
        if "leaf" in node:
            c = node["leaf"]
            if not (isinstance(c, list) and len(c) == N_CLASSES and all(isinstance(v, int) and v >= 0 for v in c)):
                raise ModelFormatError(f"leaf needs {N_CLASSES} non-negative integer counts")
            w = np.asarray(c, dtype=np.float64) if weights is None else np.asarray(c) * weights
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append(list(c))
            label.append(_leaf_label(w))
            continue
        try:
            f, t, l_obj, r_obj = int(node["f"]), float(node["t"]), node["l"], node["r"]
        except (KeyError, TypeError, ValueError):
            raise ModelFormatError("internal node needs 'f', 't', 'l' and 'r'") from None
        if f < 0:
            raise ModelFormatError(f"split feature {f} out of range")
        feature.append(f)
        threshold.append(t)
        left.append(-1)
        right.append(-1)
        counts.append([0] * N_CLASSES)
        label.append(-1)
        stack.append((r_obj, i, False))
        stack.append((l_obj, i, True))
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.asarray(counts, dtype=np.int64).reshape(-1, N_CLASSES),
        label=np.asarray(label, dtype=np.int64),
    )


def model_to_json(model: ForestModel) -> str:
    params = asdict(model.params)
    params["seed"] = model.seed
    params["features"] = model.feature_config
    doc = {
        "format_version": FORMAT_VERSION,
        "n_trees": model.n_trees,
        "params": params,
        "classes": list(CLASS_NAMES),
        "pad_to": model.pad_to,
        "trees": [_tree_to_obj(t) for t in model.trees],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> ForestModel:
    if not text.strip():
        raise ModelFormatError("truncated model file (empty)")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"truncated or corrupt model file ({exc})") from exc
    except RecursionError:
        raise ModelFormatError("model trees nested too deeply") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"version mismatch: file has format_version {version!r}, expected {FORMAT_VERSION}")
    if doc.get("classes") != list(CLASS_NAMES):
        raise ModelFormatError(f"unknown class table {doc.get('classes')!r}")
    try:
        p = dict(doc["params"])
        seed = int(p.pop("seed"))
        feature_config = p.pop("features", {}) or {}
        params = ForestParams(**p)
        trees_obj = doc["trees"]
        n_trees = int(doc["n_trees"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model header incomplete ({exc})") from exc
    if not isinstance(trees_obj, list) or len(trees_obj) != n_trees:
        raise ModelFormatError(f"expected {n_trees} trees")
    weights = None if params.class_weight is None else np.asarray(params.class_weight, dtype=np.float64)
    trees = [_tree_from_obj(t, weights) for t in trees_obj]
    return ForestModel(trees, params, seed, doc.get("pad_to"), feature_config)


def save_model(model: ForestModel, path: str | os.PathLike) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | os.PathLike) -> ForestModel:
    return model_from_json(Path(path).read_text())
