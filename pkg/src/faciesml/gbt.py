"""Multiclass gradient-boosted regression trees with second-order split search.

Each boosting round fits one regression tree per class to the softmax
cross-entropy gradients and Hessians of the current raw scores. Trees are
grown depth-first with exact greedy split search over presorted columns. The
scoring minimises the regularised objective

    sum_i loss(y_i, yhat_i) + sum_trees (gamma * n_leaves + 0.5 * lambda * ||w||^2)

whose optimal leaf weight is ``-G / (H + lambda)`` and whose split gain is

    0.5 * (G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)) - gamma

with ``G``/``H`` the gradient/Hessian sums of a node.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Sequence, Union

import numpy as np
from numba import njit

from faciesml.errors import (
    ConfigError,
    DataError,
    IncompatibleModelError,
    ModelFormatError,
)
from faciesml.features import FeatureMatrix

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GBTConfig:
    """Booster hyperparameters. Defaults are the contest-winning settings."""

    learning_rate: float = 0.12
    max_depth: int = 3
    min_child_weight: float = 10.0
    n_estimators: int = 150
    seed: int = 10
    colsample_bytree: float = 0.9
    reg_lambda: float = 1.0
    gamma: float = 0.0
    n_classes: int = 9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not (isinstance(self.max_depth, int) and self.max_depth >= 0):
            raise ConfigError(f"max_depth must be a non-negative integer, got {self.max_depth!r}")
        if not self.min_child_weight >= 0:
            raise ConfigError(f"min_child_weight must be non-negative, got {self.min_child_weight!r}")
        if not (isinstance(self.n_estimators, int) and self.n_estimators >= 1):
            raise ConfigError(f"n_estimators must be a positive integer, got {self.n_estimators!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not 0 < self.colsample_bytree <= 1:
            raise ConfigError(f"colsample_bytree must be in (0, 1], got {self.colsample_bytree!r}")
        if not self.reg_lambda >= 0:
            raise ConfigError(f"reg_lambda must be non-negative, got {self.reg_lambda!r}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma!r}")
        if not (isinstance(self.n_classes, int) and self.n_classes >= 1):
            raise ConfigError(f"n_classes must be a positive integer, got {self.n_classes!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "GBTConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model field {unknown[0]!r}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Trees

@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    """Rows with ``x[feature_index] < threshold`` go left, the rest go right."""

    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def iter_leaves(node: TreeNode) -> Iterator[Leaf]:
    if isinstance(node, Leaf):
        yield node
    else:
        yield from iter_leaves(node.left)
        yield from iter_leaves(node.right)


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf weight reached by every row of ``X``."""
    out = np.empty(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if isinstance(nd, Leaf):
            out[idx] = nd.weight
            continue
        go_left = X[idx, nd.feature_index] < nd.threshold
        stack.append((nd.left, idx[go_left]))
        stack.append((nd.right, idx[~go_left]))
    return out


# --------------------------------------------------------------------------
# Loss

def softmax(raw_scores: np.ndarray) -> np.ndarray:
    z = raw_scores - raw_scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n_rows,):
        raise DataError("labels must have one entry per row")
    if n_rows and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"zero-based labels must lie in 0..{n_classes - 1}")
    return labels


def softmax_grad_hess(labels, raw_scores) -> tuple[np.ndarray, np.ndarray]:
    """Gradient ``p - onehot`` and diagonal Hessian ``p (1 - p)`` of softmax cross-entropy.

    ``labels`` are zero-based class indices; ``raw_scores`` is ``(n, K)``.
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.ndim != 2:
        raise DataError("raw_scores must be a 2-D (n, K) matrix")
    if not np.all(np.isfinite(raw)):
        raise DataError("raw scores contain non-finite values")
    labels = _check_labels(labels, raw.shape[0], raw.shape[1])
    p = softmax(raw)
    grad = p.copy()
    grad[np.arange(raw.shape[0]), labels] -= 1.0
    hess = p * (1.0 - p)
    return grad, hess


def softmax_cross_entropy(labels, raw_scores, reduction: str = "sum") -> float:
    raw = np.asarray(raw_scores, dtype=np.float64)
    labels = _check_labels(labels, raw.shape[0], raw.shape[1])
    m = raw.max(axis=1)
    lse = m + np.log(np.exp(raw - m[:, None]).sum(axis=1))
    per_row = lse - raw[np.arange(raw.shape[0]), labels]
    if reduction == "sum":
        return float(per_row.sum())
    if reduction == "mean":
        return float(per_row.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


# --------------------------------------------------------------------------
# Split search

@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    threshold: float
    gain: float
    grad_left: float
    hess_left: float
    grad_right: float
    hess_right: float


@njit(cache=True, error_model="numpy")
def _level_splits(order, xsorted, node_of_row, g, h, G, H, lam, gamma, mcw):
    """Best split of every active node in one pass per feature.

    ``order[f]`` lists all rows in ascending order of feature ``f`` and
    ``xsorted[f]`` the matching values. Rows with ``node_of_row < 0`` are
    skipped. ``G``/``H`` are the per-node gradient/Hessian totals. Features are
    visited in ascending order and a candidate replaces the incumbent only on
    a strictly larger gain, so ties go to the lower feature and then the lower
    threshold.
    """
    n_feat, n = order.shape
    n_nodes = G.shape[0]
    best_gain = np.full(n_nodes, -np.inf)
    best_f = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    best_gl = np.zeros(n_nodes)
    best_hl = np.zeros(n_nodes)
    gl = np.zeros(n_nodes)
    hl = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    parent = G * G / (H + lam)
    for f in range(n_feat):
        gl[:] = 0.0
        hl[:] = 0.0
        seen[:] = False
        for t in range(n):
            r = order[f, t]
            q = node_of_row[r]
            if q < 0:
                continue
            x = xsorted[f, t]
            if seen[q] and x > last[q]:
                glq = gl[q]
                hlq = hl[q]
                grq = G[q] - glq
                hrq = H[q] - hlq
                if hlq >= mcw and hrq >= mcw:
                    gain = 0.5 * (glq * glq / (hlq + lam) + grq * grq / (hrq + lam) - parent[q]) - gamma
                    if gain > 0 and gain > best_gain[q]:
                        thr = 0.5 * (last[q] + x)
                        if not last[q] < thr:
                            thr = x
                        best_gain[q] = gain
                        best_f[q] = f
                        best_thr[q] = thr
                        best_gl[q] = glq
                        best_hl[q] = hlq
            gl[q] += g[r]
            hl[q] += h[r]
            last[q] = x
            seen[q] = True
    return best_f, best_thr, best_gain, best_gl, best_hl


def _presort(X: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = np.ascontiguousarray(X[:, cols].T)
    order = np.argsort(sub, axis=1, kind="stable")
    return order, np.take_along_axis(sub, order, axis=1)


def _node_sums(node_of_row: np.ndarray, g: np.ndarray, h: np.ndarray, n_nodes: int):
    live = node_of_row >= 0
    G = np.bincount(node_of_row[live], weights=g[live], minlength=n_nodes)
    H = np.bincount(node_of_row[live], weights=h[live], minlength=n_nodes)
    return G, H


def find_best_split(
    X: np.ndarray,
    rows: Sequence[int],
    feature_columns: Sequence[int],
    g: np.ndarray,
    h: np.ndarray,
    config: GBTConfig,
) -> SplitDecision | None:
    """Exact greedy split of ``rows`` over ``feature_columns``.

    Candidate thresholds are midpoints between consecutive distinct values. A
    split is admissible when both children carry Hessian mass of at least
    ``min_child_weight`` and its gain is strictly positive. Equal gains go to
    the lower feature index, then the lower threshold. Returns None when no
    admissible split exists.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.sort(np.asarray(feature_columns, dtype=np.int64))
    if rows.size == 0:
        raise DataError("find_best_split needs at least one row")
    if cols.size == 0:
        return None
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    node_of_row = np.full(X.shape[0], -1, dtype=np.int64)
    node_of_row[rows] = 0
    order, xsorted = _presort(X, cols)
    G, H = _node_sums(node_of_row, g, h, 1)
    bf, bt, bg, bgl, bhl = _level_splits(
        order, xsorted, node_of_row, g, h, G, H,
        float(config.reg_lambda), float(config.gamma), float(config.min_child_weight),
    )
    if bf[0] < 0:
        return None
    return SplitDecision(
        feature_index=int(cols[bf[0]]),
        threshold=float(bt[0]),
        gain=float(bg[0]),
        grad_left=float(bgl[0]),
        hess_left=float(bhl[0]),
        grad_right=float(G[0] - bgl[0]),
        hess_right=float(H[0] - bhl[0]),
    )


def leaf_weight(grad_sum: float, hess_sum: float, reg_lambda: float) -> float:
    denom = hess_sum + reg_lambda
    return 0.0 if denom == 0 else -grad_sum / denom


def _grow(
    X: np.ndarray,
    order: np.ndarray,
    xsorted: np.ndarray,
    cols: np.ndarray,
    node_of_row: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    config: GBTConfig,
) -> tuple[TreeNode, np.ndarray]:
    """Grow a tree level by level; returns the tree and each row's leaf weight.

    ``node_of_row`` is 0 for rows in the tree and -1 otherwise; it is
    consumed. Rows outside the tree get weight 0 in the returned vector.
    """
    lam = float(config.reg_lambda)
    # per node: [feature_index or -1, threshold, left, right, weight]
    feature: list[int] = [-1]
    threshold: list[float] = [0.0]
    children: list[tuple[int, int]] = [(-1, -1)]
    weight: list[float] = [0.0]
    row_weight = np.zeros(X.shape[0])

    level = [0]
    depth = 0
    while level:
        n_nodes = len(feature)
        G, H = _node_sums(node_of_row, g, h, n_nodes)
        if depth < config.max_depth:
            bf, bt, _, _, _ = _level_splits(
                order, xsorted, node_of_row, g, h, G, H,
                lam, float(config.gamma), float(config.min_child_weight),
            )
        else:
            bf = np.full(n_nodes, -1, dtype=np.int64)
        next_level = []
        left_of = np.full(n_nodes, -1, dtype=np.int64)
        right_of = np.full(n_nodes, -1, dtype=np.int64)
        split_col = np.zeros(n_nodes, dtype=np.int64)
        split_thr = np.zeros(n_nodes)
        for q in level:
            if bf[q] < 0:
                weight[q] = leaf_weight(float(G[q]), float(H[q]), lam)
                continue
            feature[q] = int(cols[bf[q]])
            threshold[q] = float(bt[q])
            lo, hi = len(feature), len(feature) + 1
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            children += [(-1, -1), (-1, -1)]
            weight += [0.0, 0.0]
            children[q] = (lo, hi)
            left_of[q], right_of[q] = lo, hi
            split_col[q] = feature[q]
            split_thr[q] = threshold[q]
            next_level += [lo, hi]
        live = np.flatnonzero(node_of_row >= 0)
        q_live = node_of_row[live]
        is_leaf = left_of[q_live] < 0
        done = live[is_leaf]
        row_weight[done] = np.asarray(weight)[node_of_row[done]]
        node_of_row[done] = -1
        moving = live[~is_leaf]
        qm = q_live[~is_leaf]
        go_left = X[moving, split_col[qm]] < split_thr[qm]
        node_of_row[moving] = np.where(go_left, left_of[qm], right_of[qm])
        level = next_level
        depth += 1

    def _build(q: int) -> TreeNode:
        if feature[q] < 0:
            return Leaf(weight[q])
        lo, hi = children[q]
        return Split(feature[q], threshold[q], _build(lo), _build(hi))

    return _build(0), row_weight


def build_tree(
    X: np.ndarray,
    rows: Sequence[int],
    g: np.ndarray,
    h: np.ndarray,
    config: GBTConfig,
    column_subset: Sequence[int],
) -> TreeNode:
    """Grow one regression tree on ``rows`` restricted to ``column_subset``.

    Leaves take the weight ``-G / (H + reg_lambda)``; growth stops at
    ``max_depth`` or where no admissible split exists.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.sort(np.asarray(column_subset, dtype=np.int64))
    if rows.size == 0 or cols.size == 0:
        raise DataError("build_tree needs at least one row and one column")
    node_of_row = np.full(X.shape[0], -1, dtype=np.int64)
    node_of_row[rows] = 0
    order, xsorted = _presort(X, cols)
    tree, _ = _grow(X, order, xsorted, cols, node_of_row, np.asarray(g, float), np.asarray(h, float), config)
    return tree


def column_subset(seed: int, round_index: int, class_index: int, n_columns: int, fraction: float) -> np.ndarray:
    """Sorted column indices for one tree, drawn without replacement.

    The draw depends only on ``(seed, round_index, class_index)``.
    """
    k = max(1, math.ceil(round(fraction * n_columns, 9)))
    if k >= n_columns:
        return np.arange(n_columns)
    rng = np.random.default_rng([seed % (1 << 64), round_index, class_index])
    return np.sort(rng.choice(n_columns, size=k, replace=False))


# --------------------------------------------------------------------------
# Model

@dataclass(frozen=True)
class GBTModel:
    trees: tuple[tuple[TreeNode, ...], ...]
    config: GBTConfig
    feature_names: tuple[str, ...]
    base_score: float = 0.0

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    @property
    def classes(self) -> np.ndarray:
        """Class codes in score-column order (1..K)."""
        return np.arange(1, self.n_classes + 1)


def _unpack(features, labels=None) -> tuple[np.ndarray, np.ndarray | None, list[str]]:
    if isinstance(features, FeatureMatrix):
        y = features.labels if labels is None else labels
        return features.values, None if y is None else np.asarray(y, dtype=np.int64), features.feature_names
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    return X, None if labels is None else np.asarray(labels, dtype=np.int64), [f"f{i}" for i in range(X.shape[1])]


def fit(features, config: GBTConfig | None = None, labels=None) -> GBTModel:
    """Train a booster on ``features``.

    ``features`` is a :class:`FeatureMatrix` (labels taken from it) or a plain
    matrix together with ``labels``. Labels are class codes ``1..n_classes``.
    Training is deterministic for a fixed input and config.
    """
    config = config or GBTConfig()
    X, y, names = _unpack(features, labels)
    if y is None:
        raise DataError("fit needs labels")
    n, n_cols = X.shape
    if n == 0 or n_cols == 0:
        raise DataError("cannot fit on an empty feature matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("feature matrix contains non-finite values")
    if y.shape != (n,):
        raise DataError("labels must have one entry per row")
    if y.min() < 1:
        raise DataError(f"class codes start at 1, got {int(y.min())}")
    if y.max() > config.n_classes:
        raise ConfigError(f"n_classes={config.n_classes} is smaller than the largest label {int(y.max())}")
    yi = y - 1
    K = config.n_classes
    lr = config.learning_rate

    all_cols = np.arange(n_cols)
    order, xsorted = _presort(X, all_cols)
    base_score = 0.0
    raw = np.full((n, K), base_score)
    rounds = []
    for r in range(config.n_estimators):
        g, h = softmax_grad_hess(yi, raw)
        round_trees = []
        delta = np.empty_like(raw)
        for k in range(K):
            cols = column_subset(config.seed, r, k, n_cols, config.colsample_bytree)
            tree, row_weight = _grow(
                X, order[cols], xsorted[cols], cols, np.zeros(n, dtype=np.int64),
                np.ascontiguousarray(g[:, k]), np.ascontiguousarray(h[:, k]), config,
            )
            round_trees.append(tree)
            delta[:, k] = lr * row_weight
        raw += delta
        rounds.append(tuple(round_trees))
    return GBTModel(tuple(rounds), config, tuple(names), base_score)


def _aligned_matrix(model: GBTModel, features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        names = list(features.feature_names)
        expected = list(model.feature_names)
        if names != expected:
            missing = [c for c in expected if c not in names]
            extra = [c for c in names if c not in expected]
            if missing or extra:
                raise IncompatibleModelError(
                    f"feature mismatch: missing columns {missing}, unexpected columns {extra}"
                )
            return features.values[:, [names.index(c) for c in expected]]
        return features.values
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise IncompatibleModelError(
            f"expected {len(model.feature_names)} feature columns, got {X.shape[1] if X.ndim == 2 else X.shape}"
        )
    return X


def staged_raw_scores(model: GBTModel, features) -> Iterator[np.ndarray]:
    """Raw scores after each completed round (a fresh array each time)."""
    X = _aligned_matrix(model, features)
    raw = np.full((X.shape[0], model.n_classes), model.base_score)
    lr = model.config.learning_rate
    for round_trees in model.trees:
        for k, tree in enumerate(round_trees):
            raw[:, k] += lr * tree_predict(tree, X)
        yield raw.copy()


def predict_raw(model: GBTModel, features) -> np.ndarray:
    X = _aligned_matrix(model, features)
    raw = np.full((X.shape[0], model.n_classes), model.base_score)
    lr = model.config.learning_rate
    for round_trees in model.trees:
        for k, tree in enumerate(round_trees):
            raw[:, k] += lr * tree_predict(tree, X)
    return raw


def predict_proba(model: GBTModel, features) -> np.ndarray:
    return softmax(predict_raw(model, features))


def predict(model: GBTModel, features) -> np.ndarray:
    """Most probable class code per row; ties go to the lower code."""
    return np.argmax(predict_raw(model, features), axis=1) + 1


# --------------------------------------------------------------------------
# Serialization

def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"weight": node.weight}
    return {
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def serialize(model: GBTModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "base_score": model.base_score,
        "trees": [[_node_to_dict(t) for t in round_trees] for round_trees in model.trees],
    }


def dumps_model(model: GBTModel) -> str:
    return json.dumps(serialize(model), separators=(",", ":")) + "\n"


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFormatError(f"expected a number, got {type(value).__name__}", path)
    value = float(value)
    if not math.isfinite(value):
        raise ModelFormatError("non-finite number", path)
    return value


def _node_from_dict(data, n_features: int, path: str) -> TreeNode:
    if not isinstance(data, dict):
        raise ModelFormatError("tree node must be an object", path)
    if "weight" in data:
        if set(data) != {"weight"}:
            raise ModelFormatError("leaf node has extra fields", path)
        return Leaf(_number(data["weight"], path + ".weight"))
    required = {"feature_index", "threshold", "left", "right"}
    if set(data) != required:
        raise ModelFormatError(f"split node needs exactly the fields {sorted(required)}", path)
    fi = data["feature_index"]
    if isinstance(fi, bool) or not isinstance(fi, int) or not 0 <= fi < n_features:
        raise ModelFormatError(f"feature_index {fi!r} is out of range", path + ".feature_index")
    return Split(
        fi,
        _number(data["threshold"], path + ".threshold"),
        _node_from_dict(data["left"], n_features, path + ".left"),
        _node_from_dict(data["right"], n_features, path + ".right"),
    )


def deserialize(document) -> GBTModel:
    """Rebuild a model from :func:`serialize` output (a dict or JSON text)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ModelFormatError("model document must be a JSON object")
    for key in ("format_version", "config", "feature_names", "base_score", "trees"):
        if key not in document:
            raise ModelFormatError(f"missing field {key!r}")
    if document["format_version"] != FORMAT_VERSION:
        raise IncompatibleModelError(
            f"model format_version {document['format_version']!r} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        config = GBTConfig.from_dict(document["config"])
    except (ConfigError, TypeError) as exc:
        raise ModelFormatError(f"bad config: {exc}", "$.config") from None
    names = document["feature_names"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ModelFormatError("feature_names must be a list of strings", "$.feature_names")
    trees = document["trees"]
    if not isinstance(trees, list):
        raise ModelFormatError("trees must be a list", "$.trees")
    if len(trees) > config.n_estimators:
        raise ModelFormatError(f"{len(trees)} rounds exceed n_estimators={config.n_estimators}", "$.trees")
    rounds = []
    try:
        for r, round_trees in enumerate(trees):
            if not isinstance(round_trees, list) or len(round_trees) != config.n_classes:
                raise ModelFormatError(f"each round needs {config.n_classes} trees", f"$.trees[{r}]")
            rounds.append(
                tuple(_node_from_dict(t, len(names), f"$.trees[{r}][{k}]") for k, t in enumerate(round_trees))
            )
    except RecursionError:
        raise ModelFormatError("tree nesting too deep", "$.trees") from None
    return GBTModel(tuple(rounds), config, tuple(names), _number(document["base_score"], "$.base_score"))
