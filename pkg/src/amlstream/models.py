"""From-scratch classifiers: logistic regression, decision tree, random forest.

All three train on dense one-hot matrices (float64). No ML library calls;
NumPy supplies array math only.

Determinism:
- logistic regression starts at zero, so it is seed-free;
- tree split ties break toward the lowest column index, then the lowest
  threshold;
- each forest tree derives its own generator from seed + tree_index, so
  serial and (hypothetical) parallel builds produce identical forests.

Prediction contract: predict_proba computes per-row values with
row-local arithmetic (no batch-shape-dependent reductions), so scoring
one record equals scoring it inside any batch, bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, SchemaMismatchError

MODEL_KINDS = ("logistic_regression", "decision_tree", "random_forest")

LOGISTIC_DEFAULTS = {
    "learning_rate": 0.1,
    "tolerance": 1e-6,
    "max_iters": 5_000,
    "l2": 0.0,
}
TREE_DEFAULTS = {"max_depth": 12, "min_leaf": 5}
FOREST_DEFAULTS = {
    "n_trees": 50,
    "max_depth": 12,
    "min_leaf": 5,
    "features_per_split": None,  # None -> ceil(sqrt(width))
    "bootstrap": True,
}

SERIALIZATION_FORMAT = 1


@dataclass
class TreeNode:
    prob: float
    count: int
    column: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.column is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass
class TrainedModel:
    kind: str
    width: int
    schema_hash: str
    train_seed: int
    hyperparameters: dict
    weights: Optional[np.ndarray] = None  # logistic
    bias: float = 0.0
    root: Optional[TreeNode] = None  # tree
    trees: Optional[list[TreeNode]] = None  # forest
    loss_history: list[float] = field(default_factory=list, repr=False)
    n_iters: int = 0


@dataclass(frozen=True)
class EvalMetrics:
    tn: int
    fp: int
    fn: int
    tp: int
    accuracy: float
    f1: float
    threshold: float


def _merge_hyper(defaults: dict, overrides: dict | None) -> dict:
    merged = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown hyperparameter {key!r}")
        merged[key] = value
    return merged


def _check_training_input(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training set must be a non-empty 2-D matrix")
    if y.shape[0] != X.shape[0]:
        raise DataError("labels must align with the feature matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("training matrix contains non-finite values")
    return X, y.astype(np.float64)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def logistic_loss(X, y, w, b, l2=0.0) -> float:
    p = sigmoid(np.asarray(X) @ np.asarray(w) + b)
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    data = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(data + 0.5 * l2 * float(np.dot(w, w)))


def logistic_gradient(X, y, w, b, l2=0.0) -> tuple[np.ndarray, float]:
    """Gradient of the mean log-loss (plus L2 on weights, not bias)."""
    X = np.asarray(X)
    residual = sigmoid(X @ np.asarray(w) + b) - y
    g_w = X.T @ residual / X.shape[0] + l2 * np.asarray(w)
    g_b = float(np.mean(residual))
    return g_w, g_b


def train_logistic(
    X, y, hyperparameters: dict | None = None, schema_hash: str = ""
) -> TrainedModel:
    """Full-batch gradient descent from zero init.

    Stops when the gradient max-norm drops below `tolerance` or after
    `max_iters` steps. Records the loss after every step.
    """
    hyper = _merge_hyper(LOGISTIC_DEFAULTS, hyperparameters)
    X, y = _check_training_input(X, y)
    lr = float(hyper["learning_rate"])
    tol = float(hyper["tolerance"])
    l2 = float(hyper["l2"])
    max_iters = int(hyper["max_iters"])

    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    losses = [logistic_loss(X, y, w, b, l2)]
    iters = 0
    for _ in range(max_iters):
        g_w, g_b = logistic_gradient(X, y, w, b, l2)
        g_max = max(float(np.max(np.abs(g_w))) if g_w.size else 0.0, abs(g_b))
        if g_max < tol:
            break
        w -= lr * g_w
        b -= lr * g_b
        iters += 1
        losses.append(logistic_loss(X, y, w, b, l2))
    if not np.all(np.isfinite(w)) or not math.isfinite(b):
        raise DataError("logistic training diverged to non-finite weights")
    return TrainedModel(
        kind="logistic_regression",
        width=X.shape[1],
        schema_hash=schema_hash,
        train_seed=0,
        hyperparameters=hyper,
        weights=w,
        bias=b,
        loss_history=losses,
        n_iters=iters,
    )


# ---------------------------------------------------------------------------
# decision tree
# ---------------------------------------------------------------------------

def _weighted_gini(n_left, pos_left, n_right, pos_right):
    """Impurity of a split; works on scalars or aligned arrays."""
    pl = pos_left / n_left
    pr = pos_right / n_right
    g_left = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
    g_right = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
    return (n_left * g_left + n_right * g_right) / (n_left + n_right)


def _best_split_on_column(x, y, min_leaf, binary):
    """Best (cost, threshold) on one column, or None if no valid split.

    Thresholds are midpoints of adjacent distinct sorted values; a split
    is valid when both sides hold at least min_leaf rows. Binary 0/1
    columns short-circuit to the single midpoint 0.5 with count math.
    """
    n = x.shape[0]
    if binary:
        n_right = float(x.sum())  # ones go right of the 0.5 threshold
        n_left = n - n_right
        if n_left < min_leaf or n_right < min_leaf:
            return None
        pos_right = float(x @ y)
        pos_left = float(y.sum()) - pos_right
        return _weighted_gini(n_left, pos_left, n_right, pos_right), 0.5

    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    boundaries = np.flatnonzero(xs[1:] != xs[:-1])  # split after sorted index i
    if boundaries.size == 0:
        return None
    n_left = boundaries + 1.0
    n_right = n - n_left
    valid = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    boundaries = boundaries[valid]
    n_left = n_left[valid]
    n_right = n_right[valid]
    cum_pos = np.cumsum(ys)
    pos_left = cum_pos[boundaries]
    pos_right = cum_pos[-1] - pos_left
    costs = _weighted_gini(n_left, pos_left, n_right, pos_right)
    best = int(np.argmin(costs))  # first minimum -> lowest threshold
    thr = (xs[boundaries[best]] + xs[boundaries[best] + 1]) / 2.0
    return float(costs[best]), float(thr)


def _grow_tree(X, y, idx, depth, max_depth, min_leaf, rng, features_per_split, binary_cols):
    n = idx.size
    pos = float(y[idx].sum())
    node = TreeNode(prob=pos / n, count=int(n))
    if pos == 0.0 or pos == n or depth >= max_depth or n < 2 * min_leaf:
        return node
    width = X.shape[1]
    if features_per_split is not None and features_per_split < width:
        cols = np.sort(rng.choice(width, size=features_per_split, replace=False))
    else:
        cols = range(width)
    best = None  # (cost, column, threshold); ties keep the earliest
    for c in cols:
        found = _best_split_on_column(X[idx, c], y[idx], min_leaf, binary_cols[c])
        if found is None:
            continue
        cost, thr = found
        if best is None or cost < best[0]:
            best = (cost, int(c), thr)
    if best is None:
        return node
    _, column, threshold = best
    mask = X[idx, column] < threshold
    node.column = column
    node.threshold = threshold
    node.left = _grow_tree(
        X, y, idx[mask], depth + 1, max_depth, min_leaf, rng, features_per_split, binary_cols
    )
    node.right = _grow_tree(
        X, y, idx[~mask], depth + 1, max_depth, min_leaf, rng, features_per_split, binary_cols
    )
    return node


def _binary_columns(X: np.ndarray) -> np.ndarray:
    # one-hot data hits the count-based fast path; anything else sorts
    out = np.zeros(X.shape[1], dtype=bool)
    for c in range(X.shape[1]):
        col = X[:, c]
        out[c] = bool(np.all((col == 0.0) | (col == 1.0)))
    return out


def train_tree(
    X, y, hyperparameters: dict | None = None, schema_hash: str = ""
) -> TrainedModel:
    """CART-style tree minimizing weighted Gini impurity.

    Splits whenever a valid split exists on an impure node, even at zero
    gain: parity patterns need the gain to appear a level deeper.
    """
    hyper = _merge_hyper(TREE_DEFAULTS, hyperparameters)
    X, y = _check_training_input(X, y)
    root = _grow_tree(
        X,
        y,
        np.arange(X.shape[0]),
        depth=0,
        max_depth=int(hyper["max_depth"]),
        min_leaf=int(hyper["min_leaf"]),
        rng=None,
        features_per_split=None,
        binary_cols=_binary_columns(X),
    )
    return TrainedModel(
        kind="decision_tree",
        width=X.shape[1],
        schema_hash=schema_hash,
        train_seed=0,
        hyperparameters=hyper,
        root=root,
    )


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------

def train_forest(
    X, y, hyperparameters: dict | None = None, schema_hash: str = "", seed: int = 0
) -> TrainedModel:
    hyper = _merge_hyper(FOREST_DEFAULTS, hyperparameters)
    X, y = _check_training_input(X, y)
    n, width = X.shape
    n_trees = int(hyper["n_trees"])
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    k = hyper["features_per_split"]
    features_per_split = int(k) if k is not None else math.ceil(math.sqrt(width))
    features_per_split = min(features_per_split, width)
    binary_cols = _binary_columns(X)

    trees = []
    for t in range(n_trees):
        rng = np.random.Generator(np.random.PCG64(seed + t))  # per-tree stream
        if hyper["bootstrap"]:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        trees.append(
            _grow_tree(
                X,
                y,
                idx,
                depth=0,
                max_depth=int(hyper["max_depth"]),
                min_leaf=int(hyper["min_leaf"]),
                rng=rng,
                features_per_split=features_per_split if features_per_split < width else None,
                binary_cols=binary_cols,
            )
        )
    return TrainedModel(
        kind="random_forest",
        width=width,
        schema_hash=schema_hash,
        train_seed=seed,
        hyperparameters=dict(hyper, features_per_split=features_per_split),
        trees=trees,
    )


# ---------------------------------------------------------------------------
# prediction and evaluation
# ---------------------------------------------------------------------------

def _predict_tree_batch(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)

    def walk(node: TreeNode, idx: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.prob
            return
        mask = X[idx, node.column] < node.threshold
        walk(node.left, idx[mask])
        walk(node.right, idx[~mask])

    walk(root, np.arange(X.shape[0]))
    return out


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.width:
        raise SchemaMismatchError(
            f"feature width {X.shape[1]} does not match model width {model.width}"
        )
    if model.kind == "logistic_regression":
        # row-local sum keeps single-row and batched scoring bit-identical
        z = (X * model.weights).sum(axis=1) + model.bias
        return sigmoid(z)
    if model.kind == "decision_tree":
        return _predict_tree_batch(model.root, X)
    if model.kind == "random_forest":
        stacked = np.stack([_predict_tree_batch(t, X) for t in model.trees])
        return stacked.mean(axis=0)
    raise ConfigError(f"unknown model kind {model.kind!r}")


def evaluate(probabilities, truth, threshold: float = 0.5) -> EvalMetrics:
    """Counting-based metrics at a decision threshold (label = p >= threshold)."""
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if p.shape[0] == 0:
        raise DataError("cannot evaluate on an empty set")
    if p.shape != t.shape:
        raise DataError("probabilities and truth must align")
    pred = p >= threshold
    tp = int(np.sum(pred & t))
    tn = int(np.sum(~pred & ~t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    accuracy = (tp + tn) / p.shape[0]
    denom = 2 * tp + fp + fn
    f1 = (2 * tp / denom) if denom else 0.0
    return EvalMetrics(tn=tn, fp=fp, fn=fn, tp=tp, accuracy=accuracy, f1=f1, threshold=threshold)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"prob": node.prob, "count": node.count}
    return {
        "prob": node.prob,
        "count": node.count,
        "column": node.column,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(data: dict) -> TreeNode:
    node = TreeNode(prob=data["prob"], count=data["count"])
    if "column" in data:
        node.column = data["column"]
        node.threshold = data["threshold"]
        node.left = _node_from_dict(data["left"])
        node.right = _node_from_dict(data["right"])
    return node


def model_to_json(model: TrainedModel) -> str:
    payload = {
        "format": SERIALIZATION_FORMAT,
        "kind": model.kind,
        "width": model.width,
        "schema_hash": model.schema_hash,
        "train_seed": model.train_seed,
        "hyperparameters": model.hyperparameters,
    }
    if model.kind == "logistic_regression":
        payload["parameters"] = {
            "weights": [float(w) for w in model.weights],
            "bias": float(model.bias),
        }
    elif model.kind == "decision_tree":
        payload["parameters"] = {"root": _node_to_dict(model.root)}
    elif model.kind == "random_forest":
        payload["parameters"] = {"trees": [_node_to_dict(t) for t in model.trees]}
    else:
        raise ConfigError(f"unknown model kind {model.kind!r}")
    return json.dumps(payload, sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    data = json.loads(text)
    if data.get("format") != SERIALIZATION_FORMAT:
        raise DataError(f"unsupported model format {data.get('format')!r}")
    kind = data["kind"]
    model = TrainedModel(
        kind=kind,
        width=data["width"],
        schema_hash=data["schema_hash"],
        train_seed=data["train_seed"],
        hyperparameters=data["hyperparameters"],
    )
    params = data["parameters"]
    if kind == "logistic_regression":
        model.weights = np.array(params["weights"], dtype=np.float64)
        model.bias = float(params["bias"])
    elif kind == "decision_tree":
        model.root = _node_from_dict(params["root"])
    elif kind == "random_forest":
        model.trees = [_node_from_dict(t) for t in params["trees"]]
    else:
        raise DataError(f"unknown model kind {kind!r}")
    return model
