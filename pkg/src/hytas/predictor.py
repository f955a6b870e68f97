"""Proxy-fusion performance predictor: bagged CART regression forest.

Features are four architecture summaries plus six proxy scores in a frozen
order; trees use greedy variance-reduction splits over a random third of the
features per node. Everything is deterministic under the forest seed, and
models serialize to JSON as nested split records.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import spearman
from .proxies import derive_seed

FEATURE_COLUMNS = (
    "depth",
    "embed_dim",
    "mean_heads",
    "mean_mlp_ratio",
    "snip",
    "gradnorm",
    "synflow",
    "dss",
    "zico",
    "fisher",
)


class PredictorError(ValueError):
    """Feature extraction or fit/predict contract violation."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None  # unbounded
    min_leaf: int = 1
    # features per split: ceil(n_features / 3)


@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None

    def is_leaf(self) -> bool:
        return self.feature is None

    def predict_one(self, x: np.ndarray) -> float:
        node = self
        while not node.is_leaf():
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def to_dict(self) -> dict:
        if self.is_leaf():
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(obj: dict) -> "TreeNode":
        if "value" in obj:
            return TreeNode(value=float(obj["value"]))
        return TreeNode(
            feature=int(obj["feature"]),
            threshold=float(obj["threshold"]),
            left=TreeNode.from_dict(obj["left"]),
            right=TreeNode.from_dict(obj["right"]),
        )


@dataclass
class ForestModel:
    params: ForestParams
    seed: int
    feature_names: tuple[str, ...]
    trees: list[TreeNode] = field(default_factory=list)
    constant_target: bool = False


def extract_features(rows: Sequence[dict], target_col: str | None = None):
    """Feature matrix in FEATURE_COLUMNS order (+ target vector when asked)."""
    if not rows:
        raise PredictorError("no rows to extract features from")
    for col in FEATURE_COLUMNS:
        if col not in rows[0]:
            raise PredictorError(f"missing feature column {col!r}")
    x = np.array([[float(r[c]) for c in FEATURE_COLUMNS] for r in rows])
    if not np.all(np.isfinite(x)):
        raise PredictorError("non-finite feature values")
    if target_col is None:
        return x
    y = np.array([float(r[target_col]) for r in rows])
    if not np.all(np.isfinite(y)):
        raise PredictorError("non-finite target values")
    return x, y


def _best_split(x, y, feature_ids, min_leaf):
    """Greedy variance-reduction split; returns (feature, threshold, gain)."""
    n = len(y)
    total_sum = y.sum()
    total_sq = (y**2).sum()
    base_sse = total_sq - total_sum**2 / n
    best = (None, None, 0.0)
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys**2)
        for i in range(min_leaf, n - min_leaf + 1):
            if xs[i - 1] == xs[i]:
                continue  # cannot split between equal feature values
            left_sse = csq[i - 1] - csum[i - 1] ** 2 / i
            right_n = n - i
            right_sum = total_sum - csum[i - 1]
            right_sse = (total_sq - csq[i - 1]) - right_sum**2 / right_n
            gain = base_sse - left_sse - right_sse
            if gain > best[2]:
                best = (f, 0.5 * (xs[i - 1] + xs[i]), gain)
    return best


def _grow(x, y, rng, params: ForestParams, depth: int = 0) -> TreeNode:
    """Grow one tree with an explicit stack (deep chains stay safe)."""
    root = TreeNode()
    stack = [(root, x, y, depth)]
    while stack:
        node, nx, ny, nd = stack.pop()
        node.value = float(ny.mean())
        n = len(ny)
        if (
            n < 2 * params.min_leaf
            or np.all(ny == ny[0])
            or (params.max_depth is not None and nd >= params.max_depth)
        ):
            continue
        k = math.ceil(nx.shape[1] / 3)
        feature_ids = rng.choice(nx.shape[1], size=k, replace=False)
        feature, threshold, gain = _best_split(nx, ny, feature_ids, params.min_leaf)
        if feature is None or gain <= 0.0:
            continue
        mask = nx[:, feature] <= threshold
        node.feature = int(feature)
        node.threshold = float(threshold)
        node.left = TreeNode()
        node.right = TreeNode()
        stack.append((node.right, nx[~mask], ny[~mask], nd + 1))
        stack.append((node.left, nx[mask], ny[mask], nd + 1))
    return root


def fit(
    x: np.ndarray,
    y: np.ndarray,
    params: ForestParams | None = None,
    seed: int = 0,
    feature_names: tuple[str, ...] = FEATURE_COLUMNS,
) -> ForestModel:
    """Bagged regression forest: per tree, bootstrap rows then grow greedily."""
    params = params or ForestParams()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 5:
        raise PredictorError(f"need >= 5 rows to fit, got {len(x)}")
    if x.ndim != 2 or len(x) != len(y):
        raise PredictorError(f"bad shapes x={x.shape} y={y.shape}")
    model = ForestModel(
        params=params,
        seed=seed,
        feature_names=tuple(feature_names),
        constant_target=bool(np.all(y == y[0])),
    )
    n = len(y)
    for t in range(params.n_trees):
        rng = np.random.default_rng(derive_seed(seed, "tree", t))
        idx = rng.integers(0, n, size=n)
        model.trees.append(_grow(x[idx], y[idx], rng, params, depth=0))
    return model


def fit_rows(rows: Sequence[dict], target_col: str, params=None, seed: int = 0) -> ForestModel:
    x, y = extract_features(rows, target_col)
    return fit(x, y, params=params, seed=seed)


def predict(model: ForestModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.feature_names):
        raise PredictorError(
            f"feature count mismatch: model expects {len(model.feature_names)}, got {x.shape}"
        )
    out = np.zeros(len(x))
    for tree in model.trees:
        out += np.array([tree.predict_one(row) for row in x])
    return out / len(model.trees)


def predict_rows(model: ForestModel, rows: Sequence[dict]) -> np.ndarray:
    return predict(model, extract_features(rows))


@dataclass
class CurvePoint:
    train_size: int
    mean_rho: float
    std_rho: float
    rhos: list[float]
    dropped: int  # repeats lost to a degenerate (constant-target) holdout


def learning_curve(
    x: np.ndarray,
    y: np.ndarray,
    train_sizes: Sequence[int],
    repeats: int = 5,
    seed: int = 0,
    params: ForestParams | None = None,
) -> list[CurvePoint]:
    """Held-out Spearman of the fitted forest per train size, over seeded
    random splits; mean and standard deviation across repeats."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if repeats < 1:
        raise PredictorError("repeats must be >= 1")
    out = []
    for size in train_sizes:
        if not (5 <= size < n):
            raise PredictorError(f"train size {size} outside [5, {n})")
        rhos = []
        dropped = 0
        for rep in range(repeats):
            rng = np.random.default_rng(derive_seed(seed, "split", size, rep))
            perm = rng.permutation(n)
            train, test = perm[:size], perm[size:]
            if np.all(y[test] == y[test][0]):
                dropped += 1
                continue
            model = fit(x[train], y[train], params=params, seed=derive_seed(seed, "fit", size, rep))
            pred = predict(model, x[test])
            rho = spearman(pred, y[test])
            if math.isnan(rho):
                dropped += 1
                continue
            rhos.append(rho)
        if rhos:
            arr = np.asarray(rhos)
            out.append(CurvePoint(size, float(arr.mean()), float(arr.std()), rhos, dropped))
        else:
            out.append(CurvePoint(size, float("nan"), float("nan"), [], dropped))
    return out


# ---------------------------------------------------------------------------
# serialization


def save_model(model: ForestModel, path: str | Path) -> None:
    payload = {
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_leaf": model.params.min_leaf,
            "features_per_split": "ceil(n_features/3)",
        },
        "seed": model.seed,
        "feature_names": list(model.feature_names),
        "constant_target": model.constant_target,
        "trees": [t.to_dict() for t in model.trees],
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path: str | Path) -> ForestModel:
    with open(path) as fh:
        payload = json.load(fh)
    params = ForestParams(
        n_trees=int(payload["params"]["n_trees"]),
        max_depth=payload["params"]["max_depth"],
        min_leaf=int(payload["params"]["min_leaf"]),
    )
    return ForestModel(
        params=params,
        seed=int(payload["seed"]),
        feature_names=tuple(payload["feature_names"]),
        trees=[TreeNode.from_dict(t) for t in payload["trees"]],
        constant_target=bool(payload["constant_target"]),
    )
