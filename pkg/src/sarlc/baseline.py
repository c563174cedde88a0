"""Pixel-wise random forest over per-pixel feature vectors.

Trees are grown on bootstrap resamples; each split maximises the Gini
impurity decrease over a random feature subset, with thresholds taken at
midpoints between consecutive distinct values. All randomness flows through
the same seeded 64-bit generator family as the dataset splits, so a forest
is bit-reproducible from its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256StarStar, derive_seed

N_CLASSES = 9  # class 0 reserved for "no data", never trained on


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 20
    min_leaf: int = 5
    features_per_split: int = 6  # ceil(sqrt(28))
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_leaf", "features_per_split"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class Forest:
    config: ForestConfig
    trees: list[dict]  # nested {"f", "t", "l", "r"} nodes with {"leaf": counts} leaves

    def to_json(self) -> dict:
        return {
            "kind": "random_forest",
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_leaf": self.config.min_leaf,
                "features_per_split": self.config.features_per_split,
                "seed": self.config.seed,
            },
            "trees": self.trees,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Forest":
        return cls(config=ForestConfig(**doc["config"]), trees=doc["trees"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Forest":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _gini(counts: np.ndarray, n: int) -> float:
    p = counts / n
    return 1.0 - float(np.sum(p * p))


def _sample_features(rng: Xoshiro256StarStar, n_features: int, k: int) -> list[int]:
    ids = list(range(n_features))
    k = min(k, n_features)
    for i in range(k):
        j = i + rng.randbelow(n_features - i)
        ids[i], ids[j] = ids[j], ids[i]
    return ids[:k]


def _best_split(X, y, feat_ids, min_leaf):
    """(feature, threshold, decrease) maximising Gini decrease, or None."""
    n = len(y)
    parent_counts = np.bincount(y, minlength=N_CLASSES)
    parent_gini = _gini(parent_counts, n)
    best = None
    best_decrease = 0.0
    one_hot = np.zeros((n, N_CLASSES), dtype=np.int64)
    one_hot[np.arange(n), y] = 1
    for f in feat_ids:
        vals = X[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cum = np.cumsum(one_hot[order], axis=0)
        cuts = np.nonzero(sv[:-1] < sv[1:])[0]  # split between i and i+1
        if cuts.size == 0:
            continue
        left_n = cuts + 1
        keep = (left_n >= min_leaf) & (n - left_n >= min_leaf)
        cuts = cuts[keep]
        if cuts.size == 0:
            continue
        left_n = cuts + 1
        right_n = n - left_n
        left_counts = cum[cuts].astype(np.float64)
        right_counts = parent_counts[np.newaxis, :] - left_counts
        gini_left = 1.0 - np.sum((left_counts / left_n[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / right_n[:, None]) ** 2, axis=1)
        weighted = (left_n * gini_left + right_n * gini_right) / n
        decrease = parent_gini - weighted
        i = int(np.argmax(decrease))
        if decrease[i] > best_decrease:
            best_decrease = float(decrease[i])
            cut = int(cuts[i])
            best = (f, float((sv[cut] + sv[cut + 1]) / 2.0), best_decrease)
    return best


def _grow(X, y, depth, cfg, rng):
    counts = np.bincount(y, minlength=N_CLASSES)
    if (
        depth >= cfg.max_depth
        or len(y) < 2 * cfg.min_leaf
        or int(np.count_nonzero(counts)) == 1
    ):
        return {"leaf": counts.tolist()}
    feat_ids = _sample_features(rng, X.shape[1], cfg.features_per_split)
    split = _best_split(X, y, feat_ids, cfg.min_leaf)
    if split is None:
        return {"leaf": counts.tolist()}
    f, threshold, _ = split
    go_left = X[:, f] <= threshold
    return {
        "f": int(f),
        "t": threshold,
        "l": _grow(X[go_left], y[go_left], depth + 1, cfg, rng),
        "r": _grow(X[~go_left], y[~go_left], depth + 1, cfg, rng),
    }


def fit(samples_x: np.ndarray, samples_y: np.ndarray, cfg: ForestConfig) -> Forest:
    """Grow the forest; one bootstrap resample per tree."""
    X = np.asarray(samples_x, dtype=np.float64)
    y = np.asarray(samples_y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("expected (n, d) features and (n,) labels")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training data contains a single class")
    if y.min() < 1 or y.max() >= N_CLASSES:
        raise ValueError(f"labels must lie in 1..{N_CLASSES - 1}")
    n = len(y)
    trees = []
    for t in range(cfg.n_trees):
        rng = Xoshiro256StarStar(derive_seed(cfg.seed, t))
        boot = np.array([rng.randbelow(n) for _ in range(n)], dtype=np.int64)
        trees.append(_grow(X[boot], y[boot], 0, cfg, rng))
    return Forest(config=cfg, trees=trees)


def _tree_predict(node: dict, X: np.ndarray, out: np.ndarray, idx: np.ndarray) -> None:
    if "leaf" in node:
        out[idx] = int(np.argmax(node["leaf"]))  # argmax tie -> lowest class
        return
    go_left = X[idx, node["f"]] <= node["t"]
    _tree_predict(node["l"], X, out, idx[go_left])
    _tree_predict(node["r"], X, out, idx[~go_left])


def predict_batch(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Majority vote over trees; vote ties resolve to the lowest class index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected (n, d) feature matrix")
    votes = np.zeros((len(X), N_CLASSES), dtype=np.int64)
    scratch = np.zeros(len(X), dtype=np.int64)
    all_idx = np.arange(len(X))
    for tree in forest.trees:
        _tree_predict(tree, X, scratch, all_idx)
        votes[all_idx, scratch] += 1
    return np.argmax(votes, axis=1)


def predict(forest: Forest, x: np.ndarray) -> int:
    return int(predict_batch(forest, np.asarray(x)[np.newaxis, :])[0])


def subsample_per_class(
    X: np.ndarray, y: np.ndarray, cap: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """At most ``cap`` samples per class via seeded reservoir sampling."""
    keep: list[np.ndarray] = []
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        if len(idx) <= cap:
            keep.append(idx)
            continue
        rng = Xoshiro256StarStar(derive_seed(seed, int(c)))
        reservoir = idx[:cap].copy()
        for i in range(cap, len(idx)):
            j = rng.randbelow(i + 1)
            if j < cap:
                reservoir[j] = idx[i]
        keep.append(np.sort(reservoir))
    order = np.concatenate(keep)
    return X[order], y[order]
