"""Extremely randomized regression trees.

Every tree sees the full training set (no bootstrap); split features and cut
points are drawn at random and only the best of the random candidates is
kept. Tree growth and traversal run in :mod:`diadetect.kernels`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..seeding import derive_seed


@dataclass(frozen=True)
class EtrParams:
    n_trees: int = 100
    max_features: int = 5
    n_min: int = 2


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


@dataclass(frozen=True)
class EtrModel:
    """Tree ensemble stored as concatenated node arrays.

    Tree ``b`` owns nodes ``offsets[b]:offsets[b+1]``; child indices are
    local to their tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    offsets: np.ndarray
    n_features: int
    params: EtrParams
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, b: int) -> Tree:
        s, e = self.offsets[b], self.offsets[b + 1]
        return Tree(self.feature[s:e], self.threshold[s:e], self.left[s:e],
                    self.right[s:e], self.value[s:e], self.n_samples[s:e])

    @property
    def trees(self) -> list[Tree]:
        return [self.tree(b) for b in range(self.n_trees)]

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree outputs f_b(x), shape (n_trees, n_samples)."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return kernels.predict_forest(self.feature, self.threshold, self.left, self.right,
                                      self.value, self.offsets, X)

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)


def _grow(X, y, params: EtrParams, seed: int) -> tuple:
    n, d = X.shape
    # each node draws at most d feature uniforms and max_features cut uniforms
    u = np.random.default_rng(seed).random(2 * n * (d + params.max_features) + 1)
    return kernels.build_tree(X, y, params.n_min, params.max_features, u)


def train_etr(dataset, params: EtrParams = EtrParams(), seed: int = 0, jobs: int = 1,
              scaled: bool = True) -> EtrModel:
    """Fit on ``dataset.scaled_inputs``/``scaled_targets`` (or raw values when
    ``scaled`` is false). Tree ``b`` uses seed ``derive_seed(seed, "tree", b)``
    so results do not depend on ``jobs``."""
    X = dataset.scaled_inputs if scaled else dataset.inputs
    y = dataset.scaled_targets if scaled else dataset.targets
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training set")
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 1 <= params.max_features <= X.shape[1]:
        raise ValueError(f"max_features must lie in [1, {X.shape[1]}]")
    seeds = [derive_seed(seed, "tree", b) for b in range(params.n_trees)]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            grown = list(pool.map(lambda s: _grow(X, y, params, s), seeds))
    else:
        grown = [_grow(X, y, params, s) for s in seeds]
    sizes = [len(g[0]) for g in grown]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cols = [np.concatenate([g[i] for g in grown]) for i in range(6)]
    return EtrModel(*cols, offsets=offsets, n_features=X.shape[1], params=params, seed=seed)


def etr_predict(model: EtrModel, window) -> tuple[float, float | None]:
    """Ensemble mean and between-tree standard deviation (ddof 1) for one
    window. The deviation is ``None`` for a single-tree ensemble."""
    preds = model.tree_predictions(np.asarray(window, dtype=float).reshape(1, -1))[:, 0]
    return ensemble_stats(preds)


def ensemble_stats(preds) -> tuple[float, float | None]:
    preds = np.asarray(preds, dtype=float)
    mean = float(preds.sum() / len(preds))
    if len(preds) < 2:
        return mean, None
    std = float(np.sqrt(((preds - mean) ** 2).sum() / (len(preds) - 1)))
    return mean, std
