"""Decision-tree weak learners.

Two learners share one array-backed :class:`Tree`:

* :func:`fit_classification_tree` grows a weighted-Gini tree with +/-1 leaves
  (the AdaBoost base learner).
* :func:`fit_gradient_tree` grows a second-order tree from per-row gradients
  and hessians, level-wise, leaf-wise or oblivious.

Thresholds are midpoints between consecutive distinct values and a row goes
left iff ``x[feature] <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels as K

GROWTH_MODES = ("level_wise", "leaf_wise", "oblivious")


@dataclass(frozen=True)
class GrowthParams:
    """Tree-size and regularisation settings.

    ``max_leaves`` only bounds leaf-wise growth; level-wise and oblivious
    trees are bounded by ``max_depth``.  Oblivious trees ignore
    ``min_samples_leaf`` (a shared split cannot respect it in every node).
    """

    max_depth: int = 3
    max_leaves: int = 31
    min_samples_leaf: int = 1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    growth: str = "level_wise"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.max_leaves < 2:
            raise ValueError(f"max_leaves must be >= 2, got {self.max_leaves}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be non-negative")
        if self.growth not in GROWTH_MODES:
            raise ValueError(f"unknown growth mode {self.growth!r}")


class MissingCoverError(ValueError):
    """The tree was not fitted here and carries no per-node cover counts."""


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; node 0 is the root and ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray | None = None

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("left", np.int64), ("right", np.int64),
                            ("threshold", np.float64), ("value", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.cover is not None:
            c = np.ascontiguousarray(self.cover, dtype=np.float64)
            c.flags.writeable = False
            object.__setattr__(self, "cover", c)
        self._check()

    def _check(self):
        n = self.feature.shape[0]
        if n == 0:
            raise ValueError("tree has no nodes")
        if not all(a.shape == (n,) for a in (self.threshold, self.left, self.right, self.value)):
            raise ValueError("node arrays differ in length")
        if self.cover is not None and self.cover.shape != (n,):
            raise ValueError("cover array length mismatch")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            i = stack.pop()
            if seen[i]:
                raise ValueError(f"node {i} reached twice; tree is not acyclic")
            seen[i] = True
            if self.feature[i] >= 0:
                kids = (self.left[i], self.right[i])
                if not all(0 <= c < n for c in kids):
                    raise ValueError(f"node {i} has invalid children {kids}")
                if not np.isfinite(self.threshold[i]):
                    raise ValueError(f"node {i} has a non-finite threshold")
                stack.extend(kids)
            elif not np.isfinite(self.value[i]):
                raise ValueError(f"leaf {i} has a non-finite value")

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.feature[i] >= 0:
                stack += [(self.left[i], d + 1), (self.right[i], d + 1)]
            else:
                best = max(best, d)
        return best

    def split_features(self) -> set[int]:
        return set(int(f) for f in self.feature if f >= 0)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return K.predict_tree_rows(self.feature, self.threshold, self.left, self.right, self.value, X)

    def apply(self, X) -> np.ndarray:
        """Leaf node id for each row."""
        return K.apply_tree(self.feature, self.threshold, self.left, self.right, _as_matrix(X))

    def child_fraction(self, parent: int, child: int) -> float:
        """Share of the parent's training cover that went to ``child``;
        an empty parent splits its (zero) mass evenly."""
        if self.cover is None:
            raise MissingCoverError("tree carries no cover counts")
        pc = self.cover[parent]
        return float(self.cover[child] / pc) if pc > 0 else 0.5

    @cached_property
    def leaf_paths(self):
        """Per-leaf unique-feature path tables used by tree SHAP.

        Returns (path_len, path_feat, path_lo, path_hi, path_z, leaf_value,
        leaf_weight): for leaf l and its k-th distinct path feature, x reaches
        the leaf on that feature iff path_lo < x <= path_hi, and path_z is the
        product of cover shares along that feature's edges.  leaf_weight is
        the cover share of the whole path.
        """
        if self.cover is None:
            raise MissingCoverError("tree carries no cover counts; refit it to record covers")
        rows = []
        stack = [(0, {}, 1.0)]
        while stack:
            i, feats, w = stack.pop()
            if self.feature[i] < 0:
                rows.append((i, feats, w))
                continue
            f, t = int(self.feature[i]), self.threshold[i]
            for child, is_left in ((self.left[i], True), (self.right[i], False)):
                frac = self.child_fraction(i, child)
                lo, hi, z = feats.get(f, (-np.inf, np.inf, 1.0))
                if is_left:
                    hi = min(hi, t)
                else:
                    lo = max(lo, t)
                nxt = dict(feats)
                nxt[f] = (lo, hi, z * frac)
                stack.append((child, nxt, w * frac))
        rows.sort(key=lambda r: r[0])
        n_leaves = len(rows)
        dmax = max(1, max(len(r[1]) for r in rows))
        path_len = np.zeros(n_leaves, np.int64)
        path_feat = np.zeros((n_leaves, dmax), np.int64)
        path_lo = np.zeros((n_leaves, dmax))
        path_hi = np.zeros((n_leaves, dmax))
        path_z = np.zeros((n_leaves, dmax))
        leaf_value = np.zeros(n_leaves)
        leaf_weight = np.zeros(n_leaves)
        for l, (i, feats, w) in enumerate(rows):
            path_len[l] = len(feats)
            for k, (f, (lo, hi, z)) in enumerate(sorted(feats.items())):
                path_feat[l, k], path_lo[l, k], path_hi[l, k], path_z[l, k] = f, lo, hi, z
            leaf_value[l] = self.value[i]
            leaf_weight[l] = w
        return path_len, path_feat, path_lo, path_hi, path_z, leaf_value, leaf_weight

    def expected_value(self) -> float:
        """Cover-weighted mean leaf value."""
        *_, leaf_value, leaf_weight = self.leaf_paths
        return float(np.dot(leaf_value, leaf_weight))

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                node = {"kind": "internal", "feature": int(self.feature[i]),
                        "threshold": float(self.threshold[i]),
                        "children": [int(self.left[i]), int(self.right[i])]}
            else:
                node = {"kind": "leaf", "value": float(self.value[i])}
            if self.cover is not None:
                node["cover"] = float(self.cover[i])
            nodes.append(node)
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = d["nodes"]
        n = len(nodes)
        feature = np.full(n, -1, np.int64)
        threshold = np.full(n, np.nan)
        left = np.full(n, -1, np.int64)
        right = np.full(n, -1, np.int64)
        value = np.zeros(n)
        has_cover = n > 0 and all("cover" in nd for nd in nodes)
        cover = np.zeros(n) if has_cover else None
        for i, nd in enumerate(nodes):
            kind = nd["kind"]
            if kind == "internal":
                feature[i] = int(nd["feature"])
                threshold[i] = float(nd["threshold"])
                left[i], right[i] = (int(c) for c in nd["children"])
                if feature[i] < 0:
                    raise ValueError(f"node {i}: negative feature index")
            elif kind == "leaf":
                value[i] = float(nd["value"])
            else:
                raise ValueError(f"node {i}: unknown kind {kind!r}")
            if has_cover:
                cover[i] = float(nd["cover"])
        return cls(feature, threshold, left, right, value, cover)

    @classmethod
    def leaf(cls, value: float, cover: float | None = None) -> "Tree":
        return cls([-1], [np.nan], [-1], [-1], [value], None if cover is None else [cover])


def predict_tree(t: Tree, x) -> float:
    """Route one row to its leaf and return the leaf value."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("feature row contains non-finite values")
    node = 0
    while t.feature[node] >= 0:
        node = t.left[node] if x[t.feature[node]] <= t.threshold[node] else t.right[node]
    return float(t.value[node])


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature ascending row order, shape (n_features, n_rows)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover = [], []

    def add(self) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.cover.append(0.0)
        return len(self.feature) - 1

    def split(self, node: int, f: int, t: float) -> tuple[int, int]:
        l, r = self.add(), self.add()
        self.feature[node], self.threshold[node] = int(f), float(t)
        self.left[node], self.right[node] = l, r
        return l, r

    def build(self) -> Tree:
        return Tree(self.feature, self.threshold, self.left, self.right, self.value, self.cover)


def _leaf_weight(G: float, H: float, lam: float) -> float:
    d = H + lam
    return float(-G / d) if d > 0 else 0.0


def _route(X, slot, feat, thr, left_slot, right_slot):
    """Move active rows of split slots to their child slots; others go to -1."""
    new = np.full_like(slot, -1)
    active = np.flatnonzero(slot >= 0)
    k = slot[active]
    f = feat[k]
    split = f >= 0
    rows, k, f = active[split], k[split], f[split]
    go_left = X[rows, f] <= thr[k]
    new[rows] = np.where(go_left, left_slot[k], right_slot[k])
    return new


def _initial_slot(n: int, active) -> np.ndarray:
    if active is None:
        return np.zeros(n, np.int64)
    active = np.asarray(active)
    slot = np.full(n, -1, np.int64)
    if active.dtype == bool:
        slot[active] = 0
    else:
        slot[active.astype(np.int64)] = 0
    if not (slot >= 0).any():
        raise ValueError("no active rows")
    return slot


def fit_gradient_tree(X, g, h, params: GrowthParams, active=None, order=None) -> Tree:
    """Second-order regression tree on (gradient, hessian) pairs.

    Split gain is ``0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma``
    and only strictly positive gains are taken; leaves hold ``-G/(H+lam)``.
    ``active`` restricts fitting to a row subset (mask or indices).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if g.shape != (X.shape[0],) or h.shape != g.shape:
        raise ValueError("gradient/hessian length must match the number of rows")
    if not (np.isfinite(g).all() and np.isfinite(h).all()):
        raise ValueError("non-finite gradient or hessian")
    if (h < 0).any():
        raise ValueError("negative hessian")
    if order is None:
        order = presort(X)
    slot = _initial_slot(X.shape[0], active)
    grow = {"level_wise": _grow_level_wise, "leaf_wise": _grow_leaf_wise,
            "oblivious": _grow_oblivious}[params.growth]
    return grow(X, order, slot, g, h, params)


def _grow_level_wise(X, order, slot, g, h, p: GrowthParams) -> Tree:
    b = _Builder()
    frontier = [b.add()]
    depth = 0
    while frontier:
        feat, thr, _, G, H, C = K.best_gradient_splits(
            X, order, slot, len(frontier), g, h, p.reg_lambda, p.gamma, p.min_samples_leaf)
        for k, node in enumerate(frontier):
            b.value[node] = _leaf_weight(G[k], H[k], p.reg_lambda)
            b.cover[node] = float(C[k])
        if depth == p.max_depth:
            break
        left_slot = np.full(len(frontier), -1, np.int64)
        right_slot = np.full(len(frontier), -1, np.int64)
        nxt = []
        for k, node in enumerate(frontier):
            if feat[k] >= 0:
                l, r = b.split(node, feat[k], thr[k])
                left_slot[k], right_slot[k] = len(nxt), len(nxt) + 1
                nxt += [l, r]
        if not nxt:
            break
        slot = _route(X, slot, feat, thr, left_slot, right_slot)
        frontier = nxt
        depth += 1
    return b.build()


def _grow_leaf_wise(X, order, slot, g, h, p: GrowthParams) -> Tree:
    b = _Builder()
    root = b.add()
    node_of_row = np.where(slot >= 0, root, -1)
    # node -> (gain, feature, threshold, depth) for splittable leaves
    candidates: dict[int, tuple[float, int, float, int]] = {}

    def evaluate(nodes, depth):
        s = np.full_like(slot, -1)
        for k, node in enumerate(nodes):
            s[node_of_row == node] = k
        feat, thr, gain, G, H, C = K.best_gradient_splits(
            X, order, s, len(nodes), g, h, p.reg_lambda, p.gamma, p.min_samples_leaf)
        for k, node in enumerate(nodes):
            b.value[node] = _leaf_weight(G[k], H[k], p.reg_lambda)
            b.cover[node] = float(C[k])
            if feat[k] >= 0 and depth < p.max_depth:
                candidates[node] = (float(gain[k]), int(feat[k]), float(thr[k]), depth)

    evaluate([root], 0)
    n_leaves = 1
    while n_leaves < p.max_leaves and candidates:
        # highest gain first; ties go to the earliest-created leaf
        node = min(candidates, key=lambda n: (-candidates[n][0], n))
        _, f, t, depth = candidates.pop(node)
        l, r = b.split(node, f, t)
        rows = np.flatnonzero(node_of_row == node)
        go_left = X[rows, f] <= t
        node_of_row[rows[go_left]] = l
        node_of_row[rows[~go_left]] = r
        n_leaves += 1
        evaluate([l, r], depth + 1)
    return b.build()


def _grow_oblivious(X, order, slot, g, h, p: GrowthParams) -> Tree:
    b = _Builder()
    frontier = [b.add()]
    for depth in range(p.max_depth + 1):
        if depth < p.max_depth:
            f, t, _, G, H, C = K.best_oblivious_split(
                X, order, slot, len(frontier), g, h, p.reg_lambda, p.gamma)
        else:
            f = -1
            G, H, C = K.slot_totals(slot, len(frontier), g, h)
        for k, node in enumerate(frontier):
            b.value[node] = _leaf_weight(G[k], H[k], p.reg_lambda)
            b.cover[node] = float(C[k])
        if f < 0:
            break
        nxt = []
        for node in frontier:
            nxt += b.split(node, f, t)
        n = len(frontier)
        slot = _route(X, slot, np.full(n, f, np.int64), np.full(n, t),
                      np.arange(0, 2 * n, 2), np.arange(1, 2 * n, 2))
        frontier = nxt
    return b.build()


def fit_classification_tree(X, labels, sample_weights, params: GrowthParams, order=None) -> Tree:
    """Weighted-Gini tree over labels in {-1, +1}; leaves hold the weighted
    majority label (ties go to +1).  Grown level-wise to ``params.max_depth``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(labels)
    w = np.asarray(sample_weights, dtype=np.float64)
    if not np.isin(y, (-1, 1)).all():
        raise ValueError("labels must be -1 or +1")
    if (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValueError("sample weights must be finite, non-negative and not all zero")
    w = w / w.sum()
    wpos = np.where(y > 0, w, 0.0)
    wneg = np.where(y < 0, w, 0.0)
    if order is None:
        order = presort(X)
    slot = np.zeros(X.shape[0], np.int64)
    b = _Builder()
    frontier = [b.add()]
    depth = 0
    while frontier:
        feat, thr, _, P, N, C = K.best_gini_splits(
            X, order, slot, len(frontier), wpos, wneg, params.min_samples_leaf)
        left_slot = np.full(len(frontier), -1, np.int64)
        right_slot = np.full(len(frontier), -1, np.int64)
        nxt = []
        for k, node in enumerate(frontier):
            b.value[node] = 1.0 if P[k] >= N[k] else -1.0
            b.cover[node] = float(C[k])
            pure = P[k] <= 0.0 or N[k] <= 0.0
            if depth < params.max_depth and not pure and feat[k] >= 0:
                l, r = b.split(node, feat[k], thr[k])
                left_slot[k], right_slot[k] = len(nxt), len(nxt) + 1
                nxt += [l, r]
            else:
                feat[k] = -1
        if not nxt:
            break
        slot = _route(X, slot, feat, thr, left_slot, right_slot)
        frontier = nxt
        depth += 1
    return b.build()
