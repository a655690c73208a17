"""Shapley attributions for additive tree ensembles, on the margin scale.

``shap_tree`` is the polynomial path-dependent algorithm: unknown features
are integrated out by following each split's training-cover shares.
``shap_exact`` enumerates all 2^M feature subsets and is the oracle; it
supports the same cover-routed value function (``background=None``) and
the interventional one (mean margin over background rows with the known
features fixed to x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .data import Dataset
from .ensemble import Ensemble
from .tree import MissingCoverError, Tree

EXACT_MAX_FEATURES = 15

__all__ = ["Attribution", "GlobalImportance", "MissingCoverError", "shap_tree", "shap_tree_batch",
           "shap_exact", "global_importance", "expected_margin", "local_accuracy_gap"]


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base_value: float
    instance_id: int | str | None = None

    def total(self) -> float:
        return self.base_value + float(self.phi.sum())


@dataclass(frozen=True)
class GlobalImportance:
    values: np.ndarray  # mean |phi| per feature
    ranking: np.ndarray  # feature indices, most important first
    feature_names: tuple[str, ...]

    def to_csv(self) -> str:
        lines = ["rank,feature_index,feature,mean_abs_phi"]
        for r, j in enumerate(self.ranking, start=1):
            lines.append(f"{r},{j},{self.feature_names[j]},{self.values[j]!r}")
        return "\n".join(lines) + "\n"


def _shapley_weights(dmax: int) -> np.ndarray:
    """w[d, s] = s! (d - s - 1)! / d! for 0 <= s < d."""
    w = np.zeros((dmax + 1, max(dmax, 1)))
    for d in range(1, dmax + 1):
        for s in range(d):
            w[d, s] = 1.0 / (d * math.comb(d - 1, s))
    return w


def expected_margin(model: Ensemble) -> float:
    """Cover-weighted expected margin: the base value of ``shap_tree``."""
    return model.base_score + sum(c * t.expected_value() for t, c in model.stages)


def shap_tree_batch(model: Ensemble, X) -> tuple[np.ndarray, float]:
    """Path-dependent attributions for every row of X: (phi (n, M), base value)."""
    X = model._check(X)
    paths = [t.leaf_paths for t, _ in model.stages]  # raises MissingCoverError
    dmax = max(p[1].shape[1] for p in paths)
    weights = _shapley_weights(dmax)
    phi = np.zeros((X.shape[0], model.n_features))
    for (path_len, feat, lo, hi, z, value, _), (_, coef) in zip(paths, model.stages):
        K.shap_leaf_paths(X, path_len, feat, lo, hi, z, value, weights, float(coef), phi)
    return phi, expected_margin(model)


def shap_tree(model: Ensemble, x, instance_id=None) -> Attribution:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("shap_tree explains a single row; use shap_tree_batch for matrices")
    phi, base = shap_tree_batch(model, x)
    return Attribution(phi[0], base, instance_id)


def _masks_with(M: int) -> np.ndarray:
    """bit[j, S] = feature j present in subset S, for S in 0 .. 2^M - 1."""
    S = np.arange(1 << M)
    return ((S[None, :] >> np.arange(M)[:, None]) & 1).astype(bool)


def _tree_values(t: Tree, x: np.ndarray, bits: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Tree output for every subset: known features follow x, unknown ones
    follow background row b, or split by cover share when b is None."""

    def walk(i):
        f = t.feature[i]
        if f < 0:
            return np.full(bits.shape[1], t.value[i])
        l, r = t.left[i], t.right[i]
        lv, rv = walk(l), walk(r)
        known = lv if x[f] <= t.threshold[i] else rv
        if b is not None:
            unknown = lv if b[f] <= t.threshold[i] else rv
        else:
            unknown = t.child_fraction(i, l) * lv + t.child_fraction(i, r) * rv
        return np.where(bits[f], known, unknown)

    return walk(0)


def shap_exact(model: Ensemble, x, background: Dataset | None = None,
               instance_id=None) -> Attribution:
    """Shapley values by summing over every subset S of the other features:
    phi_i = sum_S |S|! (M - |S| - 1)! / M! * (v(S + i) - v(S)).

    ``background=None`` uses the cover-routed value function (matches
    ``shap_tree``); a Dataset gives the interventional one.
    """
    x = np.asarray(x, dtype=np.float64)
    M = model.n_features
    if x.shape != (M,):
        raise ValueError(f"expected a row of {M} features, got shape {x.shape}")
    if M > EXACT_MAX_FEATURES:
        raise ValueError(f"shap_exact enumerates 2^M subsets and is limited to "
                         f"M <= {EXACT_MAX_FEATURES} (got M = {M}); use shap_tree instead")
    if background is not None:
        B = background.features
        if B.shape[0] == 0:
            raise ValueError("background dataset is empty")
        if B.shape[1] != M:
            raise ValueError(f"background has {B.shape[1]} features, model expects {M}")
        rows = list(B)
    else:
        rows = [None]
    bits = _masks_with(M)
    v = np.full(bits.shape[1], model.base_score)
    for t, c in model.stages:
        if background is None and t.cover is None and t.n_nodes > 1:
            raise MissingCoverError("tree carries no cover counts; pass a background dataset")
        v += c * np.mean([_tree_values(t, x, bits, b) for b in rows], axis=0)
    size = bits.sum(axis=0)
    w = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M)
                  if s < M else 0.0 for s in range(M + 1)])
    S = np.arange(1 << M)
    phi = np.zeros(M)
    for i in range(M):
        without = S[~bits[i]]
        phi[i] = float(np.sum(w[size[without]] * (v[without | (1 << i)] - v[without])))
    return Attribution(phi, float(v[0]), instance_id)


def global_importance(model: Ensemble, ds: Dataset) -> GlobalImportance:
    """Mean |phi| per feature over ``ds``; ranking is descending, ties by index."""
    if ds.n_rows == 0:
        raise ValueError("dataset is empty")
    phi, _ = shap_tree_batch(model, ds.features)
    values = np.abs(phi).mean(axis=0)
    ranking = np.argsort(-values, kind="stable")
    return GlobalImportance(values, ranking, tuple(model.feature_names))


def local_accuracy_gap(model: Ensemble, X, phi: np.ndarray, base_value: float) -> np.ndarray:
    """|base + sum(phi) - margin| per row."""
    return np.abs(base_value + phi.sum(axis=1) - model.margin(X))
