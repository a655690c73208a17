"""Boosting trainers and the shared additive-ensemble model.

Every family produces the same :class:`Ensemble`: a base score plus a list
of (tree, coefficient) stages, so prediction, serialization and SHAP work
uniformly.  The margin is ``base_score + sum(coefficient * tree(x))``.

* ``adaboost``: discrete AdaBoost over weighted-Gini trees, coefficients are
  the stage weights alpha.
* ``xgb``: second-order logistic boosting with level-wise trees.
* ``lgbm``: leaf-wise trees fitted on a GOSS sample of rows.
* ``catboost_like``: oblivious trees, optionally with ordered boosting.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _kernels as K
from .data import Dataset
from .seeding import make_rng
from .tree import GrowthParams, Tree, fit_classification_tree, fit_gradient_tree, presort

FAMILIES = ("adaboost", "xgb", "lgbm", "catboost_like")
GRADIENT_VARIANTS = {"xgb": "level_wise", "lgbm": "leaf_wise", "catboost_like": "oblivious"}
FORMAT_VERSION = 1
ADABOOST_ERR_CLIP = 1e-10


class ModelFormatError(ValueError):
    """A model file could not be read back."""


@dataclass(frozen=True)
class BoostParams:
    n_stages: int = 100
    eta: float = 0.1
    growth: GrowthParams = field(default_factory=GrowthParams)
    goss_a: float = 0.2
    goss_b: float = 0.1
    ordered: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError(f"n_stages must be >= 1, got {self.n_stages}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if not 0.0 <= self.goss_a <= 1.0:
            raise ValueError(f"goss_a must be in [0, 1], got {self.goss_a}")
        if not 0.0 < self.goss_b <= 1.0:
            raise ValueError(f"goss_b must be in (0, 1], got {self.goss_b}")

    @property
    def goss_active(self) -> bool:
        return self.goss_a < 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoostParams":
        d = dict(d)
        d["growth"] = GrowthParams(**d.get("growth", {}))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Ensemble:
    family: str
    stages: tuple[tuple[Tree, float], ...]
    base_score: float
    eta: float
    feature_names: tuple[str, ...]
    params: dict | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ValueError("feature matrix contains non-finite values")
        return X

    def margin(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.full(X.shape[0], self.base_score)
        for tree, coef in self.stages:
            out += coef * K.predict_tree_rows(tree.feature, tree.threshold, tree.left,
                                              tree.right, tree.value, X)
        return out

    def link(self, margin) -> np.ndarray:
        """Margin to probability: sigmoid, or sigmoid(2m) for AdaBoost margins."""
        margin = np.asarray(margin, dtype=np.float64)
        return expit(2.0 * margin) if self.family == "adaboost" else expit(margin)

    def proba(self, X) -> np.ndarray:
        return self.link(self.margin(X))

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.proba(X) >= threshold).astype(np.int64)


def predict_margin(e: Ensemble, x) -> float | np.ndarray:
    m = e.margin(x)
    return float(m[0]) if np.ndim(x) == 1 else m


def predict_proba(e: Ensemble, x) -> float | np.ndarray:
    p = e.proba(x)
    return float(p[0]) if np.ndim(x) == 1 else p


def predict_label(e: Ensemble, x, threshold: float = 0.5) -> int | np.ndarray:
    y = e.predict(x, threshold)
    return int(y[0]) if np.ndim(x) == 1 else y


def _require_both_classes(y: np.ndarray):
    if y.size == 0 or y.min() == y.max():
        raise ValueError("training data must contain both classes")


def train_adaboost(train: Dataset, p: BoostParams, trace: list | None = None) -> Ensemble:
    """Discrete AdaBoost.

    Per stage: fit G_m on the current weights, err = sum w[G_m(x) != y]
    clipped to [1e-10, 1 - 1e-10], alpha = eta * 0.5 * ln((1 - err) / err),
    w <- w * exp(-alpha * y * G_m(x)), renormalised.  With eta = 1 this is
    the textbook rule.  ``trace`` (if given) receives one dict per stage.
    """
    X, y01 = train.features, train.labels
    _require_both_classes(y01)
    y = np.where(y01 == 1, 1.0, -1.0)
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    order = presort(X)
    growth = replace(p.growth, growth="level_wise")
    stages = []
    for _ in range(p.n_stages):
        tree = fit_classification_tree(X, y, w, growth, order=order)
        pred = tree.predict(X)
        err = float(w[pred != y].sum())
        err_c = min(max(err, ADABOOST_ERR_CLIP), 1.0 - ADABOOST_ERR_CLIP)
        alpha = p.eta * 0.5 * math.log((1.0 - err_c) / err_c)
        w = w * np.exp(-alpha * y * pred)
        w = w / w.sum()
        stages.append((tree, alpha))
        if trace is not None:
            trace.append({"err": err, "err_clipped": err_c, "alpha": alpha, "weights": w.copy()})
    return Ensemble("adaboost", tuple(stages), 0.0, p.eta, train.feature_names, p.to_dict())


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.logaddexp(0.0, margin) - y * margin))


def goss_sample(g: np.ndarray, a: float, b: float, rng: np.random.Generator):
    """Keep the top ``a`` fraction by |g|, draw ``b * n`` of the rest uniformly.

    Returns (row indices, per-row multiplier for g and h).
    """
    n = g.shape[0]
    n_top, n_rand = int(a * n), int(b * n)
    ranked = np.argsort(-np.abs(g), kind="stable")
    top, rest = ranked[:n_top], ranked[n_top:]
    n_rand = min(n_rand, rest.size)
    sampled = np.sort(rng.choice(rest, size=n_rand, replace=False)) if n_rand else rest[:0]
    if n_top + n_rand == 0:
        raise ValueError("GOSS selected no rows; increase goss_a or goss_b")
    rows = np.concatenate([top, sampled])
    mult = np.ones(n)
    mult[sampled] = (1.0 - a) / b
    return rows, mult


def train_gradient(train: Dataset, p: BoostParams, variant: str, trace: list | None = None) -> Ensemble:
    """Second-order logistic boosting; ``variant`` picks growth and sampling.

    ``trace`` (if given) receives per stage the gradients/hessians used to fit
    the tree, the fitting rows, and the training loss after the update.
    """
    if variant not in GRADIENT_VARIANTS:
        raise ValueError(f"unknown gradient variant {variant!r}")
    use_goss = variant == "lgbm" and p.goss_active
    if use_goss and p.goss_a + p.goss_b > 1.0:
        raise ValueError(f"goss_a + goss_b must be <= 1, got {p.goss_a} + {p.goss_b}")
    X = train.features
    y = train.labels.astype(np.float64)
    _require_both_classes(train.labels)
    n = X.shape[0]
    growth = replace(p.growth, growth=GRADIENT_VARIANTS[variant])
    ordered = variant == "catboost_like" and p.ordered

    prior = y.mean()
    base = math.log(prior / (1.0 - prior))
    F = np.full(n, base)
    order = presort(X)
    rng = make_rng(p.seed)
    perm = rng.permutation(n) if ordered else None
    F_seen = F.copy() if ordered else None
    stages = []
    for _ in range(p.n_stages):
        prob = expit(F_seen if ordered else F)
        g = prob - y
        h = prob * (1.0 - prob)
        rows = None
        if use_goss:
            rows, mult = goss_sample(g, p.goss_a, p.goss_b, rng)
            g, h = g * mult, h * mult
        tree = fit_gradient_tree(X, g, h, growth, active=rows, order=order)
        F += p.eta * K.predict_tree_rows(tree.feature, tree.threshold, tree.left,
                                         tree.right, tree.value, X)
        if ordered:
            leaf = K.apply_tree(tree.feature, tree.threshold, tree.left, tree.right, X)
            F_seen += p.eta * K.ordered_prefix_values(leaf, g, h, perm, growth.reg_lambda,
                                                      tree.n_nodes)
        stages.append((tree, p.eta))
        if trace is not None:
            trace.append({"g": g, "h": h, "rows": rows, "loss": logistic_loss(F, y),
                          "perm": perm})
    return Ensemble(variant, tuple(stages), base, p.eta, train.feature_names, p.to_dict())


def train(train_ds: Dataset, family: str, p: BoostParams) -> Ensemble:
    if family == "adaboost":
        return train_adaboost(train_ds, p)
    if family in GRADIENT_VARIANTS:
        return train_gradient(train_ds, p, family)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def model_to_dict(e: Ensemble) -> dict:
    d = {
        "format_version": FORMAT_VERSION,
        "family": e.family,
        "eta": e.eta,
        "base_score": e.base_score,
        "feature_names": list(e.feature_names),
        "stages": [{"coefficient": c, "tree": t.to_dict()} for t, c in e.stages],
    }
    if e.params is not None:
        d["params"] = e.params
    return d


def model_from_dict(d: dict) -> Ensemble:
    if not isinstance(d, dict):
        raise ModelFormatError("model file does not hold a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} "
                               f"(this build reads version {FORMAT_VERSION})")
    family = d.get("family")
    if family not in FAMILIES:
        raise ModelFormatError(f"format_version {version}: unknown family {family!r}")
    try:
        stages = tuple((Tree.from_dict(s["tree"]), float(s["coefficient"])) for s in d["stages"])
        e = Ensemble(family, stages, float(d["base_score"]), float(d["eta"]),
                     tuple(d["feature_names"]), d.get("params"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from exc
    if not stages:
        raise ModelFormatError("model has no stages")
    n = e.n_features
    for t, c in stages:
        if not math.isfinite(c):
            raise ModelFormatError("non-finite stage coefficient")
        if (t.feature >= n).any():
            raise ModelFormatError(f"tree references a feature index >= {n}")
    return e


def dumps_model(e: Ensemble) -> str:
    return json.dumps(model_to_dict(e), allow_nan=False) + "\n"


def save_model(e: Ensemble, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_model(e), encoding="utf-8")
    os.replace(tmp, path)


def load_model(path) -> Ensemble:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupted model file ({exc})") from exc
    return model_from_dict(d)
