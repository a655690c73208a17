"""Tree-structured Parzen estimator search (independent, single objective, maximise).

After ``n_startup`` random trials, each parameter is modelled on its own:
completed trials are split at the ``gamma`` quantile of the objective into a
good and a bad group, a truncated-Gaussian Parzen density is fitted to each
(categoricals use Laplace-smoothed frequencies), ``n_candidates`` points are
drawn from the good density and the one with the largest good/bad density
ratio is proposed.  Log-scaled parameters are modelled in log space and
integers are rounded after selection.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .seeding import make_rng

log = logging.getLogger(__name__)

KINDS = ("uniform", "log_uniform", "int_uniform", "categorical")


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown parameter kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs at least one choice")
            object.__setattr__(self, "choices", tuple(self.choices))
            return
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.kind == "log_uniform" and self.lo <= 0:
            raise ValueError(f"{self.name}: log_uniform needs lo > 0")

    # internal (search) domain: log for log_uniform, +-0.5 padding for ints
    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "log_uniform":
            return math.log(self.lo), math.log(self.hi)
        if self.kind == "int_uniform":
            return self.lo - 0.5, self.hi + 0.5
        return float(self.lo), float(self.hi)

    def to_internal(self, value) -> float:
        return math.log(value) if self.kind == "log_uniform" else float(value)

    def from_internal(self, u: float):
        lo, hi = self.bounds
        u = min(max(u, lo), hi)
        if self.kind == "log_uniform":
            return min(max(math.exp(u), self.lo), self.hi)
        if self.kind == "int_uniform":
            return int(min(max(round(u), self.lo), self.hi))
        return u

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"name": self.name, "kind": self.kind, "choices": list(self.choices)}
        return {"name": self.name, "kind": self.kind, "lo": self.lo, "hi": self.hi}


def uniform(name, lo, hi) -> Param:
    return Param(name, "uniform", float(lo), float(hi))


def log_uniform(name, lo, hi) -> Param:
    return Param(name, "log_uniform", float(lo), float(hi))


def int_uniform(name, lo, hi) -> Param:
    return Param(name, "int_uniform", int(lo), int(hi))


def categorical(name, choices) -> Param:
    return Param(name, "categorical", choices=tuple(choices))


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def to_json(self) -> str:
        return json.dumps({"params": [p.to_dict() for p in self.params]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SearchSpace":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        out = []
        for p in d["params"]:
            if p["kind"] == "categorical":
                out.append(categorical(p["name"], p["choices"]))
            else:
                out.append(Param(p["name"], p["kind"], p["lo"], p["hi"]))
        return cls(tuple(out))


@dataclass
class Trial:
    id: int
    params: dict[str, Any]
    objective: float | None
    state: str  # "complete" | "failed"
    error: str | None = None
    timestamp: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "params": self.params, "objective": self.objective,
             "state": self.state, "timestamp": self.timestamp}
        if self.error is not None:
            d["error"] = self.error
        return d


@dataclass
class TPEConfig:
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24
    min_bandwidth: float = 0.01  # fraction of the parameter range


@dataclass
class Study:
    space: SearchSpace
    seed: int
    config: TPEConfig = field(default_factory=TPEConfig)
    trials: list[Trial] = field(default_factory=list)
    direction: str = "maximize"

    def complete(self) -> list[Trial]:
        return [t for t in self.trials if t.state == "complete"]

    @property
    def best(self) -> Trial | None:
        """Highest objective; ties go to the earliest trial."""
        best = None
        for t in self.complete():
            if best is None or t.objective > best.objective:
                best = t
        return best


class _Parzen:
    """Mixture of Gaussians truncated to [lo, hi].

    One kernel per observation (Scott's-rule bandwidth, floored at
    range / (1 + n) and never below ``min_bw`` of the range) plus one wide prior kernel centred on the range
    with sigma = range, which keeps the density from collapsing onto a
    tight cluster of incumbents.  Every kernel has equal weight.
    """

    def __init__(self, points: np.ndarray, lo: float, hi: float, min_bw: float):
        self.lo, self.hi = lo, hi
        span = hi - lo
        n = points.size
        if n > 1:
            bw = float(np.std(points, ddof=1)) * n ** (-1.0 / 5.0)  # Scott's rule, 1-D
        else:
            bw = span
        # floor shrinks as observations accumulate, down to min_bw of the range
        floor = max(min_bw, 1.0 / (1.0 + n)) * span
        bw = min(max(bw, floor), span)
        self.mu = np.r_[points, 0.5 * (lo + hi)]
        self.sigma = np.r_[np.full(n, bw), span]
        a = (lo - self.mu) / self.sigma
        b = (hi - self.mu) / self.sigma
        self._cdf_a, self._cdf_b = ndtr(a), ndtr(b)
        self._log_mass = np.log(np.maximum(self._cdf_b - self._cdf_a, 1e-300))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = rng.integers(0, self.mu.size, size=size)
        u = rng.uniform(self._cdf_a[k], self._cdf_b[k])
        x = self.mu[k] + self.sigma[k] * ndtri(u)
        return np.clip(x, self.lo, self.hi)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = (x[:, None] - self.mu[None, :]) / self.sigma[None, :]
        comp = (-0.5 * z * z - 0.5 * math.log(2 * math.pi) - np.log(self.sigma)[None, :]
                - self._log_mass[None, :])
        top = comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(comp - top).mean(axis=1, keepdims=True)))[:, 0]


def _sample_prior(p: Param, rng: np.random.Generator):
    if p.kind == "categorical":
        return p.choices[int(rng.integers(len(p.choices)))]
    lo, hi = p.bounds
    return p.from_internal(float(rng.uniform(lo, hi)))


def split_good_bad(trials: list[Trial], gamma: float) -> tuple[list[Trial], list[Trial]]:
    ranked = sorted(trials, key=lambda t: (-t.objective, t.id))
    n_good = max(1, math.ceil(gamma * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def fit_densities(p: Param, good: list[Trial], bad: list[Trial], min_bw: float):
    lo, hi = p.bounds
    g = np.array([p.to_internal(t.params[p.name]) for t in good])
    b = np.array([p.to_internal(t.params[p.name]) for t in bad])
    return _Parzen(g, lo, hi, min_bw), (_Parzen(b, lo, hi, min_bw) if b.size else None)


def suggest(study: Study) -> dict[str, Any]:
    """Next parameter assignment; a pure function of (study state, seed)."""
    cfg = study.config
    rng = make_rng(study.seed, len(study.trials))
    done = [t for t in study.complete() if all(n in t.params for n in study.space.names())]
    if len(done) < cfg.n_startup:
        return {p.name: _sample_prior(p, rng) for p in study.space.params}
    good, bad = split_good_bad(done, cfg.gamma)
    out = {}
    for p in study.space.params:
        if p.kind == "categorical":
            out[p.name] = _suggest_categorical(p, good, bad, rng, cfg.n_candidates)
            continue
        l, g = fit_densities(p, good, bad, cfg.min_bandwidth)
        cand = l.sample(rng, cfg.n_candidates)
        score = l.logpdf(cand)
        if g is not None:
            score = score - g.logpdf(cand)
        out[p.name] = p.from_internal(float(cand[int(np.argmax(score))]))
    return out


def _suggest_categorical(p: Param, good, bad, rng, n_candidates):
    idx = {c: i for i, c in enumerate(p.choices)}
    cg = np.ones(len(p.choices))
    cb = np.ones(len(p.choices))
    for t in good:
        cg[idx[t.params[p.name]]] += 1
    for t in bad:
        cb[idx[t.params[p.name]]] += 1
    pg, pb = cg / cg.sum(), cb / cb.sum()
    cand = rng.choice(len(p.choices), size=n_candidates, p=pg)
    ratio = np.log(pg[cand]) - np.log(pb[cand])
    return p.choices[int(cand[int(np.argmax(ratio))])]


def run_study(space: SearchSpace, objective: Callable[[dict], float], n_trials: int, seed: int,
              config: TPEConfig | None = None, log_path=None, timestamp: str | None = None) -> Study:
    """Sequential suggest -> evaluate -> record loop.

    An objective that raises or returns a non-finite value marks the trial
    failed; failed trials never enter the density estimates.  With
    ``log_path`` every trial is appended as one JSON line.  ``timestamp``
    pins the logged time (for byte-reproducible logs); otherwise wall-clock
    UTC is recorded.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    study = Study(space, seed, config or TPEConfig())
    fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for i in range(1, n_trials + 1):
            params = suggest(study)
            stamp = timestamp or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            try:
                value = float(objective(dict(params)))
                if not math.isfinite(value):
                    raise ValueError(f"non-finite objective {value}")
                trial = Trial(i, params, value, "complete", timestamp=stamp)
            except Exception as exc:  # noqa: BLE001 - any failure marks the trial failed
                trial = Trial(i, params, None, "failed", error=f"{type(exc).__name__}: {exc}",
                              timestamp=stamp)
            study.trials.append(trial)
            if fh is not None:
                fh.write(json.dumps(trial.to_dict()) + "\n")
    finally:
        if fh is not None:
            fh.close()
    if study.best is None:
        log.warning("study finished with zero complete trials out of %d", n_trials)
    return study


def read_study_log(path) -> list[Trial]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(Trial(d["id"], d["params"], d["objective"], d["state"], d.get("error"),
                             d.get("timestamp")))
    return out


def random_search(space: SearchSpace, objective: Callable[[dict], float], n_trials: int,
                  seed: int) -> Study:
    """Prior sampling with the same budget; the baseline TPE has to beat."""
    cfg = TPEConfig(n_startup=n_trials + 1)
    return run_study(space, objective, n_trials, seed, cfg)


def default_spaces(family: str) -> SearchSpace:
    """Search space per boosting family.

    All families tune the stage count and learning rate.  Tree-size and
    regularisation knobs follow the learner: AdaBoost has no lambda/gamma,
    ``lgbm`` adds leaf count and GOSS fractions (goss_a + goss_b <= 1 is
    checked when the objective builds the model), ``catboost_like`` adds the
    ordered-boosting switch.
    """
    common = [int_uniform("n_stages", 20, 300), log_uniform("eta", 0.01, 0.5)]
    if family == "adaboost":
        return SearchSpace((int_uniform("n_stages", 10, 300), log_uniform("eta", 0.01, 1.0),
                            int_uniform("max_depth", 1, 3)))
    if family == "xgb":
        return SearchSpace((*common, int_uniform("max_depth", 1, 6),
                            log_uniform("reg_lambda", 1e-3, 10.0), uniform("gamma", 0.0, 1.0),
                            int_uniform("min_samples_leaf", 1, 20)))
    if family == "lgbm":
        return SearchSpace((*common, int_uniform("max_leaves", 2, 64), int_uniform("max_depth", 2, 12),
                            log_uniform("reg_lambda", 1e-3, 10.0), uniform("gamma", 0.0, 1.0),
                            int_uniform("min_samples_leaf", 1, 30),
                            uniform("goss_a", 0.05, 0.5), uniform("goss_b", 0.05, 0.5)))
    if family == "catboost_like":
        return SearchSpace((*common, int_uniform("max_depth", 1, 6),
                            log_uniform("reg_lambda", 0.1, 10.0),
                            categorical("ordered", (False, True))))
    raise ValueError(f"unknown family {family!r}")
