"""Baseline and tuning glue shared by the CLI and the acceptance tests.

Every random choice in a run derives from one integer seed through
``derive_seed(seed, tag)`` with these tags:

* ``split``: the train/test split
* ``valid-split``: the inner train/valid split of the holdout protocol
* ``model:<family>``: the trainer rng (GOSS draws, ordered permutation)
* ``tune:<family>``: the TPE study
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .data import Dataset, SplitSpec, stratified_split
from .ensemble import FAMILIES, BoostParams, Ensemble, train
from .metrics import EvalReport, evaluate
from .seeding import derive_seed
from .tpe import SearchSpace, Study, TPEConfig, default_spaces, run_study
from .tree import GrowthParams

PROTOCOLS = ("test", "holdout")
HOLDOUT_TRAIN_FRACTION = 0.75

# Pinned "untuned" settings, one per family.
BASELINE_PARAMS: dict[str, BoostParams] = {
    "adaboost": BoostParams(n_stages=50, eta=1.0, growth=GrowthParams(max_depth=1)),
    "xgb": BoostParams(n_stages=100, eta=0.1,
                       growth=GrowthParams(max_depth=3, reg_lambda=1.0, gamma=0.0)),
    "lgbm": BoostParams(n_stages=100, eta=0.1,
                        growth=GrowthParams(max_depth=16, max_leaves=31, min_samples_leaf=20,
                                            reg_lambda=0.0),
                        goss_a=0.2, goss_b=0.1),
    "catboost_like": BoostParams(n_stages=200, eta=0.1,
                                 growth=GrowthParams(max_depth=6, reg_lambda=3.0), ordered=True),
}

_GROWTH_KEYS = ("max_depth", "max_leaves", "min_samples_leaf", "reg_lambda", "gamma")
_BOOST_KEYS = ("n_stages", "eta", "goss_a", "goss_b", "ordered")


def model_seed(seed: int, family: str) -> int:
    return derive_seed(seed, f"model:{family}")


def split_data(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    return stratified_split(ds, SplitSpec(train_fraction, derive_seed(seed, "split"), True))


def baseline_params(family: str, seed: int) -> BoostParams:
    if family not in BASELINE_PARAMS:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return replace(BASELINE_PARAMS[family], seed=model_seed(seed, family))


def params_from_trial(family: str, values: dict, seed: int) -> BoostParams:
    """Overlay a trial's values on the family baseline.

    Raises ValueError for unknown keys and for GOSS fractions summing above 1.
    """
    base = baseline_params(family, seed)
    unknown = set(values) - set(_GROWTH_KEYS) - set(_BOOST_KEYS)
    if unknown:
        raise ValueError(f"unknown hyperparameters {sorted(unknown)}")
    growth = replace(base.growth, **{k: values[k] for k in _GROWTH_KEYS if k in values})
    p = replace(base, growth=growth, **{k: values[k] for k in _BOOST_KEYS if k in values})
    if family == "lgbm" and p.goss_active and p.goss_a + p.goss_b > 1.0:
        raise ValueError(f"goss_a + goss_b = {p.goss_a + p.goss_b:.3f} exceeds 1")
    return p


def f_beta_score(report: EvalReport) -> float:
    """Tuning objective.  An undefined F_beta (no positive predictions, or no
    positives to find) raises, so the trial is recorded as failed."""
    if report.f_beta is None:
        raise ValueError("F_beta undefined: precision or recall has a zero denominator")
    return report.f_beta


@dataclass
class TuneResult:
    family: str
    study: Study
    params: BoostParams
    model: Ensemble
    report: EvalReport


def tune_family(family: str, train_ds: Dataset, test_ds: Dataset, n_trials: int, seed: int,
                beta: float = 2.7, threshold: float = 0.5, protocol: str = "test",
                space: SearchSpace | None = None, config: TPEConfig | None = None,
                log_path=None, timestamp: str | None = None) -> TuneResult:
    """TPE over the family's space, maximising F_beta.

    ``test`` scores candidates on the test split; ``holdout`` carves a
    validation split out of train for scoring and keeps test for the final
    report only.  The best parameters are refit on the full train split.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if protocol == "test":
        fit_ds, score_ds = train_ds, test_ds
    else:
        fit_ds, score_ds = stratified_split(
            train_ds, SplitSpec(HOLDOUT_TRAIN_FRACTION, derive_seed(seed, "valid-split"), True))

    def objective(values: dict) -> float:
        model = train(fit_ds, family, params_from_trial(family, values, seed))
        return f_beta_score(evaluate(model, score_ds, threshold, beta))

    study = run_study(space or default_spaces(family), objective, n_trials,
                      derive_seed(seed, f"tune:{family}"), config, log_path, timestamp)
    if study.best is None:
        raise RuntimeError(f"{family}: all {n_trials} trials failed")
    params = params_from_trial(family, study.best.params, seed)
    model = train(train_ds, family, params)
    return TuneResult(family, study, params, model, evaluate(model, test_ds, threshold, beta))
