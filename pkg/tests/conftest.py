from pathlib import Path

import numpy as np
import pytest

from recallboost.data import Dataset, load_csv
from recallboost.ensemble import BoostParams, train
from recallboost.tree import GrowthParams

ROOT = Path(__file__).resolve().parents[1]
WDBC = ROOT / "data" / "wdbc.csv"
ACCEPTANCE_SEED = 42


@pytest.fixture(scope="session")
def wdbc() -> Dataset:
    return load_csv(WDBC, "diagnosis")


@pytest.fixture(scope="session")
def wdbc_split(wdbc):
    from recallboost.pipeline import split_data
    return split_data(wdbc, 0.65, ACCEPTANCE_SEED)


def make_dataset(X, y, names=None) -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return Dataset(X, np.asarray(y), names or tuple(f"f{j}" for j in range(X.shape[1])))


FAMILIES = ("adaboost", "xgb", "lgbm", "catboost_like")


def random_ensemble(rng, M=None):
    M = M or int(rng.integers(1, 13))
    n = int(rng.integers(6, 40))
    X = rng.normal(size=(n, M)).round(1)
    y = (rng.random(n) < 0.5).astype(int)
    y[:2] = [0, 1]
    family = FAMILIES[int(rng.integers(4))]
    p = BoostParams(n_stages=int(rng.integers(1, 6)), eta=float(rng.uniform(0.1, 1.0)),
                    growth=GrowthParams(max_depth=int(rng.integers(1, 4)), max_leaves=8,
                                        reg_lambda=0.1), goss_a=0.5, goss_b=0.5,
                    ordered=bool(rng.integers(2)), seed=int(rng.integers(1 << 30)))
    return train(make_dataset(X, y), family, p), X
