"""Tabular dataset loading, validation, summaries and the stratified split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .seeding import make_rng

# Ranges of the 30 WDBC attributes as commonly published, rounded to three
# decimals (large values to four significant digits).
WDBC_REFERENCE_RANGES: list[tuple[str, float, float]] = [
    ("mean radius", 6.981, 28.11),
    ("mean texture", 9.71, 39.28),
    ("mean perimeter", 43.79, 188.5),
    ("mean area", 143.5, 2501),
    ("mean smoothness", 0.053, 0.163),
    ("mean compactness", 0.019, 0.345),
    ("mean concavity", 0, 0.427),
    ("mean concave points", 0, 0.201),
    ("mean symmetry", 0.106, 0.304),
    ("mean fractal dimension", 0.05, 0.097),
    ("radius error", 0.112, 2.873),
    ("texture error", 0.36, 4.885),
    ("perimeter error", 0.757, 21.98),
    ("area error", 6.802, 542.2),
    ("smoothness error", 0.002, 0.031),
    ("compactness error", 0.002, 0.135),
    ("concavity error", 0, 0.396),
    ("concave points error", 0, 0.053),
    ("symmetry error", 0.008, 0.079),
    ("fractal dimension error", 0.001, 0.03),
    ("worst radius", 7.93, 36.04),
    ("worst texture", 12.02, 49.54),
    ("worst perimeter", 50.41, 251.2),
    ("worst area", 185.2, 4254),
    ("worst smoothness", 0.071, 0.223),
    ("worst compactness", 0.027, 1.058),
    ("worst concavity", 0, 1.252),
    ("worst concave points", 0, 0.291),
    ("worst symmetry", 0.157, 0.664),
    ("worst fractal dimension", 0.055, 0.207),
]

# Half a unit in the third decimal: the rounding slack of the table above.
REFERENCE_ROUNDING = 0.0005
RANGE_EPS = 1e-9

_LABEL_CODES = {"0": 0, "1": 1, "b": 0, "m": 1}


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with binary labels (1 = malignant, positive).

    ``row_ids`` are the 0-based data-row positions in the source file, so
    subsets produced by :func:`stratified_split` can be traced back.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: np.ndarray = None  # type: ignore[assignment]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        if len(self.feature_names) != X.shape[1]:
            raise DataError(f"{len(self.feature_names)} names for {X.shape[1]} columns")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if not np.isfinite(X).all():
            raise DataError("features contain missing or non-finite values")
        ids = np.arange(X.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        for arr in (X, y, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "row_ids", ids)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> dict[int, int]:
        return {0: int((self.labels == 0).sum()), 1: int((self.labels == 1).sum())}

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names,
                       self.row_ids[idx], dict(self.provenance))


def load_csv(path, target_column: str, drop_columns: Sequence[str] = ()) -> Dataset:
    """Read a header-first CSV; every column except the target (and
    ``drop_columns``) becomes a feature.  Targets may be 0/1 or B/M."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file (no header row)")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header")
        unknown = [c for c in drop_columns if c not in header]
        if unknown:
            raise DataError(f"{path}: cannot drop unknown columns {unknown}")
        t_idx = header.index(target_column)
        f_idx = [i for i, h in enumerate(header) if i != t_idx and h not in drop_columns]

        rows, labels = [], []
        for row_no, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(cells)} cells, expected {len(header)}")
            code = _LABEL_CODES.get(cells[t_idx].strip().lower())
            if code is None:
                raise DataError(f"{path}: row {row_no}, column {target_column!r}: "
                                f"cannot parse label {cells[t_idx]!r}")
            values = []
            for i in f_idx:
                text = cells[i].strip()
                try:
                    v = float(text)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {row_no}, column {header[i]!r}: "
                                    f"unparseable value {cells[i]!r}")
                values.append(v)
            rows.append(values)
            labels.append(code)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels),
                   tuple(header[i] for i in f_idx),
                   provenance={"source": path.name, "target_column": target_column})


@dataclass
class RangeCheck:
    name: str
    expected_min: float
    expected_max: float
    observed_min: float
    observed_max: float
    passed: bool
    offending_rows: list[int]


def validate_ranges(ds: Dataset, expected, eps: float = RANGE_EPS) -> list[RangeCheck]:
    """Check each named feature's observed values lie inside [min - eps, max + eps]."""
    out = []
    for name, lo, hi in expected:
        if name not in ds.feature_names:
            raise DataError(f"unknown feature {name!r}")
        col = ds.features[:, ds.feature_names.index(name)]
        bad = np.flatnonzero((col < lo - eps) | (col > hi + eps))
        out.append(RangeCheck(name, float(lo), float(hi), float(col.min()), float(col.max()),
                              bad.size == 0, [int(ds.row_ids[i]) for i in bad]))
    return out


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.65
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Per class, floor(count * fraction) rows go to train by a seeded shuffle.

    With ``stratified=False`` the same rule is applied to the whole table.
    Both halves keep the original row order.
    """
    rng = make_rng(spec.seed)
    groups = [np.flatnonzero(ds.labels == c) for c in (0, 1)] if spec.stratified \
        else [np.arange(ds.n_rows)]
    train = []
    for members in groups:
        if spec.stratified and members.size < 2:
            raise DataError(f"class {int(ds.labels[members[0]]) if members.size else '?'} "
                            f"has {members.size} rows; need at least 2 to split")
        k = math.floor(members.size * spec.train_fraction)
        train.append(rng.permutation(members)[:k])
    train_idx = np.sort(np.concatenate(train))
    test_mask = np.ones(ds.n_rows, dtype=bool)
    test_mask[train_idx] = False
    return ds.subset(train_idx), ds.subset(np.flatnonzero(test_mask))


def spearman_matrix(ds: Dataset) -> np.ndarray:
    """Rank correlation with midranks; NaN marks pairs involving a constant column."""
    if ds.n_rows < 2:
        raise DataError("need at least 2 rows for rank correlation")
    ranks = rankdata(ds.features, axis=0, method="average")
    centered = ranks - ranks.mean(axis=0)
    gram = centered.T @ centered
    ss = np.diag(gram).copy()
    constant = ss == 0
    # sqrt(s * s) == s exactly, so identical or mirrored rank vectors give +-1
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = gram / np.sqrt(np.outer(ss, ss))
    rho = np.clip(rho, -1.0, 1.0)
    rho = (rho + rho.T) / 2
    np.fill_diagonal(rho, 1.0)
    rho[constant, :] = np.nan
    rho[:, constant] = np.nan
    return rho


@dataclass
class FeatureSummary:
    name: str
    min: float
    max: float
    mean: float
    median: float
    bin_edges: list[float]
    counts_by_class: dict[int, list[int]]


def summarize(ds: Dataset, bins: int = 20) -> list[FeatureSummary]:
    if ds.n_rows < 1:
        raise DataError("empty dataset")
    out = []
    for j, name in enumerate(ds.feature_names):
        col = ds.features[:, j]
        lo, hi = float(col.min()), float(col.max())
        edges = np.histogram_bin_edges(col, bins=bins, range=(lo, hi))
        counts = {c: np.histogram(col[ds.labels == c], bins=edges)[0].tolist() for c in (0, 1)}
        # mean of identical values can drift by an ulp; keep it inside [min, max]
        mean = min(max(float(col.mean()), lo), hi)
        out.append(FeatureSummary(name, lo, hi, mean, float(np.median(col)),
                                  edges.tolist(), counts))
    return out
