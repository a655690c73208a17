#!/usr/bin/env python3
"""Export the Wisconsin Diagnostic Breast Cancer table to data/wdbc.csv.

scikit-learn bundles a copy of the UCI file (doi:10.24432/C5DW2B) with the
class encoded as 0 = malignant, 1 = benign.  The exported file carries a
``diagnosis`` column with the UCI letters (M/B) instead, so the encoding is
unambiguous.  Cell text is copied verbatim, no float round-trip.

Run:
  python3 scripts/export_wdbc.py
"""

from __future__ import annotations

import csv
from pathlib import Path


def main() -> None:
    from sklearn.datasets import load_breast_cancer
    import sklearn.datasets

    names = list(load_breast_cancer().feature_names)
    src = Path(sklearn.datasets.__file__).parent / "data" / "breast_cancer.csv"
    out = Path(__file__).resolve().parents[1] / "data" / "wdbc.csv"

    with src.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # "569,30,malignant,benign"
        rows = [r for r in reader]

    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ["diagnosis"])
        for r in rows:
            writer.writerow(r[:30] + ["M" if r[30] == "0" else "B"])
    print(f"wrote {out} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
