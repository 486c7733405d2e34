#!/usr/bin/env python3
"""Fetches the UCI regression tables used by the reproduction runs and
writes them as headered CSVs under data/.

  housing   506 x 13 features + MEDV label      (housing.data)
  yacht     308 x 6 features + resistance label (yacht_hydrodynamics.data)
  concrete  1030 x 8 features + strength label  (Concrete_Data.xls)

The label is always the last column; pass `--label-column <last>` to the
CLI for prediction tasks, and the same flag on `impute` to exclude it from
the feature matrix. Reproduction runs treat every column as continuous
(min-max scaled), so no schema sidecar is written.

Requires network access to archive.ics.uci.edu; concrete additionally
needs pandas with xlrd for the .xls sheet.
"""

import argparse
import io
import pathlib
import urllib.request

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"

HOUSING_COLUMNS = [
    "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE",
    "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV",
]
YACHT_COLUMNS = [
    "LC", "PC", "LD", "BD", "LB", "FR", "RR",
]


def fetch(url: str) -> bytes:
    print(f"fetching {url}")
    with urllib.request.urlopen(url, timeout=60) as response:
        return response.read()


def write_csv(path: pathlib.Path, header: list[str], rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    print(f"wrote {path} ({len(rows)} rows x {len(header)} columns)")


def space_separated(raw: bytes, expected_cols: int) -> list[list[str]]:
    rows = []
    for line in raw.decode("utf-8", errors="replace").splitlines():
        fields = line.split()
        if not fields:
            continue
        if len(fields) != expected_cols:
            raise ValueError(f"expected {expected_cols} fields, got {fields}")
        rows.append(fields)
    return rows


def fetch_housing(out: pathlib.Path) -> None:
    raw = fetch(f"{UCI}/housing/housing.data")
    write_csv(out / "housing.csv", HOUSING_COLUMNS, space_separated(raw, 14))


def fetch_yacht(out: pathlib.Path) -> None:
    raw = fetch(f"{UCI}/00243/yacht_hydrodynamics.data")
    write_csv(out / "yacht.csv", YACHT_COLUMNS, space_separated(raw, 7))


def fetch_concrete(out: pathlib.Path) -> None:
    import pandas as pd

    raw = fetch(f"{UCI}/concrete/compressive/Concrete_Data.xls")
    frame = pd.read_excel(io.BytesIO(raw))
    header = [
        "cement", "slag", "ash", "water", "superplasticizer",
        "coarse_aggregate", "fine_aggregate", "age", "strength",
    ]
    rows = [[repr(v) for v in record] for record in frame.itertuples(index=False)]
    write_csv(out / "concrete.csv", header, rows)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", type=pathlib.Path, default=pathlib.Path(__file__).parent.parent / "data"
    )
    parser.add_argument(
        "--datasets",
        default="housing,yacht,concrete",
        help="comma-separated subset of housing,yacht,concrete",
    )
    args = parser.parse_args()

    fetchers = {
        "housing": fetch_housing,
        "yacht": fetch_yacht,
        "concrete": fetch_concrete,
    }
    for name in args.datasets.split(","):
        name = name.strip()
        if name not in fetchers:
            raise SystemExit(f"unknown dataset {name!r}")
        fetchers[name](args.out)


if __name__ == "__main__":
    main()
