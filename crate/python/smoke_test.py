#!/usr/bin/env python3
"""Smoke test for the grape_py extension module.

Builds nothing itself: expects `cargo build -p grape-py --release` (or a
debug build) to have produced libgrape_py.so, which is staged under a
temporary directory as grape_py.so and imported. Exercises the main types
and operations end to end on a small synthetic problem.
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def stage_module() -> pathlib.Path:
    candidates = [
        ROOT / "target" / "release" / "libgrape_py.so",
        ROOT / "target" / "debug" / "libgrape_py.so",
    ]
    for built in candidates:
        if built.exists():
            stage = pathlib.Path(tempfile.mkdtemp(prefix="grape_py_"))
            shutil.copy2(built, stage / "grape_py.so")
            return stage
    sys.exit(
        "libgrape_py.so not found; run `cargo build -p grape-py --release` first"
    )


def check(name: str, condition: bool) -> None:
    status = "PASS" if condition else "FAIL"
    print(f"{status} {name}")
    if not condition:
        sys.exit(1)


def main() -> None:
    sys.path.insert(0, str(stage_module()))
    import grape_py

    # Synthetic low-rank data, 30% missing, scaled on observed entries.
    data, labels = grape_py.make_synthetic(40, 5, 2, 0.02, seed=7)
    check("synthetic shape", (data.n_rows, data.n_cols) == (40, 5))
    check("synthetic labels", len(labels) == 40)

    mask = grape_py.sample_mask(40, 5, 0.3, seed=11)
    observed = mask.observed_count
    check("mask rate plausible", 100 < observed < 190)

    scaled = grape_py.minmax_scale(data, mask)
    values = scaled.values()
    flat_observed = [
        values[i][j]
        for i in range(40)
        for j in range(5)
        if mask.observed()[i][j]
    ]
    check(
        "scaled observed range",
        all(0.0 <= v <= 1.0 for v in flat_observed),
    )

    region = mask.unobserved_entries()
    truth = scaled.values()

    mean_imputed = grape_py.mean_impute(scaled, mask)
    mean_mae = grape_py.mae(mean_imputed, truth, region)
    knn_imputed = grape_py.knn_impute(scaled, mask, k=10)
    knn_mae = grape_py.mae(knn_imputed, truth, region)
    check("mean baseline finite", mean_mae > 0)
    check("knn baseline finite", knn_mae > 0)

    run = grape_py.train_imputation(
        scaled,
        mask,
        epochs=600,
        hidden_dim=16,
        n_layers=2,
        seed=3,
        eval_every=200,
    )
    check("trace recorded", len(run.trace()) >= 2)
    check("test mae reported", run.test_mae is not None)
    grape_mae = grape_py.mae(run.imputed(), truth, region)
    check("imputed matches reported mae", abs(grape_mae - run.test_mae) < 1e-9)
    check(
        f"network beats mean baseline ({grape_mae:.4f} vs {mean_mae:.4f})",
        grape_mae < mean_mae,
    )

    # Determinism: identical seeds, identical runs.
    rerun = grape_py.train_imputation(
        scaled,
        mask,
        epochs=600,
        hidden_dim=16,
        n_layers=2,
        seed=3,
        eval_every=200,
    )
    check("seeded training is deterministic", rerun.imputed() == run.imputed())

    # Observed cells pass through imputation untouched.
    imputed = run.imputed()
    untouched = all(
        imputed[i][j] == truth[i][j]
        for i in range(40)
        for j in range(5)
        if mask.observed()[i][j]
    )
    check("observed cells untouched", untouched)

    print("smoke test passed")


if __name__ == "__main__":
    main()
