import json
import math

import numpy as np
import pytest

from lipbench.datasets import LabeledDataset
from lipbench.experiments import (CSV_HEADER, ExperimentRecord, IntrinsicDimError, ScalingPlan,
                                  estimate_intrinsic_dim, nn_distance_profile, plan_with, read_rows_csv,
                                  run_compute_scaling, run_scaling, summarize_records, svg_line_chart,
                                  write_rows_csv, write_summary_json)
from lipbench.numerics import RandomSource


def test_epochs_for_scaling():
    plan = ScalingPlan(sizes=(512, 2048, 8192), base_epochs=40)
    assert [plan.epochs_for(n) for n in plan.sizes] == [640, 160, 40]
    assert plan_with(plan, epoch_scaling=False).epochs_for(512) == 40
    # every size gets the same number of optimizer steps
    steps = {math.ceil(n / plan.batch_size) * plan.epochs_for(n) for n in plan.sizes}
    assert steps == {1280}


def test_plan_validation():
    with pytest.raises(ValueError):
        ScalingPlan(sizes=(2048, 512))
    with pytest.raises(ValueError):
        ScalingPlan(sizes=())
    with pytest.raises(ValueError):
        ScalingPlan(base_epochs=0)


def test_csv_format(tmp_path):
    rows = [ExperimentRecord("scale", 512, 0, 0.5, 1 / 3, 1.0, 0.25, 12.3),
            ExperimentRecord("scale", 2048, 1, float("nan"), float("nan"), float("nan"), float("nan"), 1.0,
                             status="diverged")]
    write_rows_csv(tmp_path / "a.csv", rows)
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1] == "scale,512,0,0.500000,0.333333,1.000000,0.250000,0.000000"
    assert lines[2].startswith("scale,2048,1,nan")
    back = read_rows_csv(tmp_path / "a.csv")
    assert back[0].cra == pytest.approx(0.333333)
    write_rows_csv(tmp_path / "b.csv", rows, timing=True)
    assert (tmp_path / "b.csv").read_text().splitlines()[1].endswith(",12.300000")


def test_summary_json_handles_nan(tmp_path):
    write_summary_json(tmp_path / "s.json", {"x": float("nan"), "arr": np.arange(3)})
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["x"] is None and doc["arr"] == [0, 1, 2]
    assert "environment" in doc and "finished_at" in doc


def test_summarize_excludes_diverged():
    rows = [ExperimentRecord("s", 10, 0, 0.5, 0.4, 1, 1, 0), ExperimentRecord("s", 10, 1, 0.7, 0.6, 1, 1, 0),
            ExperimentRecord("s", 10, 2, math.nan, math.nan, math.nan, math.nan, 0, status="diverged")]
    agg = summarize_records(rows)["10"]
    assert agg["runs"] == 3 and agg["ok"] == 2 and agg["cra"] == pytest.approx(0.5)


def test_exact_power_law_gives_dimension_four():
    profile = [(n, n ** -0.25) for n in (100, 400, 1600, 6400, 25600)]
    assert abs(estimate_intrinsic_dim(profile) - 4.0) <= 1e-9


def test_intrinsic_dim_errors():
    with pytest.raises(IntrinsicDimError):
        estimate_intrinsic_dim([(1, 1.0), (2, 0.5)])
    with pytest.raises(IntrinsicDimError):
        estimate_intrinsic_dim([(1, 1.0), (2, 1.0), (4, 1.0)])
    with pytest.raises(IntrinsicDimError):
        estimate_intrinsic_dim([(1, 1.0), (2, 0.0), (4, 0.5)])


def uniform_ds(rng, n, d):
    return LabeledDataset(rng.random((n, d)), np.zeros(n, np.int64), (), 1)


def test_uniform_cube_dimension_within_30_percent():
    rng = RandomSource(0)
    train, test = uniform_ds(rng.split("tr"), 16000, 8), uniform_ds(rng.split("te"), 1000, 8)
    profile = nn_distance_profile(train, test, (500, 1000, 2000, 4000, 8000, 16000))
    assert abs(estimate_intrinsic_dim(profile) - 8) <= 0.3 * 8


@pytest.mark.parametrize("metric", ["l2", "linf", "angular"])
def test_profile_is_monotone(metric):
    rng = RandomSource(1)
    train, test = uniform_ds(rng.split("tr"), 4000, 3), uniform_ds(rng.split("te"), 300, 3)
    profile = nn_distance_profile(train, test, (250, 1000, 4000), metric=metric)
    r = [v for _, v in profile]
    assert r[0] >= r[1] >= r[2] > 0


def test_profile_rejects_bad_input():
    rng = RandomSource(2)
    ds = uniform_ds(rng, 10, 2)
    with pytest.raises(ValueError):
        nn_distance_profile(ds, ds, (5, 20))
    with pytest.raises(ValueError):
        nn_distance_profile(ds, ds, (5, 10), metric="cosine")


def blobs(seed, n):
    rng = RandomSource(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 4)) * 0.3
    X[:, 0] += np.where(y == 1, 1.0, -1.0)
    return LabeledDataset(X, y, (), 2)


def test_run_scaling_small_and_deterministic():
    plan = ScalingPlan(dataset="toy", sizes=(32, 64), base_epochs=4, width=8, depth=3, batch_size=16,
                       seeds=(0, 1))
    tr, te = blobs(0, 200), blobs(1, 100)
    a = run_scaling(plan, tr, te)
    b = run_scaling(plan, tr, te)
    assert [(r.n, r.seed, r.epochs) for r in a] == [(32, 0, 8), (32, 1, 8), (64, 0, 4), (64, 1, 4)]
    assert [(r.cra, r.clean_acc, r.train_cra) for r in a] == [(r.cra, r.clean_acc, r.train_cra) for r in b]
    assert all(0 <= r.cra <= r.clean_acc <= 1 for r in a)
    with pytest.raises(ValueError):
        run_scaling(plan_with(plan, sizes=(64, 500)), tr, te)


def test_divergence_becomes_nan_row():
    plan = ScalingPlan(dataset="toy", sizes=(32,), base_epochs=2, width=8, depth=3, batch_size=16,
                       kind="standard", init="uniform", peak_lr=1e200)
    with np.errstate(all="ignore"):
        rows = run_scaling(plan, blobs(0, 64), blobs(1, 32))
    assert rows[0].status == "diverged" and math.isnan(rows[0].cra)


def test_compute_scaling_ids():
    plan = ScalingPlan(dataset="toy", sizes=(32,), width=8, depth=3, batch_size=16)
    rows = run_compute_scaling(plan, blobs(0, 64), blobs(1, 32), 32, (1, 3))
    assert [r.experiment for r in rows] == ["scale-e1", "scale-e3"]
    assert [r.epochs for r in rows] == [1, 3]


def test_svg_chart(tmp_path):
    svg_line_chart(tmp_path / "p.svg", {"a": [(10, 0.1), (100, 0.5)], "b": [(10, math.nan)]})
    text = (tmp_path / "p.svg").read_text()
    assert text.startswith("<svg") and "</svg>" in text
