import json

import numpy as np
import pytest

from mbspec.analysis import correlation_map, missing_level_study, r_statistics
from mbspec.fock import GOLDEN_B, HamiltonianSpec
from mbspec.spectroscopy import TimeGrid, recover_spectrum
from mbspec.sweep import (
    ExperimentPlan,
    PlanError,
    butterfly_plan,
    localization_plan,
    plan_points,
    point_hash,
    run_butterfly,
    run_correlations,
    run_localization_suite,
    run_missing_levels,
    run_plan,
)


def files(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file() and p.name != "timing.json"}


def test_plan_validation():
    base = HamiltonianSpec(9, 50.0)
    with pytest.raises(PlanError):
        ExperimentPlan("x", "nope", base)
    with pytest.raises(PlanError):
        ExperimentPlan("x", "localization", base, (1.0, 0.5))
    with pytest.raises(PlanError):
        ExperimentPlan("x", "localization", base, (1.0,), options={"colour": 1})
    with pytest.raises(PlanError):
        ExperimentPlan("x", "localization", base, (1.0,), ensemble=())
    with pytest.raises(PlanError):
        run_butterfly(localization_plan(grid=(1.0,)), out=False)


def test_points_and_hash():
    plan = localization_plan(grid=(0.5, 1.0))
    pts = plan_points(plan)
    assert len(pts) == 8
    assert [(p.index, p.member) for p in pts[:5]] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]
    assert pts[0].spec.potential is not None
    hashes = [point_hash(plan, p) for p in pts]
    assert len(set(hashes)) == 8
    # the hash follows the expanded potential, not the recipe that produced it
    explicit = ExperimentPlan("y", "localization", plan.base, (0.5,), sector=plan.sector,
                              ensemble=plan.ensemble[:1])
    assert point_hash(explicit, plan_points(explicit)[0]) == hashes[0]


def test_random_potential_seeded():
    a = localization_plan(grid=(2.0,), options={"potential": "random"}, seed=5)
    b = localization_plan(grid=(2.0,), options={"potential": "random"}, seed=5)
    c = localization_plan(grid=(2.0,), options={"potential": "random"}, seed=6)
    pa, pb, pc = (plan_points(x)[0].spec.onsite() for x in (a, b, c))
    assert np.array_equal(pa, pb) and not np.array_equal(pa, pc)
    assert np.all(np.abs(pa) <= 100.0)


def test_butterfly_examples():
    plan = butterfly_plan(points=3)
    rec = run_butterfly(plan, out=False)
    rows = rec.summary["rows"]
    k = np.arange(1, 10)
    assert np.allclose(rows[0]["oracle"], np.sort(50.0 + 100.0 * np.cos(k * np.pi / 10)))
    half = np.array(rows[1]["oracle"])
    assert rows[1]["b"] == 0.5
    # alternating potential on an odd chain: one level pinned at -delta, the rest in +- pairs
    paired = np.delete(half, np.argmin(np.abs(half + 50.0)))
    assert np.isclose(half, -50.0).sum() == 1
    assert np.allclose(paired, -paired[::-1])
    assert all(r["peak_counts"] == [9] for r in rows)
    assert rec.summary["mean_abs_deviation"] < 0.5


def test_transparency_single_point():
    base = HamiltonianSpec(9, 50.0, 175.0)
    plan = ExperimentPlan("one", "localization", base, (1.0,), sector=2, ensemble=((GOLDEN_B, 0.0),))
    rec = run_localization_suite(plan, out=False)
    direct = recover_spectrum(HamiltonianSpec.harper(9, 50.0, 50.0, GOLDEN_B, interaction=175.0), 2)
    res = rec.points[0]["result"]
    assert np.array_equal(np.array(res["peaks"]["energies"]), direct.peaks.energies)
    assert np.array_equal(np.array(res["ratios"]), r_statistics(direct.peaks.energies).ratios)


def test_missing_levels_matches_study():
    base = HamiltonianSpec(10, 50.0, 175.0)
    phases = (0.0, 1.0)
    plan = ExperimentPlan("ml", "missing-levels", base, (0.0, 2.0), sector=2,
                          ensemble=tuple((GOLDEN_B, p) for p in phases))
    rec = run_missing_levels(plan, out=False)
    study = missing_level_study([0.0, 2.0], sites=10, phases=phases)
    assert [r["percent_missing"] for r in rec.summary["rows"]] == study.percent_missing.tolist()
    assert [r["kl"] for r in rec.summary["rows"]] == study.kl.tolist()


def test_missing_levels_empty_grid(tmp_path):
    plan = ExperimentPlan("empty", "missing-levels", HamiltonianSpec(18, 50.0, 175.0), (), sector=2)
    rec = run_missing_levels(plan, out=tmp_path)
    assert rec.points == [] and rec.summary["rows"] == []
    assert json.loads((tmp_path / "manifest.json").read_text())["plans"]["empty"]["complete"]


def test_correlation_sweep_matches_direct():
    plan = ExperimentPlan("c", "correlations", HamiltonianSpec(5, 50.0, 175.0), (2.0,), sector=2,
                          options={"correlation_duration": 50.0})
    rec = run_correlations(plan, out=False)
    direct = correlation_map(HamiltonianSpec.harper(5, 50.0, 100.0, GOLDEN_B, interaction=175.0),
                             TimeGrid(0.5, 50.0))
    assert np.array_equal(np.array(rec.summary["rows"][0]["values"]), direct.values)


def test_thread_equivalence_and_layout(tmp_path):
    plan = localization_plan(grid=(1.0, 5.0), options={"correlations": True, "correlation_duration": 50.0})
    a = run_plan(plan, threads=1, out=tmp_path / "a")
    b = run_plan(plan, threads=4, out=tmp_path / "b")
    assert a.summary == b.summary
    assert files(tmp_path / "a") == files(tmp_path / "b")
    folder = tmp_path / "a" / plan.name
    assert {f"{h}.json" for h in a.hashes} <= {p.name for p in folder.iterdir()}
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    entry = manifest["plans"][plan.name]
    assert entry["complete"] and len(entry["points"]) == 8
    assert "wall_clock_s" in json.loads((folder / "timing.json").read_text())


def test_resumability(tmp_path):
    plan = butterfly_plan(points=6)
    first = run_butterfly(plan, out=tmp_path)
    assert first.computed == 5 and first.reused == 0  # b = 0 and b = 1 share a potential
    before = files(tmp_path)
    (first.directory / f"{first.hashes[2]}.json").unlink()
    again = run_butterfly(plan, threads=2, out=tmp_path)
    assert again.computed == 1 and again.reused == 4
    assert files(tmp_path) == before


def test_failures_recorded():
    base = HamiltonianSpec(9, 50.0, 175.0)
    plan = ExperimentPlan("f", "spectroscopy", base, (1.0,), sector=2,
                          time_grid=TimeGrid(0.5, 0.5))
    rec = run_plan(plan, out=False)
    assert rec.points[0]["status"] == "error"
    assert rec.failures and rec.failures[0]["error"]["type"]


def test_sector_zero_point():
    plan = ExperimentPlan("v", "spectroscopy", HamiltonianSpec(9, 50.0), (1.0,), sector=0)
    row = run_plan(plan, out=False).summary["rows"][0]
    assert row["oracle"] == [0.0] and row["max_abs_deviation"] == 0.0
