"""Parameter sweeps with content-addressed, resumable persistence.

Each sweep point is an independent task. Workers write one JSON file per
point named by the SHA-256 of its physics content; the final record is
merged in grid order, so thread count never changes the output bytes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import (
    DEFAULT_B_VALUES,
    UnsupportedBin,
    _missing_point,
    correlation_map,
    density_histogram,
    kl_divergence,
    participation_ratios,
    reference_histogram,
    spacing_ratios,
)
from .fock import GOLDEN_B, HamiltonianSpec, sector_dimension
from .io import dumps, read_json, write_json
from .spectroscopy import (
    DetectionParams,
    TimeGrid,
    aggregate_weights,
    match_levels,
    merged_levels,
    oracle_energies,
    oracle_overlaps,
    recover_spectrum,
)

KINDS = ("butterfly", "localization", "missing-levels", "correlations", "spectroscopy")
AXES = {
    "butterfly": "b",
    "localization": "delta_over_j",
    "missing-levels": "delta_over_j",
    "correlations": "delta_over_j",
    "spectroscopy": "delta_over_j",
}
SCHEMA = 1

DEFAULT_OPTIONS = {
    "mode": "closed_form",
    "damping": None,
    "bins": 10,
    "edge_fraction": 0.2,
    "correlations": False,
    "correlation_duration": 250.0,
    "resolution": 1.0,
    "potential": "harper",
}


class PlanError(ValueError):
    """Plan fails validation."""


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce a sweep.

    ``base`` supplies sites, hopping, interaction and hopping sign; the swept
    axis and the ensemble members fill in the potential for each point.
    """

    name: str
    kind: str
    base: HamiltonianSpec
    grid: tuple = ()
    sector: int = 1
    time_grid: TimeGrid = TimeGrid()
    detection: DetectionParams = DetectionParams()
    ensemble: tuple = ((GOLDEN_B, 0.0),)
    output: str = "results"
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanError(f"unknown experiment kind {self.kind!r}")
        g = np.asarray(self.grid, dtype=float)
        if g.size > 1 and not np.all(np.diff(g) > 0):
            raise PlanError(f"{self.axis} grid must be strictly increasing")
        if not np.all(np.isfinite(g)):
            raise PlanError("grid values must be finite")
        if self.kind != "butterfly" and np.any(g < 0):
            raise PlanError("disorder strengths must be non-negative")
        if self.kind == "butterfly" and self.base.delta < 0:
            raise PlanError("disorder strength must be non-negative")
        if not self.ensemble:
            raise PlanError("ensemble must have at least one (b, phase) member")
        unknown = set(self.options) - set(DEFAULT_OPTIONS)
        if unknown:
            raise PlanError(f"unknown options: {sorted(unknown)}")
        if self.option("potential") not in ("harper", "random"):
            raise PlanError("potential must be 'harper' or 'random'")
        if self.option("mode") not in ("closed_form", "evolution"):
            raise PlanError("mode must be 'closed_form' or 'evolution'")
        if not 0 <= self.sector <= 2:
            raise PlanError("sector must be 0, 1 or 2")
        sep = self.detection.min_separation
        if sep is not None and sep < self.time_grid.resolution * (1 - 1e-9):
            raise PlanError(f"min_separation {sep} MHz is below the resolution "
                            f"{self.time_grid.resolution:g} MHz of the time grid")

    @property
    def axis(self) -> str:
        return AXES[self.kind]

    def option(self, key: str):
        return self.options.get(key, DEFAULT_OPTIONS[key])

    def to_dict(self, include_output: bool = True) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "base": self.base.to_dict(),
            "axis": self.axis,
            "grid": [float(x) for x in self.grid],
            "sector": self.sector,
            "time_grid": {"dt": self.time_grid.dt, "duration": self.time_grid.duration},
            "detection": self.detection.to_dict(),
            "ensemble": [[float(b), float(p)] for b, p in self.ensemble],
            "output": self.output,
            "seed": self.seed,
            "options": {k: self.option(k) for k in DEFAULT_OPTIONS},
        }
        if not include_output:
            del d["output"]
        return d


@dataclass(frozen=True)
class Point:
    index: int
    member: int
    axis_value: float
    b: float
    phase: float
    delta_over_j: float
    spec: HamiltonianSpec

    def key(self) -> dict:
        return {"index": self.index, "member": self.member, "b": self.b,
                "phase": self.phase, "delta_over_j": self.delta_over_j}


def _potential(plan: ExperimentPlan, delta: float, b: float, phase: float, index: int, member: int):
    base = plan.base
    if plan.option("potential") == "random":
        rng = np.random.default_rng([plan.seed, index, member])
        mu = delta * rng.uniform(-1.0, 1.0, base.sites)
        return replace(base, potential=tuple(mu.tolist()), delta=0.0, b=0.0, phase=0.0)
    spec = replace(base, potential=None, delta=delta, b=b, phase=phase)
    return spec.expanded()


def plan_points(plan: ExperimentPlan) -> list[Point]:
    """Expand the plan into concrete points ordered by (grid index, ensemble member)."""
    J = plan.base.hopping
    out = []
    for i, x in enumerate(plan.grid):
        x = float(x)
        if plan.axis == "b":
            members = sorted({float(p) for _, p in plan.ensemble})
            dj = plan.base.delta / J if J else 0.0
            for k, ph in enumerate(members):
                spec = _potential(plan, plan.base.delta, x, ph, i, k)
                out.append(Point(i, k, x, x, ph, dj, spec))
        else:
            for k, (b, ph) in enumerate(plan.ensemble):
                spec = _potential(plan, x * J, float(b), float(ph), i, k)
                out.append(Point(i, k, x, float(b), float(ph), x, spec))
    return out


def _point_content(plan: ExperimentPlan, point: Point) -> dict:
    options = {k: plan.option(k) for k in DEFAULT_OPTIONS}
    return {
        "schema": SCHEMA,
        "kind": plan.kind,
        "spec": point.spec.to_dict(),
        "sector": plan.sector,
        "time_grid": {"dt": plan.time_grid.dt, "duration": plan.time_grid.duration},
        "detection": plan.detection.to_dict(),
        "options": options,
    }


def point_hash(plan: ExperimentPlan, point: Point) -> str:
    text = dumps(_point_content(plan, point), indent=None, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


# -- per-point computations ----------------------------------------------------

def _deviation_block(peaks, oracle) -> dict:
    detected = np.asarray(peaks.energies)
    if detected.size:
        nearest = detected[np.argmin(np.abs(oracle[:, None] - detected[None, :]), axis=1)]
    else:
        nearest = np.full(len(oracle), np.nan)
    return {
        "oracle": oracle,
        "matched": nearest,
        "deviation": nearest - oracle,
        "abs_deviation": match_levels(detected, oracle),
    }


def _pr_block(overlaps, energies) -> dict:
    pr = participation_ratios(overlaps, energies)
    return {"energies": pr.energies, "pr_space": pr.pr_space, "pr_energy": pr.pr_energy,
            "band_position": pr.band_position}


def _ratios(energies) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    return spacing_ratios(e) if len(e) >= 3 else np.array([])


def _compute_recovery(plan: ExperimentPlan, spec: HamiltonianSpec) -> dict:
    rec = recover_spectrum(spec, plan.sector, plan.time_grid, plan.detection,
                           mode=plan.option("mode"), damping=plan.option("damping"))
    oracle, weights = aggregate_weights(spec, plan.sector)
    warnings = rec.warnings + merged_levels(rec.peaks.energies, oracle, weights,
                                            plan.detection.threshold_rel)
    out = {
        "peaks": {"energies": rec.peaks.energies, "weights": rec.peaks.weights},
        "comparison": _deviation_block(rec.peaks, oracle),
        "warnings": warnings,
        "expected_levels": rec.expected_levels,
    }
    return out, rec


def _compute_point(plan: ExperimentPlan, point: Point) -> dict:
    spec = point.spec
    kind = plan.kind
    if kind == "missing-levels":
        pct, full_r, thin_r, levels = _missing_point(spec, plan.option("resolution"), plan.option("bins"))
        return {"percent_missing": pct, "full_ratios": full_r, "thinned_ratios": thin_r, "levels": levels}
    if kind == "correlations":
        grid = TimeGrid(plan.time_grid.dt, plan.option("correlation_duration"))
        cmap = correlation_map(spec, grid)
        return {"separations": cmap.separations, "values": cmap.values}
    if plan.sector == 0:
        return {
            "peaks": {"energies": [0.0], "weights": [1.0]},
            "comparison": {"oracle": [0.0], "matched": [0.0], "deviation": [0.0], "abs_deviation": [0.0]},
            "warnings": [],
            "expected_levels": 1,
        }
    out, rec = _compute_recovery(plan, spec)
    if kind == "spectroscopy":
        out["spectrum"] = {
            "frequencies": rec.average.frequencies,
            "average": rec.average.magnitudes,
            "labels": [s.label for s in rec.states],
            "per_state": [s.magnitudes for s in rec.per_state],
        }
    if kind == "localization":
        out["ratios"] = _ratios(rec.peaks.energies)
        out["oracle_ratios"] = _ratios(oracle_energies(spec, plan.sector))
        out["pr"] = _pr_block(rec.overlaps, rec.peaks.energies)
        oo = oracle_overlaps(spec, plan.sector)
        out["oracle_pr"] = _pr_block(oo, oo.energies)
        if plan.option("correlations") and plan.sector == 2:
            grid = TimeGrid(plan.time_grid.dt, plan.option("correlation_duration"))
            cmap = correlation_map(spec, grid)
            out["correlations"] = {"separations": cmap.separations, "values": cmap.values}
    return out


def _point_payload(plan: ExperimentPlan, point: Point, digest: str) -> dict:
    # Only physics content goes in the file: points with equal hashes share it.
    payload = {"hash": digest, "version": __version__, "kind": plan.kind, "spec": point.spec.to_dict()}
    try:
        payload["result"] = _compute_point(plan, point)
        payload["status"] = "ok"
    except Exception as exc:  # recorded, the sweep continues
        payload["status"] = "error"
        payload["error"] = {"type": type(exc).__name__, "message": str(exc)}
    return json.loads(dumps(payload, indent=None))


# -- aggregation -----------------------------------------------------------------

def _edge_bulk(pos, pr, fraction) -> tuple[float, float]:
    pos, pr = np.asarray(pos, dtype=float), np.asarray(pr, dtype=float)
    if pos.size == 0:
        return float("nan"), float("nan")
    edge = (pos < fraction / 2) | (pos > 1 - fraction / 2)
    e = float(np.mean(pr[edge])) if edge.any() else float("nan")
    b = float(np.mean(pr[~edge])) if (~edge).any() else float("nan")
    return e, b


def _kl_pair(ratios, bins) -> dict:
    hist, edges = density_histogram(ratios, bins)
    out = {"count": int(len(ratios)), "histogram": hist, "edges": edges}
    for name in ("goe", "poisson"):
        try:
            out[f"kl_{name}"] = kl_divergence(hist, reference_histogram(name, bins), edges)
        except UnsupportedBin:
            out[f"kl_{name}"] = float("inf")
    return out


def _summarize(plan: ExperimentPlan, points: list[dict]) -> dict:
    groups: dict[int, list[dict]] = {}
    for p in points:
        groups.setdefault(p["point"]["index"], []).append(p)
    rows, failures = [], []
    for p in points:
        if p["status"] != "ok":
            failures.append({"point": p["point"], "error": p["error"]})
    bins = plan.option("bins")
    for i in sorted(groups):
        ok = [p for p in groups[i] if p["status"] == "ok"]
        row = {"index": i, plan.axis: float(plan.grid[i]), "members": len(groups[i]), "ok": len(ok)}
        res = [p["result"] for p in ok]
        if plan.kind in ("butterfly", "spectroscopy") and res:
            row["peak_counts"] = [len(r["peaks"]["energies"]) for r in res]
            row["oracle"] = res[0]["comparison"]["oracle"]
            row["matched"] = res[0]["comparison"]["matched"]
            row["deviation"] = res[0]["comparison"]["deviation"]
            absdev = np.concatenate([r["comparison"]["abs_deviation"] for r in res])
            row["mean_abs_deviation"] = float(np.mean(absdev))
            row["max_abs_deviation"] = float(np.max(absdev))
            row["warnings"] = [w for r in res for w in r["warnings"]]
        elif plan.kind == "localization" and res:
            row["peak_counts"] = [len(r["peaks"]["energies"]) for r in res]
            row["warnings"] = [w for r in res for w in r["warnings"]]
            absdev = np.concatenate([r["comparison"]["abs_deviation"] for r in res])
            row["max_abs_deviation"] = float(np.max(absdev))
            row["statistics"] = _kl_pair(np.concatenate([r["ratios"] for r in res]), bins)
            row["oracle_statistics"] = _kl_pair(np.concatenate([r["oracle_ratios"] for r in res]), bins)
            for key in ("pr", "oracle_pr"):
                pos = np.concatenate([r[key]["band_position"] for r in res])
                pr = np.concatenate([r[key]["pr_space"] for r in res])
                edge, bulk = _edge_bulk(pos, pr, plan.option("edge_fraction"))
                row[key] = {"mean_pr_space": float(np.mean(pr)), "edge": edge, "bulk": bulk,
                            "mean_pr_energy": float(np.mean(np.concatenate([r[key]["pr_energy"] for r in res])))}
            if all("correlations" in r for r in res):
                row["correlations"] = np.mean([r["correlations"]["values"] for r in res], axis=0)
        elif plan.kind == "missing-levels" and res:
            row["percent_missing"] = float(np.mean([r["percent_missing"] for r in res]))
            row["levels"] = res[0]["levels"]
            full_h, edges = density_histogram(np.concatenate([r["full_ratios"] for r in res]), bins)
            thin_h, _ = density_histogram(np.concatenate([r["thinned_ratios"] for r in res]), bins)
            try:
                row["kl"] = kl_divergence(thin_h, full_h, edges)
            except UnsupportedBin:
                row["kl"] = float("inf")
        elif plan.kind == "correlations" and res:
            row["separations"] = res[0]["separations"]
            row["values"] = np.mean([r["values"] for r in res], axis=0)
        rows.append(row)
    summary = {"plan": plan.to_dict(include_output=False), "rows": rows, "failures": failures}
    if plan.kind == "butterfly":
        devs = [r["mean_abs_deviation"] for r in rows if "mean_abs_deviation" in r]
        summary["mean_abs_deviation"] = float(np.mean(devs)) if devs else float("nan")
    return json.loads(dumps(summary, indent=None))


# -- running -----------------------------------------------------------------------

@dataclass
class RunRecord:
    """Merged outcome of a sweep. ``wall_clock`` is kept out of the result files."""

    plan: ExperimentPlan
    points: list[dict]
    summary: dict
    hashes: list[str]
    wall_clock: float
    version: str
    computed: int
    reused: int
    directory: Path | None = None

    @property
    def failures(self) -> list[dict]:
        return self.summary["failures"]


def _load_cached(path: Path, digest: str):
    if not path.exists():
        return None
    try:
        payload = read_json(path)
    except (OSError, ValueError):
        return None
    if payload.get("hash") != digest or payload.get("status") != "ok":
        return None
    return payload


def _update_manifest(out: Path, plan: ExperimentPlan, hashes: list[str], points: list[dict]):
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = read_json(path)
        except (OSError, ValueError):
            manifest = {}
    plans = manifest.get("plans", {})
    plans[plan.name] = {
        "plan": plan.to_dict(include_output=False),
        "points": [{"hash": h, "point": p["point"], "status": p["status"]} for h, p in zip(hashes, points)],
        "complete": all(p["status"] == "ok" for p in points),
    }
    write_json(path, {"version": __version__, "plans": {k: plans[k] for k in sorted(plans)}})


def run_plan(plan: ExperimentPlan, threads: int = 1, out: str | Path | None = None) -> RunRecord:
    """Execute every point of ``plan``.

    Results go under ``out`` (default ``plan.output``); stored points with a
    matching hash are reused. ``out=False`` keeps everything in memory.
    """
    start = time.perf_counter()
    points = plan_points(plan)
    hashes = [point_hash(plan, p) for p in points]
    root = Path(out if out is not None else plan.output) if out is not False else None
    folder = root / plan.name if root is not None else None
    counts = {"computed": 0, "reused": 0}

    def task(args):
        point, digest = args
        path = folder / f"{digest}.json" if folder is not None else None
        cached = _load_cached(path, digest) if path is not None else None
        if cached is not None:
            return cached, False
        payload = _point_payload(plan, point, digest)
        if path is not None:
            write_json(path, payload)
        return payload, True

    if folder is not None:
        folder.mkdir(parents=True, exist_ok=True)
    unique: dict[str, Point] = {}
    for p, h in zip(points, hashes):
        unique.setdefault(h, p)
    jobs = [(p, h) for h, p in unique.items()]
    with threadpool_limits(limits=1):
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(task, jobs))
        else:
            results = [task(j) for j in jobs]
    by_hash = {h: r[0] for (_, h), r in zip(jobs, results)}
    payloads = [{**by_hash[h], "point": p.key()} for p, h in zip(points, hashes)]
    counts["computed"] = sum(r[1] for r in results)
    counts["reused"] = len(results) - counts["computed"]
    summary = _summarize(plan, payloads)
    elapsed = time.perf_counter() - start
    if folder is not None:
        write_json(folder / "summary.json", summary)
        write_json(folder / "timing.json", {"wall_clock_s": elapsed, **counts})
        _update_manifest(root, plan, hashes, payloads)
    return RunRecord(plan, payloads, summary, hashes, elapsed, __version__,
                     counts["computed"], counts["reused"], folder)


def _require(plan: ExperimentPlan, kind: str):
    if plan.kind != kind:
        raise PlanError(f"expected a {kind} plan, got {plan.kind}")


def run_butterfly(plan: ExperimentPlan, threads: int = 1, out=None) -> RunRecord:
    _require(plan, "butterfly")
    if plan.sector != 1:
        raise PlanError("butterfly sweeps use the one-photon sector")
    return run_plan(plan, threads, out)


def run_localization_suite(plan: ExperimentPlan, threads: int = 1, out=None) -> RunRecord:
    _require(plan, "localization")
    return run_plan(plan, threads, out)


def run_missing_levels(plan: ExperimentPlan, threads: int = 1, out=None) -> RunRecord:
    _require(plan, "missing-levels")
    if plan.sector != 2:
        raise PlanError("missing-level studies use the two-photon sector")
    return run_plan(plan, threads, out)


def run_correlations(plan: ExperimentPlan, threads: int = 1, out=None) -> RunRecord:
    _require(plan, "correlations")
    return run_plan(plan, threads, out)


def run_spectroscopy(plan: ExperimentPlan, threads: int = 1, out=None) -> RunRecord:
    _require(plan, "spectroscopy")
    return run_plan(plan, threads, out)


RUNNERS = {
    "butterfly": run_butterfly,
    "localization": run_localization_suite,
    "missing-levels": run_missing_levels,
    "correlations": run_correlations,
    "spectroscopy": run_spectroscopy,
}


def butterfly_plan(name: str = "butterfly", points: int = 100, sites: int = 9, hopping: float = 50.0,
                   delta: float = 50.0, **kw) -> ExperimentPlan:
    """b evenly spaced on [0, 1] at fixed potential strength."""
    base = HamiltonianSpec(sites, hopping, delta=delta)
    grid = tuple(np.linspace(0.0, 1.0, points).tolist())
    return ExperimentPlan(name, "butterfly", base, grid, sector=1, ensemble=((0.0, 0.0),), **kw)


def default_ensemble(b_values=DEFAULT_B_VALUES, phases=(0.0,)) -> tuple:
    return tuple((float(b), float(p)) for b, p in itertools.product(b_values, phases))


def localization_plan(name: str = "localization", grid=None, sites: int = 9, hopping: float = 50.0,
                      interaction: float = 175.0, **kw) -> ExperimentPlan:
    """Two-photon sweep over Delta/J; 21 points spanning 0 to 300 MHz by default."""
    if grid is None:
        grid = tuple((np.linspace(0.0, 300.0, 21) / hopping).tolist())
    kw.setdefault("ensemble", default_ensemble())
    base = HamiltonianSpec(sites, hopping, interaction)
    return ExperimentPlan(name, "localization", base, tuple(grid), sector=2, **kw)


def expected_levels(plan: ExperimentPlan) -> int:
    return sector_dimension(plan.base.sites, plan.sector) if plan.sector else 1


__all__ = [
    "ExperimentPlan", "RunRecord", "PlanError", "Point", "plan_points", "point_hash", "run_plan",
    "run_butterfly", "run_localization_suite", "run_missing_levels", "run_correlations",
    "run_spectroscopy", "RUNNERS", "KINDS", "DEFAULT_OPTIONS", "butterfly_plan",
    "localization_plan", "default_ensemble",
]
