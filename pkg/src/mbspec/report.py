"""Tables and figures for a finished sweep."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import plotting
from .io import write_csv, write_histogram
from .sweep import RunRecord


def _none(x):
    return float("nan") if x is None else x


def _butterfly_tables(summary, out: Path) -> list[Path]:
    rows = [r for r in summary["rows"] if "matched" in r]
    n = max((len(r["oracle"]) for r in rows), default=0)
    header = ["b", "peaks"] + [f"E{i}" for i in range(1, n + 1)] + [f"dev{i}" for i in range(1, n + 1)]
    body = [[r["b"], r["peak_counts"][0]] + [_none(x) for x in r["matched"]] + [_none(x) for x in r["deviation"]]
            for r in rows]
    return [write_csv(out / "butterfly.csv", header, body)]


def _localization_tables(summary, out: Path) -> list[Path]:
    header = ["delta_over_j", "mean_peaks", "kl_goe", "kl_poisson", "oracle_kl_goe", "oracle_kl_poisson",
              "mean_pr_space", "pr_edge", "pr_bulk", "oracle_pr_edge", "oracle_pr_bulk",
              "max_abs_deviation", "warnings"]
    body, paths = [], []
    for r in summary["rows"]:
        if "statistics" not in r:
            continue
        st, ost, pr, opr = r["statistics"], r["oracle_statistics"], r["pr"], r["oracle_pr"]
        body.append([r["delta_over_j"], float(np.mean(r["peak_counts"])), _none(st["kl_goe"]),
                     _none(st["kl_poisson"]), _none(ost["kl_goe"]), _none(ost["kl_poisson"]),
                     pr["mean_pr_space"], _none(pr["edge"]), _none(pr["bulk"]), _none(opr["edge"]),
                     _none(opr["bulk"]), r["max_abs_deviation"], len(r["warnings"])])
        paths.append(write_histogram(out / "histograms" / f"r_{r['index']:03d}.txt", st["edges"],
                                     st["histogram"], {"delta_over_j": r["delta_over_j"],
                                                       "count": st["count"]}))
    paths.insert(0, write_csv(out / "localization.csv", header, body))
    corr = [r for r in summary["rows"] if "correlations" in r]
    if corr:
        paths += _correlation_table([{**r, "values": r["correlations"]} for r in corr], out)
    return paths


def _correlation_table(rows, out: Path) -> list[Path]:
    n = max((len(r["values"]) for r in rows), default=0)
    header = ["delta_over_j"] + [f"S{d}" for d in range(1, n + 1)]
    return [write_csv(out / "correlations.csv", header, [[r["delta_over_j"]] + list(r["values"]) for r in rows])]


def _missing_tables(summary, out: Path) -> list[Path]:
    rows = [r for r in summary["rows"] if "percent_missing" in r]
    body = [[r["delta_over_j"], r["percent_missing"], _none(r["kl"]), r["levels"]] for r in rows]
    return [write_csv(out / "missing_levels.csv", ["delta_over_j", "percent_missing", "kl", "levels"], body)]


def write_artifacts(record: RunRecord, out=None, plots: bool = True) -> list[Path]:
    """Write CSV tables and, when ``plots`` is set, SVG figures for ``record``."""
    out = Path(out) if out is not None else record.directory
    if out is None:
        raise ValueError("record has no output directory")
    summary, kind = record.summary, record.plan.kind
    tables, figures = out / "tables", out / "figures"
    paths: list[Path] = []
    if kind == "butterfly":
        paths += _butterfly_tables(summary, tables)
        if plots:
            paths.append(plotting.butterfly_figure(summary, figures / "butterfly.svg"))
    elif kind == "localization":
        paths += _localization_tables(summary, tables)
        if plots:
            paths.append(plotting.r_histogram_figure(summary, figures / "r_histograms.svg"))
            paths.append(plotting.pr_heatmaps(record.points, figures / "pr_heatmaps.svg"))
            if any("correlations" in r for r in summary["rows"]):
                rows = [{**r, "values": r["correlations"]} for r in summary["rows"] if "correlations" in r]
                paths.append(plotting.correlation_heatmap({"rows": rows}, figures / "correlations.svg"))
    elif kind == "missing-levels":
        paths += _missing_tables(summary, tables)
        if plots:
            paths.append(plotting.missing_level_figure(summary, figures / "missing_levels.svg"))
    elif kind == "correlations":
        rows = [r for r in summary["rows"] if "values" in r]
        paths += _correlation_table(rows, tables)
        if plots:
            paths.append(plotting.correlation_heatmap(summary, figures / "correlations.svg"))
    elif kind == "spectroscopy":
        for p in record.points:
            if p["status"] != "ok":
                continue
            tag = f"{p['point']['index']:03d}_{p['point']['member']:02d}"
            res = p["result"]
            paths.append(write_csv(tables / f"peaks_{tag}.csv", ["energy_mhz", "weight"],
                                   list(zip(res["peaks"]["energies"], res["peaks"]["weights"]))))
            if plots and "spectrum" in res:
                paths.append(plotting.ft_panels(res["spectrum"], res["peaks"], figures / f"ft_{tag}.svg"))
    return paths
