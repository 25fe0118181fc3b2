"""SVG figures rendered from sweep records.

Figures are built on bare ``Figure`` objects (no pyplot state) and saved with
a fixed hash salt and no date stamp, so identical records give identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .analysis import pd_goe, pd_poisson  # noqa: E402

RC = {"svg.hashsalt": "mbspec", "svg.fonttype": "path", "font.size": 9}


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def _figure(w=6.0, h=4.0, **kw) -> Figure:
    with matplotlib.rc_context(RC):
        return Figure(figsize=(w, h), layout="constrained", **kw)


def _edges(centers) -> np.ndarray:
    c = np.asarray(centers, dtype=float)
    if c.size == 1:
        return np.array([c[0] - 0.5, c[0] + 0.5])
    mid = (c[1:] + c[:-1]) / 2
    return np.concatenate([[2 * c[0] - mid[0]], mid, [2 * c[-1] - mid[-1]]])


def butterfly_figure(summary: dict, path) -> Path:
    """Recovered levels against b, coloured by distance to the oracle."""
    rows = [r for r in summary["rows"] if "matched" in r]
    fig = _figure(5.5, 4.5)
    ax = fig.add_subplot()
    if rows:
        b = np.concatenate([[r["b"]] * len(r["oracle"]) for r in rows])
        oracle = np.concatenate([r["oracle"] for r in rows])
        matched = np.concatenate([r["matched"] for r in rows]).astype(float)
        dev = np.abs(np.concatenate([r["deviation"] for r in rows]).astype(float))
        ax.scatter(oracle, b, s=14, marker="|", color="0.6", linewidths=0.8, label="oracle")
        sc = ax.scatter(matched, b, c=dev, s=5, cmap="viridis", label="recovered")
        fig.colorbar(sc, ax=ax, label="|recovered - oracle| (MHz)")
        ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("energy (MHz)")
    ax.set_ylabel("b")
    return save_svg(fig, path)


def r_histogram_figure(summary: dict, path, key: str = "statistics") -> Path:
    """Pooled r-histograms per disorder strength with GOE and Poisson densities."""
    rows = [r for r in summary["rows"] if key in r]
    n = max(len(rows), 1)
    cols = min(4, n)
    nrows = -(-n // cols)
    fig = _figure(2.4 * cols, 2.0 * nrows)
    axes = fig.subplots(nrows, cols, squeeze=False, sharex=True, sharey=True)
    r = np.linspace(0, 1, 201)
    for ax, row in zip(axes.flat, rows):
        st = row[key]
        edges = np.asarray(st["edges"], dtype=float)
        ax.stairs(np.asarray(st["histogram"], dtype=float), edges, fill=True, color="C0", alpha=0.6)
        ax.plot(r, pd_goe(r), "k--", lw=0.8)
        ax.plot(r, pd_poisson(r), "k:", lw=0.8)
        ax.set_title(f"Delta/J = {row['delta_over_j']:.3g}", fontsize=8)
    for ax in axes.flat[len(rows):]:
        ax.set_visible(False)
    for ax in axes[-1]:
        ax.set_xlabel("r")
    for ax in axes[:, 0]:
        ax.set_ylabel("density")
    return save_svg(fig, path)


def pr_heatmaps(points: list[dict], path, band_bins: int = 15, key: str = "pr") -> Path:
    """PR_space versus disorder and band position; PR_energy versus disorder and site."""
    ok = [p for p in points if p["status"] == "ok" and key in p["result"]]
    deltas = sorted({p["point"]["delta_over_j"] for p in ok})
    fig = _figure(9.0, 3.6)
    ax1, ax2 = fig.subplots(1, 2)
    if deltas:
        edges = np.linspace(0, 1, band_bins + 1)
        space = np.full((band_bins, len(deltas)), np.nan)
        sites = len(ok[0]["result"][key]["pr_energy"])
        energy = np.zeros((sites, len(deltas)))
        for j, d in enumerate(deltas):
            group = [p["result"][key] for p in ok if p["point"]["delta_over_j"] == d]
            pos = np.concatenate([g["band_position"] for g in group]).astype(float)
            pr = np.concatenate([g["pr_space"] for g in group]).astype(float)
            idx = np.clip(np.digitize(pos, edges) - 1, 0, band_bins - 1)
            for k in range(band_bins):
                if np.any(idx == k):
                    space[k, j] = pr[idx == k].mean()
            energy[:, j] = np.mean([g["pr_energy"] for g in group], axis=0)
        m1 = ax1.pcolormesh(_edges(deltas), edges, space, cmap="magma", shading="flat")
        fig.colorbar(m1, ax=ax1, label="PR_space")
        m2 = ax2.pcolormesh(_edges(deltas), np.arange(sites + 1) + 0.5, energy, cmap="magma", shading="flat")
        fig.colorbar(m2, ax=ax2, label="PR_energy")
    ax1.set_xlabel("Delta/J")
    ax1.set_ylabel("band position")
    ax2.set_xlabel("Delta/J")
    ax2.set_ylabel("site")
    return save_svg(fig, path)


def correlation_heatmap(summary: dict, path) -> Path:
    """Averaged correlations versus disorder and site separation."""
    rows = [r for r in summary["rows"] if "values" in r or "correlations" in r]
    fig = _figure(5.0, 3.6)
    ax = fig.add_subplot()
    if rows:
        data = np.array([r.get("values", r.get("correlations")) for r in rows], dtype=float)
        deltas = [r["delta_over_j"] for r in rows]
        seps = np.arange(1, data.shape[1] + 1)
        mesh = ax.pcolormesh(_edges(deltas), _edges(seps), data.T, cmap="viridis", shading="flat")
        fig.colorbar(mesh, ax=ax, label="S (time, Pauli and pair averaged)")
    ax.set_xlabel("Delta/J")
    ax.set_ylabel("|m - n|")
    return save_svg(fig, path)


def ft_panels(spectrum: dict, peaks: dict, path, margin: float = 30.0) -> Path:
    """Per-state |FT| as a heat map above the state-averaged |FT| with detected peaks."""
    f = np.asarray(spectrum["frequencies"], dtype=float)
    avg = np.asarray(spectrum["average"], dtype=float)
    per = np.asarray(spectrum["per_state"], dtype=float)
    e = np.asarray(peaks["energies"], dtype=float)
    lo, hi = (e.min() - margin, e.max() + margin) if e.size else (f[0], f[-1])
    sel = (f >= lo) & (f <= hi)
    fig = _figure(6.0, 5.0)
    ax1, ax2 = fig.subplots(2, 1, sharex=True, height_ratios=[2, 1])
    mesh = ax1.pcolormesh(_edges(f[sel]), np.arange(len(per) + 1), per[:, sel], cmap="Blues", shading="flat")
    fig.colorbar(mesh, ax=ax1, label="|FT|")
    labels = spectrum.get("labels", [])
    if len(labels) <= 12:
        ax1.set_yticks(np.arange(len(labels)) + 0.5, labels, fontsize=6)
    ax1.set_ylabel("initial state")
    ax2.plot(f[sel], avg[sel], lw=0.8, color="C0")
    ax2.plot(e, np.interp(e, f, avg), "x", color="C3", ms=4)
    ax2.set_xlabel("frequency (MHz)")
    ax2.set_ylabel("mean |FT|")
    return save_svg(fig, path)


def missing_level_figure(summary: dict, path) -> Path:
    rows = [r for r in summary["rows"] if "percent_missing" in r]
    fig = _figure(5.0, 4.5)
    ax1, ax2 = fig.subplots(2, 1, sharex=True)
    if rows:
        d = [r["delta_over_j"] for r in rows]
        ax1.plot(d, [r["percent_missing"] for r in rows], "o-", ms=3)
        kl = np.array([np.nan if r["kl"] is None else r["kl"] for r in rows], dtype=float)
        ax2.plot(d, kl, "s-", ms=3, color="C1")
    ax1.set_ylabel("missing levels (%)")
    ax2.set_ylabel("KL(thinned || full)")
    ax2.set_xlabel("Delta/J")
    return save_svg(fig, path)
