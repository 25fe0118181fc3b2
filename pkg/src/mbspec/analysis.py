"""Observables computed from recovered or oracle spectra."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .fock import GOLDEN_B, HamiltonianSpec, TruncatedSpace, evolve
from .spectroscopy import (
    InitialStateSpec,
    OverlapMatrix,
    TimeGrid,
    _space,
    aggregate_weights,
)

DEGENERACY_TOL = 1e-9
DEFAULT_B_VALUES = (GOLDEN_B, np.sqrt(2.0) - 1.0, np.pi - 3.0, np.e - 2.0)


class DegenerateLevels(ValueError):
    pass


class UnsupportedBin(ValueError):
    pass


# -- participation ratios -----------------------------------------------------

@dataclass(frozen=True)
class ParticipationResult:
    energies: np.ndarray
    pr_space: np.ndarray
    pr_energy: np.ndarray
    band_position: np.ndarray


def participation_ratio(p) -> float:
    p = np.asarray(p, dtype=float)
    return float(1.0 / np.sum(p ** 2))


def band_position(energies) -> np.ndarray:
    E = np.asarray(energies, dtype=float)
    width = E.max() - E.min()
    if width == 0:
        return np.zeros_like(E)
    return (E - E.min()) / width


def participation_ratios(P: OverlapMatrix, energies=None, tol: float = 1e-3) -> ParticipationResult:
    """PR over sites for each eigenstate and PR over eigenstates for each site.

    Rows of the result's space axis are sorted by energy; the energy axis is
    ordered by site.
    """
    vals = np.asarray(P.values, dtype=float)
    K, N = vals.shape
    if np.max(np.abs(vals.sum(axis=1) - 1)) > tol or np.max(np.abs(vals.sum(axis=0) - K / N)) > tol:
        raise ValueError("overlap matrix is not normalized on both axes")
    E = np.asarray(P.energies if energies is None else getattr(energies, "energies", energies), dtype=float)
    if len(E) != K:
        raise ValueError(f"{len(E)} energies for {K} overlap rows")
    order = np.argsort(E, kind="stable")
    space = P.space_distribution()[order]
    pr_space = 1.0 / np.sum(space ** 2, axis=1)
    pr_energy = 1.0 / np.sum(P.energy_distribution() ** 2, axis=0)
    return ParticipationResult(E[order], pr_space, pr_energy, band_position(E[order]))


def edge_vs_bulk(result: ParticipationResult, edge_fraction: float = 0.2) -> tuple[float, float]:
    """Mean PR_space of the outer band (both ends together) and of the middle."""
    pos = result.band_position
    edge = (pos < edge_fraction / 2) | (pos > 1 - edge_fraction / 2)
    return float(result.pr_space[edge].mean()), float(result.pr_space[~edge].mean())


# -- level statistics ---------------------------------------------------------

@dataclass(frozen=True)
class LevelStatistics:
    spacings: np.ndarray
    ratios: np.ndarray
    histogram: np.ndarray
    edges: np.ndarray

    @property
    def count(self) -> int:
        return len(self.ratios)


def collapse_degenerate(energies, tol: float = DEGENERACY_TOL) -> np.ndarray:
    E = np.sort(np.asarray(energies, dtype=float))
    if len(E) == 0:
        return E
    keep = np.concatenate([[True], np.diff(E) >= tol])
    return E[keep]


def spacing_ratios(energies, tol: float = DEGENERACY_TOL, collapse: bool = True) -> np.ndarray:
    E = np.sort(np.asarray(energies, dtype=float))
    if collapse:
        E = collapse_degenerate(E, tol)
    elif np.any(np.diff(E) < tol):
        raise DegenerateLevels("spacing below degeneracy tolerance")
    if len(E) < 3:
        raise ValueError("need at least three distinct levels")
    s = np.diff(E)
    return np.minimum(s[1:], s[:-1]) / np.maximum(s[1:], s[:-1])


def density_histogram(ratios, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0:
        return np.zeros(bins), edges
    hist, _ = np.histogram(ratios, bins=edges, density=True)
    return hist, edges


def r_statistics(energies, bins: int = 10, tol: float = DEGENERACY_TOL,
                 collapse: bool = True) -> LevelStatistics:
    """Adjacent-gap ratios min(s_a, s_a-1) / max(s_a, s_a-1) and their density.

    Spacings below ``tol`` are collapsed first; with ``collapse=False`` they
    raise :class:`DegenerateLevels` instead.
    """
    ratios = spacing_ratios(energies, tol, collapse)
    E = collapse_degenerate(energies, tol) if collapse else np.sort(energies)
    hist, edges = density_histogram(ratios, bins)
    return LevelStatistics(np.diff(E), ratios, hist, edges)


def pd_goe(r):
    r = np.asarray(r, dtype=float)
    return 27.0 / 4.0 * (r + r ** 2) / (1.0 + r + r ** 2) ** 2.5


def pd_poisson(r):
    r = np.asarray(r, dtype=float)
    return 2.0 / (1.0 + r) ** 2


def poisson_cdf(r):
    r = np.asarray(r, dtype=float)
    return 2.0 * r / (1.0 + r)


def poisson_inverse_cdf(u):
    u = np.asarray(u, dtype=float)
    return u / (2.0 - u)


REFERENCES = {"goe": pd_goe, "poisson": pd_poisson}


@lru_cache(maxsize=32)
def _reference_bins(name: str, bins: int) -> tuple:
    edges = np.linspace(0.0, 1.0, bins + 1)
    if name == "poisson":
        mass = np.diff(poisson_cdf(edges))
    else:
        pdf = REFERENCES[name]
        mass = np.array([integrate.quad(lambda x: float(pdf(x)), a, b, epsabs=1e-13)[0]
                         for a, b in zip(edges[:-1], edges[1:])])
    return tuple(mass / np.diff(edges))


def reference_histogram(name: str, bins: int = 10) -> np.ndarray:
    """Bin-averaged reference density on ``bins`` equal bins of [0, 1]."""
    return np.array(_reference_bins(name, bins))


def kl_divergence(P, Q, edges=None) -> float:
    """sum_l p_l log(P_l / Q_l) with 0 log 0 = 0.

    With ``edges``, P and Q are densities and p_l = P_l * width_l; otherwise
    P itself supplies the weights.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must share their bins")
    w = np.ones_like(P) if edges is None else np.diff(np.asarray(edges, dtype=float))
    support = P > 0
    if np.any(support & (Q <= 0)):
        raise UnsupportedBin("Q vanishes on a bin where P is positive")
    return float(np.sum(P[support] * w[support] * np.log(P[support] / Q[support])))


def reference_distances(hist, bins: int | None = None) -> dict:
    bins = len(hist) if bins is None else bins
    edges = np.linspace(0.0, 1.0, bins + 1)
    return {name: kl_divergence(hist, reference_histogram(name, bins), edges)
            for name in REFERENCES}


def goe_sample_ratios(count: int = 200, dim: int = 45, seed: int = 0) -> np.ndarray:
    """Gap ratios of symmetrized standard-normal random matrices."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        A = rng.standard_normal((dim, dim))
        out.append(spacing_ratios(np.linalg.eigvalsh((A + A.T) / 2)))
    return np.concatenate(out)


# -- missing levels at finite resolution -------------------------------------

def thin_levels(energies, resolution: float, weights=None) -> np.ndarray:
    """Merge runs of levels whose consecutive gaps are below ``resolution``.

    Each merged cluster reports its weight-weighted mean energy.
    """
    E = np.asarray(energies, dtype=float)
    order = np.argsort(E)
    E = E[order]
    w = np.ones_like(E) if weights is None else np.asarray(weights, dtype=float)[order]
    breaks = np.flatnonzero(np.diff(E) >= resolution) + 1
    out = []
    for idx in np.split(np.arange(len(E)), breaks):
        ww = w[idx]
        out.append(np.average(E[idx], weights=ww) if ww.sum() > 0 else E[idx].mean())
    return np.array(out)


@dataclass(frozen=True)
class MissingLevelReport:
    delta_over_j: np.ndarray
    percent_missing: np.ndarray
    kl: np.ndarray
    levels: int
    resolution: float


def _missing_point(spec: HamiltonianSpec, resolution: float, bins: int):
    E, w = aggregate_weights(spec, 2)
    thinned = thin_levels(E, resolution, w)
    full_r = spacing_ratios(E) if len(E) >= 3 else np.array([])
    thin_r = spacing_ratios(thinned) if len(collapse_degenerate(thinned)) >= 3 else np.array([])
    return 100.0 * (len(E) - len(thinned)) / len(E), full_r, thin_r, len(E)


def missing_level_study(delta_over_j, resolution: float = 1.0, sites: int = 18,
                        hopping: float = 50.0, interaction: float = 175.0, b: float = GOLDEN_B,
                        phases=(0.0,), bins: int = 10, threads: int = 1) -> MissingLevelReport:
    """Percentage of two-photon levels lost when levels closer than ``resolution``
    merge, and the KL divergence of the thinned r-histogram from the full one.

    Percentages are averaged over ``phases``; ratios are pooled over them.
    """
    grid = np.asarray(delta_over_j, dtype=float)
    jobs = [HamiltonianSpec.harper(sites, hopping, d * hopping, b, phase=ph, interaction=interaction)
            for d in grid for ph in phases]
    run = lambda s: _missing_point(s, resolution, bins)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(s) for s in jobs]
    pct, kls, levels = [], [], 0
    per = len(phases)
    for i in range(len(grid)):
        chunk = results[i * per:(i + 1) * per]
        levels = chunk[0][3]
        pct.append(float(np.mean([c[0] for c in chunk])))
        full_h, edges = density_histogram(np.concatenate([c[1] for c in chunk]), bins)
        thin_h, _ = density_histogram(np.concatenate([c[2] for c in chunk]), bins)
        try:
            kls.append(kl_divergence(thin_h, full_h, edges))
        except UnsupportedBin:
            kls.append(float("inf"))
    return MissingLevelReport(grid, np.array(pct), np.array(kls), levels, resolution)


# -- two-point correlations ---------------------------------------------------

PAULI_PAIRS = (("sx", "sx"), ("sy", "sy"), ("sx", "sy"), ("sy", "sx"))


@dataclass(frozen=True)
class CorrelationMap:
    separations: np.ndarray
    values: np.ndarray
    pairs: dict = field(default_factory=dict)


@lru_cache(maxsize=4)
def _pauli_tables(sites: int):
    space = TruncatedSpace(sites, 2)
    single = {(k, n): space.operator([(k, n)]) for k in ("sx", "sy") for n in range(1, sites + 1)}
    return space, single


def _expect(psi, O):
    return np.einsum("ti,ti->t", psi.conj(), psi @ O.T).real


def pair_correlations(spec: HamiltonianSpec, n: int, m: int, grid: TimeGrid) -> np.ndarray:
    """S(t) = |<s1_n s2_m> - <s1_n><s2_m>| for XX, YY, XY, YX after exciting (n, m)."""
    space, single = _pauli_tables(spec.sites)
    _, decomp = _space(spec, 2)
    psi = evolve(decomp, InitialStateSpec.pair(n, m).vector(space), grid.times())
    out = []
    for p, q in PAULI_PAIRS:
        joint = _expect(psi, space.operator([(p, n), (q, m)]))
        out.append(np.abs(joint - _expect(psi, single[p, n]) * _expect(psi, single[q, m])))
    return np.array(out)


def correlation_map(spec: HamiltonianSpec, grid: TimeGrid = TimeGrid(0.5, 250.0),
                    threads: int = 1, keep_pairs: bool = False) -> CorrelationMap:
    """Time-, Pauli- and pair-averaged correlations versus |m - n|."""
    pairs = list(itertools.combinations(range(1, spec.sites + 1), 2))
    run = lambda nm: pair_correlations(spec, nm[0], nm[1], grid)  # noqa: E731
    _space(spec, 2)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            series = list(pool.map(run, pairs))
    else:
        series = [run(p) for p in pairs]
    seps = np.arange(1, spec.sites)
    by_sep = {d: [] for d in seps}
    for (n, m), s in zip(pairs, series):
        by_sep[m - n].append(s.mean())
    values = np.array([np.mean(by_sep[d]) for d in seps])
    kept = {f"{n}-{m}": s for (n, m), s in zip(pairs, series)} if keep_pairs else {}
    return CorrelationMap(seps, values, kept)
