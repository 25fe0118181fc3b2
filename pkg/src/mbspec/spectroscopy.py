"""Time-domain many-body spectroscopy: synthesize chi1/chi2 traces and read eigen-energies back.

The vacuum acts as the zero-energy reference.  A single excited site probes
the one-photon sector through chi1, a pair of excited sites probes the
two-photon sector through chi2.  Both traces oscillate at absolute energies,
never at energy differences, so their Fourier transforms peak at +E_alpha.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fock import (
    PHASE_SCALE,
    HamiltonianSpec,
    TruncatedSpace,
    evolve,
    phases,
    sector_decomposition,
    sector_dimension,
)

MODES = ("closed_form", "evolution")
WINDOWS = ("rectangular", "hann")


class NoPeaksFound(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform samples t_j = j * dt (ns) for j < duration / dt."""

    dt: float = 0.5
    duration: float = 1000.0

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")

    @property
    def count(self) -> int:
        return int(round(self.duration / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.count) * self.dt

    @property
    def resolution(self) -> float:
        """Native frequency spacing in MHz."""
        return 1e3 / (self.count * self.dt)


@dataclass(frozen=True)
class InitialStateSpec:
    """Product state with sites n (and m) rotated to (|0> + |1>)/sqrt(2)."""

    kind: str
    sites: tuple[int, ...]

    def __post_init__(self):
        if self.kind == "single" and len(self.sites) != 1:
            raise ValueError("single initial state takes one site")
        if self.kind == "pair":
            if len(self.sites) != 2 or self.sites[0] == self.sites[1]:
                raise ValueError("pair initial state takes two distinct sites")
        if self.kind not in ("single", "pair"):
            raise ValueError(f"unknown initial state kind {self.kind!r}")

    @classmethod
    def single(cls, n: int) -> "InitialStateSpec":
        return cls("single", (int(n),))

    @classmethod
    def pair(cls, n: int, m: int) -> "InitialStateSpec":
        return cls("pair", (int(n), int(m)))

    @property
    def label(self) -> str:
        return "-".join(str(s) for s in self.sites)

    def vector(self, space: TruncatedSpace) -> np.ndarray:
        for n in self.sites:
            if not 1 <= n <= space.sites:
                raise ValueError(f"site {n} out of range 1..{space.sites}")
        v = np.zeros(len(space), dtype=complex)
        if self.kind == "single":
            (n,) = self.sites
            v[space.index(space.excitation())] = 1 / np.sqrt(2)
            v[space.index(space.excitation(n))] = 1 / np.sqrt(2)
        else:
            n, m = self.sites
            for occ in (space.excitation(), space.excitation(n), space.excitation(m),
                        space.excitation(n, m)):
                v[space.index(occ)] = 0.5
        return v


@dataclass(frozen=True)
class Signal:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        if len(self.times) < 2:
            return False
        steps = np.diff(self.times)
        return bool(np.all(np.abs(steps - steps[0]) <= rtol * abs(steps[0])) and steps[0] > 0)


@dataclass(frozen=True)
class Spectrum:
    """|FT| on a (possibly zero-padded) grid, centred on zero frequency."""

    frequencies: np.ndarray
    magnitudes: np.ndarray
    resolution: float
    pad_factor: int = 1
    window: str = "rectangular"
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def native_indices(self) -> np.ndarray:
        """Indices of bins that coincide with the unpadded transform."""
        L = len(self.frequencies)
        return np.arange((L // 2) % self.pad_factor, L, self.pad_factor)

    def magnitude_at(self, energies) -> np.ndarray:
        """Magnitude of the bin nearest to each energy."""
        idx = np.rint((np.asarray(energies) - self.frequencies[0]) / self.spacing).astype(int)
        return self.magnitudes[np.clip(idx, 0, len(self.magnitudes) - 1)]


@dataclass(frozen=True)
class PeakSet:
    energies: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.energies)

    def __iter__(self):
        return iter(zip(self.energies.tolist(), self.weights.tolist()))


@dataclass(frozen=True)
class DetectionParams:
    """Peak-selection settings.

    ``split_rel`` and ``split_window`` govern how close pairs that share one
    native-grid maximum are separated on the zero-padded grid.
    """

    threshold_rel: float = 0.01
    min_separation: float | None = None
    pad_factor: int = 4
    window: str = "rectangular"
    split_rel: float = 0.6
    split_window: float = 1.5

    def __post_init__(self):
        if not 0 < self.threshold_rel < 1:
            raise ValueError("threshold_rel must lie in (0, 1)")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 1:
            raise ValueError("pad_factor must be a positive integer")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}")
        if not 0 < self.split_rel <= 1 or self.split_window <= 0:
            raise ValueError("split_rel must lie in (0, 1] and split_window must be positive")
        if self.min_separation is not None and self.min_separation <= 0:
            raise ValueError("min_separation must be positive")

    def to_dict(self) -> dict:
        return {
            "threshold_rel": self.threshold_rel,
            "min_separation": self.min_separation,
            "pad_factor": self.pad_factor,
            "window": self.window,
            "split_rel": self.split_rel,
            "split_window": self.split_window,
        }


# -- signal synthesis ---------------------------------------------------------

@lru_cache(maxsize=64)
def _sector(spec: HamiltonianSpec, photons: int):
    d = sector_decomposition(spec, photons)
    d.energies.setflags(write=False)
    d.vectors.setflags(write=False)
    return d


@lru_cache(maxsize=16)
def _space(spec: HamiltonianSpec, max_photons: int):
    space = TruncatedSpace(spec.sites, max_photons)
    return space, space.decompose(spec)


def closed_form_weights(spec: HamiltonianSpec, state: InitialStateSpec) -> tuple[np.ndarray, np.ndarray]:
    """Energies and non-negative weights of the closed-form chi trace.

    chi1 weights are |<phi|1_n>|^2 / 2, chi2 weights |<phi|1_n 1_m>|^2 / 4.
    """
    photons = len(state.sites)
    d = _sector(spec, photons)
    occ = [0] * spec.sites
    for n in state.sites:
        if not 1 <= n <= spec.sites:
            raise ValueError(f"site {n} out of range 1..{spec.sites}")
        occ[n - 1] = 1
    row = d.vectors[d.basis.index(occ)]
    return np.array(d.energies), np.abs(row) ** 2 / 2 ** photons


def _evolved_states(spec: HamiltonianSpec, state: InitialStateSpec, times: np.ndarray):
    space, decomp = _space(spec, len(state.sites))
    return space, evolve(decomp, state.vector(space), np.asarray(times))


def _expect(psi: np.ndarray, O: np.ndarray) -> np.ndarray:
    return np.einsum("ti,ti->t", psi.conj(), psi @ O.T)


def _signal(spec, state, grid, mode) -> Signal:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    t = grid.times()
    if mode == "closed_form":
        energies, w = closed_form_weights(spec, state)
        values = phases(energies, t) @ w
    else:
        space, psi = _evolved_states(spec, state, t)
        if state.kind == "single":
            (n,) = state.sites
            sx = _expect(psi, space.operator([("sx", n)])).real
            sy = _expect(psi, space.operator([("sy", n)])).real
            # spin-1/2 quadratures: (<sx> + i<sy>) / 2
            values = (sx + 1j * sy) / 2
        else:
            n, m = state.sites
            c = {
                (p, q): _expect(psi, space.operator([(p, n), (q, m)])).real
                for p in ("sx", "sy") for q in ("sx", "sy")
            }
            values = (c["sx", "sx"] - c["sy", "sy"] + 1j * c["sx", "sy"] + 1j * c["sy", "sx"]) / 4
    meta = {"state": {"kind": state.kind, "sites": list(state.sites)},
            "hamiltonian": spec.to_dict(), "mode": mode}
    return Signal(t, np.asarray(values, dtype=complex), meta)


def chi1_signal(spec: HamiltonianSpec, n: int, grid: TimeGrid = TimeGrid(),
                mode: str = "closed_form") -> Signal:
    """Single-photon trace for site ``n`` excited from the vacuum.

    ``mode="evolution"`` measures the Pauli quadratures on the evolved state;
    ``mode="closed_form"`` sums the oracle overlaps directly.
    """
    return _signal(spec, InitialStateSpec.single(n), grid, mode)


def chi2_signal(spec: HamiltonianSpec, n: int, m: int, grid: TimeGrid = TimeGrid(),
                mode: str = "closed_form") -> Signal:
    """Two-photon trace for the pair (n, m).

    In evolution mode the four two-site correlators XX, YY, XY, YX are combined
    as XX - YY + i XY + i YX, which removes every one-photon contribution.
    """
    return _signal(spec, InitialStateSpec.pair(n, m), grid, mode)


def initial_states(sites: int, sector: int) -> list[InitialStateSpec]:
    if sector == 1:
        return [InitialStateSpec.single(n) for n in range(1, sites + 1)]
    if sector == 2:
        return [InitialStateSpec.pair(n, m)
                for n, m in itertools.combinations(range(1, sites + 1), 2)]
    raise ValueError(f"sector must be 1 or 2, got {sector}")


def synthesize(spec: HamiltonianSpec, states, grid: TimeGrid = TimeGrid(),
               mode: str = "closed_form", threads: int = 1) -> list[Signal]:
    """Signals for several initial states; the output order follows ``states``."""
    states = list(states)
    if mode == "evolution":
        _space(spec, max(len(s.sites) for s in states))  # warm the cache once
    job = lambda s: _signal(spec, s, grid, mode)  # noqa: E731
    if threads <= 1:
        return [job(s) for s in states]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, states))


def apply_damping(signal: Signal, T_decay: float) -> Signal:
    """Multiply by exp(-t / T_decay); a crude stand-in for decoherence."""
    if T_decay <= 0:
        raise ValueError("T_decay must be positive")
    meta = dict(signal.meta, T_decay=T_decay)
    return Signal(signal.times, signal.values * np.exp(-signal.times / T_decay), meta)


# -- Fourier analysis ---------------------------------------------------------

def _window(name: str, M: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(M)
    if name == "hann":
        return np.hanning(M)
    raise ValueError(f"window must be one of {WINDOWS}")


def fourier_spectrum(signal: Signal, window: str = "rectangular", pad_factor: int = 1) -> Spectrum:
    """Windowed, zero-padded transform with kernel exp(+i 2pi nu t 1e-3).

    A term w * exp(-i 2pi E t 1e-3) produces a peak of height w at nu = +E.
    Magnitudes are divided by the window sum so a tone keeps its amplitude.
    """
    if pad_factor < 1 or int(pad_factor) != pad_factor:
        raise ValueError("pad_factor must be a positive integer")
    if not signal.is_uniform():
        raise ValueError("signal must be sampled on a uniform grid")
    M = len(signal.values)
    dt = signal.dt
    w = _window(window, M)
    L = M * int(pad_factor)
    X = np.fft.ifft(signal.values * w, n=L) * (L / w.sum())
    freqs = np.fft.fftshift(np.fft.fftfreq(L, d=dt * 1e-3))
    return Spectrum(freqs, np.abs(np.fft.fftshift(X)), 1e3 / (M * dt),
                    int(pad_factor), window, dict(signal.meta))


def average_spectra(spectra: list[Spectrum]) -> Spectrum:
    first = spectra[0]
    mags = np.mean([s.magnitudes for s in spectra], axis=0)
    return Spectrum(first.frequencies, mags, first.resolution, first.pad_factor,
                    first.window, {"averaged": len(spectra)})


def _parabolic(mag: np.ndarray, j: int) -> tuple[float, float]:
    """Vertex offset (in bins) and height of a parabola through log-magnitudes."""
    a, b, c = mag[j - 1], mag[j], mag[j + 1]
    if a <= 0 or c <= 0:
        return 0.0, float(b)
    la, lb, lc = np.log(a), np.log(b), np.log(c)
    denom = la - 2 * lb + lc
    if denom >= 0:
        return 0.0, float(b)
    p = 0.5 * (la - lc) / denom
    return float(p), float(np.exp(lb - 0.25 * (la - lc) * p))


def detect_peaks(spectrum: Spectrum, threshold_rel: float = 0.01,
                 min_separation: float | None = None, split_rel: float = 0.6,
                 split_window: float = 1.5) -> PeakSet:
    """Local maxima above ``threshold_rel * max``, refined on the padded grid.

    Candidates are maxima of the unpadded transform, which carries no sidelobe
    maxima of its own.  Around each candidate, every padded maximum within
    ``split_window`` native bins and at least ``split_rel`` of the local top is
    kept, so two levels sharing one native maximum come out separately.
    Positions are refined by a three-point parabola on log-magnitude; maxima
    closer than ``min_separation`` (default: the native resolution) merge into
    the stronger one.
    """
    if not 0 < threshold_rel < 1:
        raise ValueError("threshold_rel must lie in (0, 1)")
    if min_separation is None:
        min_separation = spectrum.resolution
    if min_separation < spectrum.resolution * (1 - 1e-9):
        raise ValueError("min_separation is below the spectrum resolution")
    mag = spectrum.magnitudes
    L = len(mag)
    pad = spectrum.pad_factor
    nat = spectrum.native_indices()
    native = mag[nat]
    floor = threshold_rel * native.max()
    if native.max() <= 0:
        raise NoPeaksFound("spectrum is identically zero")

    is_max = np.zeros(L, dtype=bool)
    is_max[1:-1] = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])
    reach = int(np.floor(split_window * pad))
    chosen = set()
    for c in range(1, len(native) - 1):
        if not (native[c] > native[c - 1] and native[c] >= native[c + 1] and native[c] >= floor):
            continue
        j0 = nat[c]
        local = [j for j in range(max(1, j0 - reach), min(L - 1, j0 + reach + 1)) if is_max[j]]
        if not local:
            continue
        top = max(mag[j] for j in local)
        chosen.update(j for j in local if mag[j] >= split_rel * top and mag[j] >= floor)
    if not chosen:
        raise NoPeaksFound(f"no maxima above {threshold_rel:g} of the largest magnitude")

    found = []
    for j in sorted(chosen):
        p, h = _parabolic(mag, j)
        found.append((spectrum.frequencies[j] + p * spectrum.spacing, h))
    kept: list[tuple[float, float]] = []
    for e, w in found:
        if kept and e - kept[-1][0] < min_separation:
            if w > kept[-1][1]:
                kept[-1] = (e, w)
        else:
            kept.append((e, w))
    return PeakSet(np.array([e for e, _ in kept]), np.array([w for _, w in kept]))


# -- overlaps and full recovery -----------------------------------------------

@dataclass(frozen=True)
class OverlapMatrix:
    """Probabilities linking eigenstates (rows) to site-local Fock labels (columns).

    Rows are normalized to one.  Columns are normalized to rows/columns, which
    is one for a square matrix; ``energy_distribution`` rescales each column to
    unit sum when a per-label distribution is needed.
    """

    values: np.ndarray
    energies: np.ndarray
    labels: tuple
    row_normalized: bool = False
    col_normalized: bool = False

    @property
    def shape(self):
        return self.values.shape

    def normalized(self, max_iter: int = 1000, tol: float = 1e-12) -> "OverlapMatrix":
        """Alternating row/column scaling, rows first."""
        P = np.array(self.values, dtype=float)
        K, N = P.shape
        col_target = K / N
        for _ in range(max_iter):
            P /= P.sum(axis=1, keepdims=True)
            P *= col_target / P.sum(axis=0, keepdims=True)
            if np.max(np.abs(P.sum(axis=1) - 1)) < tol:
                break
        rows_ok = bool(np.max(np.abs(P.sum(axis=1) - 1)) < 1e-6)
        cols_ok = bool(np.max(np.abs(P.sum(axis=0) - col_target)) < 1e-6)
        return OverlapMatrix(P, self.energies, self.labels, rows_ok, cols_ok)

    def space_distribution(self) -> np.ndarray:
        return self.values / self.values.sum(axis=1, keepdims=True)

    def energy_distribution(self) -> np.ndarray:
        return self.values / self.values.sum(axis=0, keepdims=True)


def marginalize_pairs(P_pairs: np.ndarray, pairs, sites: int) -> np.ndarray:
    """P[alpha, n] = sum over m of P[alpha, (n, m)]."""
    out = np.zeros((P_pairs.shape[0], sites))
    for col, (n, m) in enumerate(pairs):
        out[:, n - 1] += P_pairs[:, col]
        out[:, m - 1] += P_pairs[:, col]
    return out


def oracle_overlaps(spec: HamiltonianSpec, sector: int) -> OverlapMatrix:
    """Exact overlaps |<phi_alpha|label>|^2 built the same way as the recovered ones."""
    d = _sector(spec, sector)
    states = initial_states(spec.sites, sector)
    raw = np.column_stack([closed_form_weights(spec, s)[1] for s in states])
    if sector == 2:
        raw = marginalize_pairs(raw, [s.sites for s in states], spec.sites)
    labels = tuple(range(1, spec.sites + 1))
    return OverlapMatrix(raw, np.array(d.energies), labels).normalized()


@dataclass
class Recovery:
    peaks: PeakSet
    overlaps: OverlapMatrix
    average: Spectrum
    per_state: list[Spectrum]
    states: list[InitialStateSpec]
    expected_levels: int
    warnings: list[dict] = field(default_factory=list)


def recover_spectrum(spec: HamiltonianSpec, sector: int, grid: TimeGrid = TimeGrid(),
                     detection: DetectionParams = DetectionParams(), mode: str = "closed_form",
                     damping: float | None = None, threads: int = 1) -> Recovery:
    """Run every initial state of the sector, detect peaks on the averaged |FT|,
    then read each state's magnitude at the detected energies."""
    states = initial_states(spec.sites, sector)
    signals = synthesize(spec, states, grid, mode, threads)
    if damping is not None:
        signals = [apply_damping(s, damping) for s in signals]
    spectra = [fourier_spectrum(s, detection.window, detection.pad_factor) for s in signals]
    avg = average_spectra(spectra)
    peaks = detect_peaks(avg, detection.threshold_rel, detection.min_separation,
                         detection.split_rel, detection.split_window)
    raw = np.column_stack([s.magnitude_at(peaks.energies) for s in spectra])
    if sector == 2:
        raw = marginalize_pairs(raw, [s.sites for s in states], spec.sites)
    overlaps = OverlapMatrix(raw, peaks.energies, tuple(range(1, spec.sites + 1))).normalized()
    expected = sector_dimension(spec.sites, sector)
    warnings = []
    if len(peaks) != expected:
        warnings.append({"kind": "peak_count", "detected": len(peaks), "expected": expected})
    return Recovery(peaks, overlaps, avg, spectra, states, expected, warnings)


def match_levels(detected: np.ndarray, oracle: np.ndarray) -> np.ndarray:
    """Distance from every oracle level to its nearest detected peak."""
    detected = np.asarray(detected)
    if detected.size == 0:
        return np.full(len(oracle), np.inf)
    return np.min(np.abs(np.asarray(oracle)[:, None] - detected[None, :]), axis=1)


def merged_levels(detected, oracle, weights=None, threshold_rel: float = 0.01) -> list[dict]:
    """Groups of visible oracle levels whose nearest detected peak is shared.

    A level is visible when its weight is at least ``threshold_rel`` of the
    largest weight. Each group marks a peak that hides several levels.
    """
    detected = np.asarray(detected, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if detected.size == 0 or oracle.size == 0:
        return []
    visible = np.ones(len(oracle), bool)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        visible = w >= threshold_rel * w.max()
    nearest = np.argmin(np.abs(oracle[:, None] - detected[None, :]), axis=1)
    groups = []
    for j in np.unique(nearest[visible]):
        members = oracle[visible & (nearest == j)]
        if len(members) > 1:
            groups.append({"kind": "merged_peaks", "peak": float(detected[j]), "levels": members.tolist()})
    return groups


def oracle_energies(spec: HamiltonianSpec, sector: int) -> np.ndarray:
    if sector == 0:
        return np.zeros(1)
    return np.array(_sector(spec, sector).energies)


def aggregate_weights(spec: HamiltonianSpec, sector: int) -> tuple[np.ndarray, np.ndarray]:
    """Oracle energies and closed-form weights averaged over the sector's initial states."""
    states = initial_states(spec.sites, sector)
    w = np.mean([closed_form_weights(spec, s)[1] for s in states], axis=0)
    return oracle_energies(spec, sector), w


__all__ = [
    "PHASE_SCALE", "TimeGrid", "InitialStateSpec", "Signal", "Spectrum", "PeakSet",
    "DetectionParams", "OverlapMatrix", "Recovery", "NoPeaksFound", "chi1_signal",
    "chi2_signal", "synthesize", "apply_damping", "fourier_spectrum", "average_spectra",
    "detect_peaks", "recover_spectrum", "oracle_overlaps", "marginalize_pairs",
    "initial_states", "match_levels", "merged_levels", "oracle_energies", "aggregate_weights",
    "closed_form_weights",
]
