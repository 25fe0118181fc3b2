"""Number-conserving Fock bases, Bose-Hubbard matrices and the exact-diagonalization oracle.

Energies are frequencies E/2pi in MHz, times are in ns, so a level E picks up
the phase ``2*pi*E*t*1e-3`` after time t.  Site numbers in the public API are
1-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SIZE_CAP = 4096
GOLDEN_B = (np.sqrt(5.0) - 1.0) / 2.0

#: phase factor converting MHz * ns into radians
PHASE_SCALE = 2.0 * np.pi * 1e-3


class SectorTooLarge(ValueError):
    """Requested sector exceeds the configured dimension cap."""


def sector_dimension(sites: int, photons: int) -> int:
    return comb(sites + photons - 1, photons)


def _compositions(total: int, parts: int):
    # descending lexicographic order
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class FockBasis:
    """Ordered occupation-number states with a fixed total photon number."""

    sites: int
    photons: int
    states: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})
        if len(self._index) != len(self.states):
            raise ValueError("duplicate occupation vectors")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, occupation) -> bool:
        return tuple(occupation) in self._index

    def index(self, occupation: Sequence[int]) -> int:
        return self._index[tuple(occupation)]

    def occupations(self) -> np.ndarray:
        return np.array(self.states, dtype=int).reshape(len(self.states), self.sites)


def enumerate_basis(sites: int, photons: int, size_cap: int = DEFAULT_SIZE_CAP) -> FockBasis:
    """All occupation vectors of ``sites`` modes holding ``photons`` bosons.

    The order is lexicographically descending, so for one photon the state
    with the photon on site 1 comes first.
    """
    if sites < 1:
        raise ValueError(f"need at least one site, got {sites}")
    if photons < 0:
        raise ValueError(f"photon number must be non-negative, got {photons}")
    dim = sector_dimension(sites, photons)
    if dim > size_cap:
        raise SectorTooLarge(
            f"sector N={sites}, k={photons} has dimension {dim} > cap {size_cap}"
        )
    return FockBasis(sites, photons, tuple(_compositions(photons, sites)))


@dataclass(frozen=True)
class HamiltonianSpec:
    """Parameters of one Bose-Hubbard chain realization (all in MHz).

    Either ``potential`` holds an explicit on-site vector, or the quasi-periodic
    recipe ``delta * cos(2*pi*n*b + phase)`` with n = 1..N is used.
    """

    sites: int
    hopping: float
    interaction: float = 0.0
    potential: tuple[float, ...] | None = None
    delta: float = 0.0
    b: float = 0.0
    phase: float = 0.0
    hopping_sign: int = 1

    def __post_init__(self):
        if self.sites < 1:
            raise ValueError("sites must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.hopping_sign not in (1, -1):
            raise ValueError("hopping_sign must be +1 or -1")
        if self.potential is not None:
            pot = tuple(float(x) for x in self.potential)
            if len(pot) != self.sites:
                raise ValueError(f"potential has {len(pot)} entries, expected {self.sites}")
            object.__setattr__(self, "potential", pot)

    @classmethod
    def harper(cls, sites, hopping, delta, b, phase=0.0, interaction=0.0, hopping_sign=1):
        return cls(sites=sites, hopping=hopping, interaction=interaction,
                   delta=delta, b=b, phase=phase, hopping_sign=hopping_sign)

    def onsite(self) -> np.ndarray:
        if self.potential is not None:
            return np.array(self.potential, dtype=float)
        n = np.arange(1, self.sites + 1)
        return self.delta * np.cos(2.0 * np.pi * n * self.b + self.phase)

    def expanded(self) -> "HamiltonianSpec":
        """Same physics with the recipe replaced by its explicit potential."""
        return HamiltonianSpec(self.sites, self.hopping, self.interaction,
                               tuple(self.onsite().tolist()), hopping_sign=self.hopping_sign)

    def to_dict(self) -> dict:
        d = {
            "sites": self.sites,
            "hopping": self.hopping,
            "interaction": self.interaction,
            "hopping_sign": self.hopping_sign,
        }
        if self.potential is not None:
            d["potential"] = list(self.potential)
        else:
            d.update(delta=self.delta, b=self.b, phase=self.phase)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianSpec":
        d = dict(d)
        if d.get("potential") is not None:
            d["potential"] = tuple(d["potential"])
        return cls(**d)


def build_hamiltonian(spec: HamiltonianSpec, basis: FockBasis) -> np.ndarray:
    """Real-symmetric Bose-Hubbard matrix of ``spec`` restricted to ``basis``.

    Open chain: hopping acts on the bonds (n, n+1) for n = 1..N-1.
    """
    if basis.sites != spec.sites:
        raise ValueError(f"basis has {basis.sites} sites, spec has {spec.sites}")
    mu = spec.onsite()
    occ = basis.occupations()
    dim = len(basis)
    H = np.zeros((dim, dim))
    H[np.diag_indices(dim)] = occ @ mu + 0.5 * spec.interaction * np.sum(occ * (occ - 1), axis=1)
    J = spec.hopping_sign * spec.hopping
    for i, s in enumerate(basis.states):
        for n in range(spec.sites - 1):
            # photon hops from site n+1 to site n; the reverse hop is the transpose
            if s[n + 1] == 0:
                continue
            t = list(s)
            t[n] += 1
            t[n + 1] -= 1
            j = basis.index(t)
            amp = J * np.sqrt(s[n] + 1) * np.sqrt(s[n + 1])
            H[j, i] += amp
            H[i, j] += amp
    return H


@dataclass(frozen=True)
class SpectralDecomposition:
    energies: np.ndarray
    vectors: np.ndarray
    basis: object = None

    def __len__(self) -> int:
        return len(self.energies)

    def coefficients(self, state: np.ndarray) -> np.ndarray:
        """Amplitudes <phi_alpha|state>."""
        return self.vectors.conj().T @ state

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.energies) @ self.vectors.conj().T


def diagonalize(H: np.ndarray, basis=None, tol: float = 1e-10) -> SpectralDecomposition:
    """Dense Hermitian eigendecomposition with ascending energies.

    ``numpy.linalg.LinAlgError`` from the eigensolver propagates unchanged.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if H.size and np.max(np.abs(H - H.conj().T)) > tol:
        raise ValueError("matrix is not Hermitian")
    energies, vectors = np.linalg.eigh(H)
    return SpectralDecomposition(energies, vectors, basis)


def phases(energies: np.ndarray, times) -> np.ndarray:
    """Matrix exp(-i 2pi E t 1e-3) with shape (len(times), len(energies))."""
    return np.exp(-1j * PHASE_SCALE * np.outer(np.atleast_1d(times), energies))


def evolve(decomp: SpectralDecomposition, psi0: np.ndarray, t, tol: float = 1e-10) -> np.ndarray:
    """State at time(s) ``t`` (ns) starting from ``psi0``.

    A scalar ``t`` returns a vector; an array of times returns one row per time.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > tol:
        raise ValueError("initial state is not normalized")
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0):
        raise ValueError("evolution time must be non-negative")
    coeffs = decomp.coefficients(psi0)
    out = (phases(decomp.energies, tt) * coeffs) @ decomp.vectors.T
    return out[0] if tt.ndim == 0 else out


# -- multi-sector space with local operators ---------------------------------

_LOCAL = {
    # local occupation -> (new occupation, amplitude factor); sigma ops ignore |2>
    "sx": {0: (1, 1.0), 1: (0, 1.0)},
    "sy": {0: (1, 1j), 1: (0, -1j)},
    "sp": {0: (1, 1.0)},
    "sm": {1: (0, 1.0)},
}


class TruncatedSpace:
    """Direct sum of the sectors with 0..max_photons photons.

    Matrices of products of local operators on distinct sites are built
    exactly: the product acts on each basis state first and the image is then
    projected onto the space, so intermediate states outside the truncation are
    handled correctly.
    """

    def __init__(self, sites: int, max_photons: int = 2, size_cap: int = DEFAULT_SIZE_CAP):
        self.sites = sites
        self.max_photons = max_photons
        self.sectors = [enumerate_basis(sites, k, size_cap) for k in range(max_photons + 1)]
        self.states = [s for sec in self.sectors for s in sec.states]
        if len(self.states) > size_cap:
            raise SectorTooLarge(f"truncated space dimension {len(self.states)} > cap {size_cap}")
        self._index = {s: i for i, s in enumerate(self.states)}
        offsets = np.cumsum([0] + [len(sec) for sec in self.sectors])
        self.slices = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]

    def __len__(self) -> int:
        return len(self.states)

    def index(self, occupation) -> int:
        return self._index[tuple(occupation)]

    def photon_numbers(self) -> np.ndarray:
        return np.array([sum(s) for s in self.states])

    def fock_state(self, occupation) -> np.ndarray:
        v = np.zeros(len(self), dtype=complex)
        v[self.index(occupation)] = 1.0
        return v

    def excitation(self, *sites: int) -> tuple[int, ...]:
        occ = [0] * self.sites
        for n in sites:
            occ[n - 1] += 1
        return tuple(occ)

    def operator(self, factors: Iterable[tuple[str, int]]) -> np.ndarray:
        """Matrix of a product of local operators, e.g. ``[("sx", 3), ("sy", 5)]``.

        Supported kinds: ``sx``, ``sy``, ``sp``, ``sm`` (qubit subspace of one
        site), ``a``, ``adag`` and ``n`` (bosonic).  Sites must be distinct.
        """
        factors = [(k, int(n)) for k, n in factors]
        sites = [n for _, n in factors]
        if len(set(sites)) != len(sites):
            raise ValueError("local factors must act on distinct sites")
        for _, n in factors:
            if not 1 <= n <= self.sites:
                raise ValueError(f"site {n} out of range 1..{self.sites}")
        dim = len(self)
        O = np.zeros((dim, dim), dtype=complex)
        for i, s in enumerate(self.states):
            occ = list(s)
            amp = 1.0 + 0j
            for kind, n in factors:
                m = occ[n - 1]
                if kind in _LOCAL:
                    if m not in _LOCAL[kind]:
                        amp = 0.0
                        break
                    occ[n - 1], f = _LOCAL[kind][m]
                    amp *= f
                elif kind == "a":
                    if m == 0:
                        amp = 0.0
                        break
                    occ[n - 1] = m - 1
                    amp *= np.sqrt(m)
                elif kind == "adag":
                    occ[n - 1] = m + 1
                    amp *= np.sqrt(m + 1)
                elif kind == "n":
                    amp *= m
                else:
                    raise ValueError(f"unknown local operator {kind!r}")
            if amp == 0:
                continue
            j = self._index.get(tuple(occ))
            if j is not None:
                O[j, i] += amp
        return O

    def site_operators(self, n: int) -> dict[str, np.ndarray]:
        return {k: self.operator([(k, n)]) for k in ("a", "adag", "n", "sx", "sy")}

    def hamiltonian(self, spec: HamiltonianSpec) -> np.ndarray:
        """Block-diagonal Hamiltonian over all sectors of the space."""
        H = np.zeros((len(self), len(self)))
        for sec, sl in zip(self.sectors, self.slices):
            H[sl, sl] = build_hamiltonian(spec, sec)
        return H

    def decompose(self, spec: HamiltonianSpec) -> SpectralDecomposition:
        """Eigendecomposition assembled sector by sector.

        Every eigenvector has a definite photon number; energies are ascending
        inside each sector block, not globally.
        """
        dim = len(self)
        energies = np.zeros(dim)
        vectors = np.zeros((dim, dim))
        for sec, sl in zip(self.sectors, self.slices):
            d = diagonalize(build_hamiltonian(spec, sec))
            energies[sl] = d.energies
            vectors[sl, sl] = d.vectors
        return SpectralDecomposition(energies, vectors, self)


def sector_decomposition(spec: HamiltonianSpec, photons: int, size_cap: int = DEFAULT_SIZE_CAP):
    basis = enumerate_basis(spec.sites, photons, size_cap)
    return diagonalize(build_hamiltonian(spec, basis), basis)


# -- 2D quantum Hall lattice versus its 1D momentum blocks -------------------

@dataclass(frozen=True)
class IQHReport:
    max_mismatch: float
    momenta: np.ndarray
    block_spectra: np.ndarray
    lattice_spectrum: np.ndarray


def quantum_hall_hamiltonian(Jx: float, Jy: float, b: float, Nx: int, Ny: int) -> np.ndarray:
    """Single-particle Hofstadter lattice, open in x and periodic in y.

    Site (n, m) has index (n-1)*Ny + (m-1); the y bond in column n carries the
    Peierls phase exp(i 2pi b n).
    """
    dim = Nx * Ny
    H = np.zeros((dim, dim), dtype=complex)

    def idx(n, m):
        return (n - 1) * Ny + (m - 1) % Ny

    for n, m in itertools.product(range(1, Nx + 1), range(1, Ny + 1)):
        if n < Nx:
            H[idx(n, m), idx(n + 1, m)] += Jx
            H[idx(n + 1, m), idx(n, m)] += Jx
        amp = Jy * np.exp(2j * np.pi * b * n)
        H[idx(n, m), idx(n, m + 1)] += amp
        H[idx(n, m + 1), idx(n, m)] += np.conj(amp)
    return H


def iqh_block_check(Jx: float, Jy: float, b: float, Nx: int, Ny: int,
                    size_cap: int = DEFAULT_SIZE_CAP) -> IQHReport:
    """Compare the 2D lattice spectrum with the union of its Harper blocks.

    Each momentum k = 2pi m / Ny gives a chain with potential 2 Jy cos(2pi b n + k)
    and hopping Jx.
    """
    if Nx * Ny > size_cap:
        raise SectorTooLarge(f"lattice of {Nx * Ny} sites exceeds cap {size_cap}")
    lattice = np.linalg.eigvalsh(quantum_hall_hamiltonian(Jx, Jy, b, Nx, Ny))
    momenta = 2.0 * np.pi * np.arange(Ny) / Ny
    basis = enumerate_basis(Nx, 1)
    blocks = []
    for k in momenta:
        spec = HamiltonianSpec.harper(Nx, Jx, 2.0 * abs(Jy), b, phase=k if Jy >= 0 else k + np.pi)
        blocks.append(np.linalg.eigvalsh(build_hamiltonian(spec, basis)))
    blocks = np.array(blocks)
    union = np.sort(blocks.ravel())
    return IQHReport(float(np.max(np.abs(union - lattice))), momenta, blocks, lattice)
