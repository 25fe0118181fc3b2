import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from mbspec.analysis import (
    DEFAULT_B_VALUES,
    DegenerateLevels,
    UnsupportedBin,
    band_position,
    correlation_map,
    density_histogram,
    edge_vs_bulk,
    goe_sample_ratios,
    kl_divergence,
    missing_level_study,
    participation_ratio,
    participation_ratios,
    pd_goe,
    pd_poisson,
    poisson_cdf,
    poisson_inverse_cdf,
    r_statistics,
    reference_distances,
    reference_histogram,
    spacing_ratios,
    thin_levels,
)
from mbspec.fock import GOLDEN_B, HamiltonianSpec
from mbspec.spectroscopy import OverlapMatrix, TimeGrid, oracle_energies, oracle_overlaps

# frozen from the bin-averaged reference densities (20 equal bins)
KL_POISSON_GOE_20 = 0.28507753840227806
KL_POISSON_GOE_CONTINUOUS = 0.3181030862610528


def overlap(values):
    values = np.asarray(values, dtype=float)
    return OverlapMatrix(values, np.arange(len(values), dtype=float), tuple(range(1, values.shape[1] + 1)))


def test_pr_extremes():
    K = 7
    uni = participation_ratios(overlap(np.full((K, K), 1.0 / K)))
    assert np.allclose(uni.pr_space, K) and np.allclose(uni.pr_energy, K)
    perm = participation_ratios(overlap(np.eye(K)[[3, 1, 0, 6, 2, 5, 4]]))
    assert np.allclose(perm.pr_space, 1) and np.allclose(perm.pr_energy, 1)


def test_pr_rejects_unnormalized():
    with pytest.raises(ValueError):
        participation_ratios(overlap(np.full((3, 3), 0.5)))


def test_pr_rectangular_and_ordering():
    rng = np.random.default_rng(3)
    P = OverlapMatrix(rng.uniform(0.1, 1, (45, 9)), rng.normal(size=45), tuple(range(1, 10))).normalized()
    res = participation_ratios(P)
    assert np.all(np.diff(res.energies) >= 0)
    assert res.band_position[0] == 0.0 and res.band_position[-1] == 1.0
    assert np.all((res.pr_space >= 1) & (res.pr_space <= 9 + 1e-9))
    assert np.all((res.pr_energy >= 1) & (res.pr_energy <= 45 + 1e-9))


def test_pr_sector1_aubry_andre():
    strong = participation_ratios(oracle_overlaps(HamiltonianSpec.harper(9, 50.0, 250.0, GOLDEN_B), 1))
    weak = participation_ratios(oracle_overlaps(HamiltonianSpec.harper(9, 50.0, 25.0, GOLDEN_B), 1))
    assert strong.pr_space.mean() < 2
    assert weak.pr_space.mean() > 5


def test_edge_vs_bulk():
    from mbspec.analysis import ParticipationResult
    pos = np.linspace(0, 1, 11)
    res = ParticipationResult(pos, np.where((pos < 0.1) | (pos > 0.9), 1.0, 3.0), np.ones(3), pos)
    assert edge_vs_bulk(res, 0.2) == (1.0, 3.0)
    assert band_position([5.0, 5.0]).tolist() == [0.0, 0.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40).filter(lambda x: sum(x) > 1e-6))
def test_pr_bounds_property(raw):
    p = np.array(raw) / np.sum(raw)
    pr = participation_ratio(p)
    assert 1 - 1e-9 <= pr <= len(p) + 1e-9


def test_r_statistics_examples():
    assert np.allclose(spacing_ratios([0, 1, 2, 3]), [1, 1])
    assert np.allclose(spacing_ratios([0, 1, 3]), [0.5])
    ls = r_statistics(np.arange(10.0) ** 1.5)
    assert ls.count == 8
    assert np.sum(ls.histogram * np.diff(ls.edges)) == pytest.approx(1.0, abs=1e-9)


def test_r_degeneracies():
    E = [0.0, 1.0, 1.0, 3.0, 4.0]
    assert np.allclose(spacing_ratios(E), [0.5, 0.5])
    with pytest.raises(DegenerateLevels):
        spacing_ratios(E, collapse=False)
    with pytest.raises(ValueError):
        spacing_ratios([0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    scale=st.sampled_from([0.5, 2.0, 4.0, 0.125]),
    shift=st.sampled_from([0.0, 1.0, -64.0, 300.0]),
)
def test_r_scale_invariance(seed, scale, shift):
    E = np.sort(np.random.default_rng(seed).uniform(0, 100, 30))
    a = spacing_ratios(E)
    b = spacing_ratios(scale * E + shift)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)
    assert np.all((a >= 0) & (a <= 1))


def test_reference_densities():
    assert pd_poisson(0) == 2.0 and pd_poisson(1) == 0.5
    assert pd_goe(0) == 0.0
    assert pd_goe(1) == pytest.approx(np.sqrt(3) / 2, abs=1e-15)
    assert integrate.quad(pd_poisson, 0, 1)[0] == pytest.approx(1.0, abs=1e-12)
    assert abs(integrate.quad(pd_goe, 0, 1)[0] - 1.0) < 1e-6
    for name in ("goe", "poisson"):
        h = reference_histogram(name, 10)
        assert np.sum(h) * 0.1 == pytest.approx(1.0, abs=1e-6)


def test_kl_properties():
    edges = np.linspace(0, 1, 21)
    P = reference_histogram("poisson", 20)
    Q = reference_histogram("goe", 20)
    assert kl_divergence(P, P, edges) == 0.0
    assert kl_divergence(P, Q, edges) == pytest.approx(KL_POISSON_GOE_20, rel=1e-9)
    assert kl_divergence(Q, P, edges) > 0
    spike = np.zeros(20)
    spike[7] = 20.0
    assert kl_divergence(spike, np.ones(20), edges) == pytest.approx(np.log(20))
    with pytest.raises(UnsupportedBin):
        kl_divergence(np.ones(20), spike, edges)
    with pytest.raises(ValueError):
        kl_divergence(np.ones(3), np.ones(4))


def test_kl_converges_to_continuum():
    cont = integrate.quad(lambda r: pd_poisson(r) * np.log(pd_poisson(r) / pd_goe(r)), 0, 1)[0]
    assert cont == pytest.approx(KL_POISSON_GOE_CONTINUOUS, rel=1e-9)
    assert cont > 0.3
    fine = kl_divergence(reference_histogram("poisson", 1000), reference_histogram("goe", 1000),
                         np.linspace(0, 1, 1001))
    assert abs(fine - cont) < 0.002


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_kl_non_negative(seed):
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, 1, 11)
    P, _ = density_histogram(rng.uniform(size=50), 10)
    Q, _ = density_histogram(rng.uniform(size=5000), 10)
    if np.all(Q > 0):
        assert kl_divergence(P, Q, edges) >= -1e-12


def test_poisson_inverse_cdf():
    r = np.linspace(0, 1, 101)
    assert np.allclose(poisson_inverse_cdf(poisson_cdf(r)), r)
    u = np.random.default_rng(2026).uniform(size=10**6)
    counts, edges = np.histogram(poisson_inverse_cdf(u), bins=np.linspace(0, 1, 11))
    p = np.diff(poisson_cdf(edges))
    sigma = np.sqrt(10**6 * p * (1 - p))
    assert np.all(np.abs(counts - 10**6 * p) < 3 * sigma)
    assert stats.chisquare(counts, 10**6 * p).pvalue > 0.01


def test_goe_cross_check():
    ratios = goe_sample_ratios(200, 45, seed=0)
    assert len(ratios) == 200 * 43
    hist, edges = density_histogram(ratios, 10)
    assert kl_divergence(hist, reference_histogram("goe", 10), edges) < 0.02
    d = reference_distances(hist)
    assert d["goe"] < d["poisson"]


def test_strong_disorder_histogram_shape():
    ratios = np.concatenate([
        spacing_ratios(oracle_energies(HamiltonianSpec.harper(9, 50.0, 250.0, b, interaction=175.0), 2))
        for b in DEFAULT_B_VALUES
    ])
    assert len(ratios) == 172
    hist, edges = density_histogram(ratios)
    # small gap ratios dominate; the densest bins lie below r = 0.3
    assert np.sum(hist[:3] * 0.1) >= 0.5
    assert np.argmax(hist) < 3


def test_thin_levels():
    E = np.array([0.0, 0.4, 0.7, 5.0, 10.0, 10.5])
    assert np.array_equal(thin_levels(E, 1e-12), E)
    assert len(thin_levels(E, 100.0)) == 1
    out = thin_levels(E, 1.0, weights=[1, 1, 2, 1, 3, 1])
    assert np.allclose(out, [(0.4 + 1.4) / 4, 5.0, 10.125])


def test_missing_level_limits():
    fine = missing_level_study([0.0, 2.0], resolution=1e-9, sites=8)
    assert np.all(fine.percent_missing == 0) and np.allclose(fine.kl, 0)
    coarse = missing_level_study([1.0], resolution=1e6, sites=8)
    assert coarse.percent_missing[0] == pytest.approx(100.0 * 35 / 36)


def test_correlation_decoupled():
    spec = HamiltonianSpec(5, 0.0, 0.0, potential=(10.0, -20.0, 35.0, 0.0, 7.0))
    cmap = correlation_map(spec, TimeGrid(0.5, 50.0))
    assert np.all(np.abs(cmap.values) < 1e-10)
    assert cmap.separations.tolist() == [1, 2, 3, 4]


def test_correlation_bounds():
    spec = HamiltonianSpec.harper(5, 50.0, 100.0, GOLDEN_B, interaction=175.0)
    cmap = correlation_map(spec, TimeGrid(0.5, 100.0), keep_pairs=True)
    assert len(cmap.pairs) == 10
    raw = np.concatenate([s.ravel() for s in cmap.pairs.values()])
    assert raw.max() <= 1.0 and raw.min() >= 0.0
    assert np.all((cmap.values >= 0) & (cmap.values <= 1))
    threaded = correlation_map(spec, TimeGrid(0.5, 100.0), threads=3)
    assert np.array_equal(threaded.values, cmap.values)
