import numpy as np
import pytest
from dataclasses import replace

from qfilter import qubit
from qfilter.ensemble import EnsembleState, ensemble_step, n_eff
from qfilter.experiments import simulate_qubit
from qfilter.particles import (
    ParticleSet,
    ResampleConfig,
    UniformPrior,
    filter_record,
    init_particles,
    kernel_children,
    liu_west_resample,
    pf_step,
    sample_parents,
    write_snapshots,
)
from qfilter.sme import SdeConfig, make_rng

PLUS_X = qubit.angle_to_density(0.0)
H0, L = qubit.qubit_operators(1.0)
CFG = SdeConfig(dt=1e-4)


def weighted_set(xi, w, seed=0, states=None, support=None):
    xi = np.asarray(xi, dtype=float)
    if states is None:
        states = np.repeat(PLUS_X[None], xi.size, 0)
    ens = EnsembleState(xi, np.asarray(w, dtype=float), states, H0, L)
    return ParticleSet(ens, make_rng(seed), 0, support)


def test_init_particles():
    ps = init_particles(UniformPrior(0, 10), 1000, PLUS_X, 4, H0, L)
    assert len(ps) == 1000
    assert np.all(ps.ensemble.weights == 1e-3)
    assert ps.support == (0, 10)
    assert np.all((ps.ensemble.xi >= 0) & (ps.ensemble.xi <= 10))
    one = init_particles(UniformPrior(0, 10), 1, PLUS_X, 4, H0, L)
    assert one.ensemble.weights.tolist() == [1.0]
    with pytest.raises(ValueError):
        init_particles(UniformPrior(0, 10), 0, PLUS_X, 4, H0, L)
    with pytest.raises(ValueError):
        UniformPrior(1, 1)


def test_prior_sample_mean():
    draws = UniformPrior(0, 10).sample(make_rng(0), 100_000)
    assert abs(draws.mean() - 5.0) <= 0.1


def test_resample_config():
    assert ResampleConfig().smoothing == 1e-3
    assert ResampleConfig(a=0.6, link_a_h=True).smoothing == pytest.approx(0.8)
    for bad in ({"a": 1.5}, {"h": -0.1}, {"threshold": 2.0}):
        with pytest.raises(ValueError):
            ResampleConfig(**bad)


def test_a1_h0_gives_parent_copies():
    rng = np.random.default_rng(2)
    xi = rng.uniform(0, 10, 50)
    w = rng.dirichlet(np.ones(50))
    states = np.array([qubit.angle_to_density(t) for t in rng.uniform(-1, 1, 50)])
    ps = weighted_set(xi, w, seed=9, states=states)
    child = liu_west_resample(ps, ResampleConfig(a=1.0, h=0.0))
    parents = sample_parents(w, make_rng(9), 50)
    np.testing.assert_array_equal(child.ensemble.xi, xi[parents])
    np.testing.assert_array_equal(child.ensemble.states, states[parents])
    assert child.resample_count == 1
    assert np.all(child.ensemble.weights == 1 / 50)
    assert abs(child.ensemble.weights.sum() - 1.0) <= 1e-12


def test_shared_value_zero_h_is_fixed_point():
    ps = weighted_set(np.full(20, 3.3), np.random.default_rng(0).dirichlet(np.ones(20)))
    child = liu_west_resample(ps, ResampleConfig(a=0.5, h=0.0))
    np.testing.assert_array_equal(child.ensemble.xi, np.full(20, 3.3))
    child = liu_west_resample(ps, ResampleConfig(a=0.5, h=0.3))
    np.testing.assert_array_equal(child.ensemble.xi, np.full(20, 3.3))


def test_linked_kernel_keeps_variance():
    rng = np.random.default_rng(3)
    xi = rng.normal(4.0, 1.5, 500)
    w = rng.dirichlet(np.ones(500))
    mean = np.dot(w, xi)
    var = np.dot(w, (xi - mean) ** 2)
    ps = weighted_set(xi, w, seed=1)
    cfg = ResampleConfig(a=0.9, link_a_h=True)
    ratios = []
    for _ in range(200):
        child = liu_west_resample(ps, cfg)
        ratios.append(np.var(child.ensemble.xi) / var)
        ps = replace(ps, rng=child.rng)
    assert 0.9 <= np.mean(ratios) <= 1.1


def test_parent_selection_frequencies():
    w = np.array([0.05, 0.4, 0.0, 0.15, 0.3, 0.1])
    n = 200_000
    counts = np.bincount(sample_parents(w, make_rng(5), n), minlength=w.size)
    assert counts[2] == 0
    sigma = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(counts - n * w) <= 3 * sigma + 1e-12)


def test_mean_reversion():
    rng = np.random.default_rng(4)
    xi = rng.uniform(0, 10, 100)
    w = rng.dirichlet(np.ones(100))
    xbar = np.dot(w, xi)
    a, h = 0.7, 0.5
    gen = make_rng(6)
    gaps = []
    for _ in range(2000):
        parents = sample_parents(w, gen, 100)
        child = kernel_children(xi, w, parents, a, h, gen)
        gaps.append(child.mean() - (a * xi[parents].mean() + (1 - a) * xbar))
    gaps = np.array(gaps)
    assert abs(gaps.mean()) <= 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


def test_children_stay_in_support():
    xi = np.array([0.01, 0.02, 9.99])
    ps = weighted_set(xi, [0.4, 0.4, 0.2], support=(0.0, 10.0))
    for _ in range(50):
        ps = liu_west_resample(ps, ResampleConfig(a=0.5, h=1.0))
        assert np.all((ps.ensemble.xi >= 0.0) & (ps.ensemble.xi <= 10.0))


def test_threshold_zero_matches_ensemble_step():
    ps = init_particles(UniformPrior(0, 10), 30, PLUS_X, 1, H0, L)
    ens = ps.ensemble
    rng = np.random.default_rng(8)
    cfg = ResampleConfig(threshold=0.0)
    for _ in range(100):
        dM = rng.normal() * 1e-2
        ps = pf_step(ps, dM, CFG, cfg)
        ens = ensemble_step(ens, dM, CFG)
    np.testing.assert_array_equal(ps.ensemble.weights, ens.weights)
    np.testing.assert_array_equal(ps.ensemble.states, ens.states)
    assert ps.resample_count == 0


def test_fresh_set_does_not_retrigger():
    ps = init_particles(UniformPrior(0, 10), 40, PLUS_X, 1, H0, L)
    assert n_eff(ps.ensemble.weights) / len(ps) == pytest.approx(1.0)
    out = pf_step(ps, 0.0, CFG, ResampleConfig(threshold=0.99))
    assert out.resample_count == 0


def test_filter_record_resamples_and_snapshots(tmp_path):
    rec, _ = simulate_qubit(5.0, 1.0, 1e-4, 20_000, 1)
    ps = init_particles(UniformPrior(0, 10), 100, PLUS_X, 2, H0, L)
    final, snaps = filter_record(ps, rec, CFG, ResampleConfig(), snapshot_steps=[0, 10_000, 20_000])
    assert [s[0] for s in snaps] == [0, 10_000, 20_000]
    assert final.resample_count >= 1
    assert snaps[-1][1] == final.resample_count
    assert abs(final.ensemble.weights.sum() - 1) <= 1e-9
    write_snapshots(tmp_path / "s.csv", 1e-4, snaps)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("t,resample_count,xi_1,")
    assert lines[0].endswith(",w_100")
    assert len(lines) == 4


def test_filter_record_matches_stepwise():
    rec, _ = simulate_qubit(5.0, 1.0, 1e-4, 8000, 2)
    cfg = ResampleConfig(threshold=0.95, h=0.1)
    a = init_particles(UniformPrior(0, 10), 20, PLUS_X, 3, H0, L)
    b = init_particles(UniformPrior(0, 10), 20, PLUS_X, 3, H0, L)
    for dM in rec.increments:
        a = pf_step(a, dM, CFG, cfg)
    b, _ = filter_record(b, rec, CFG, cfg)
    assert a.resample_count == b.resample_count > 0
    np.testing.assert_allclose(a.ensemble.xi, b.ensemble.xi, atol=1e-12)
    np.testing.assert_allclose(a.ensemble.weights, b.ensemble.weights, atol=1e-12)


def test_single_particle_estimate():
    ps = weighted_set([5.0], [1.0])
    assert ps.estimate() == (5.0, 0.0)
