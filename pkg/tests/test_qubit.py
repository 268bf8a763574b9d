import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from qfilter import backend, qubit
from qfilter.ensemble import EnsembleState
from qfilter.ensemble import filter_record as density_filter
from qfilter.experiments import simulate_qubit
from qfilter.particles import ResampleConfig
from qfilter.qubit import (
    QubitEnsemble,
    QubitMember,
    angle_filter_step,
    angle_to_density,
    bloch_vector,
    density_to_angle,
    joint_resample,
    qubit_ensemble_step,
    wrap_angle,
)
from qfilter.sme import SdeConfig, make_rng

DT = 1e-4


def test_sigma_z_eigenstates_are_fixed_points():
    up = angle_filter_step(np.pi / 2, 0.0, 1.0, 2 * DT, DT)
    down = angle_filter_step(-np.pi / 2, 0.0, 1.0, -2 * DT, DT)
    assert up == pytest.approx(np.pi / 2, abs=1e-15)
    assert down == pytest.approx(-np.pi / 2, abs=1e-15)
    k = 2.5
    assert angle_filter_step(np.pi / 2, 0.0, k, 2 * np.sqrt(k) * DT, DT) == pytest.approx(np.pi / 2, abs=1e-15)


def test_angle_step_rejects_bad_input():
    with pytest.raises(ValueError):
        angle_filter_step(0.0, 1.0, 0.0, 0.0, DT)
    with pytest.raises(ValueError):
        angle_filter_step(0.0, 1.0, 1.0, 0.0, -DT)
    with pytest.raises(ValueError):
        angle_filter_step(np.nan, 1.0, 1.0, 0.0, DT)


def test_shared_innovation_drift_reduces_to_known_field():
    th, kap, e = sp.symbols("theta kappa e", real=True)
    ensemble_drift = 2 * kap * sp.cos(th) * (2 * e - sp.sin(th))
    assert sp.simplify(ensemble_drift.subs(e, sp.sin(th)) - kap * sp.sin(2 * th)) == 0


@given(st.floats(-10, 10), st.floats(-5, 5), st.floats(0.1, 4), st.integers(0, 2**32 - 1))
def test_single_member_is_bitwise_known_field(theta, b, kappa, seed):
    rng = np.random.default_rng(seed)
    ens = QubitEnsemble.uniform([b], theta0=theta)
    th = theta
    for _ in range(20):
        dM = rng.normal() * np.sqrt(DT)
        ens = qubit_ensemble_step(ens, kappa, dM, DT)
        th = angle_filter_step(th, b, kappa, dM, DT)
        assert ens.theta[0] == th
        assert ens.weights[0] == 1.0


def test_single_member_compiled_loop_is_bitwise(each_backend):
    rec, _ = simulate_qubit(1.5, 1.0, DT, 5000, 0)
    final, _, _ = qubit.filter_record(QubitEnsemble.uniform([1.5]), rec, 1.0)
    th = np.zeros(1)
    for dM in rec.increments:
        th = angle_filter_step(th, 1.5, 1.0, dM, DT)
    assert final.theta[0] == th[0]


def test_shared_angle_keeps_weights():
    ens = QubitEnsemble(np.full(3, 0.4), np.array([1.0, 2.0, 3.0]), np.array([0.2, 0.3, 0.5]))
    out = qubit_ensemble_step(ens, 1.0, 0.01, DT)
    np.testing.assert_array_equal(out.weights, ens.weights)


def test_member_list_interface():
    members = [QubitMember(0.0, 1.0, 0.5), QubitMember(0.0, 2.0, 0.5)]
    out = qubit_ensemble_step(members, 1.0, 0.003, DT)
    assert isinstance(out[0], QubitMember)
    assert sum(m.weight for m in out) == pytest.approx(1.0, abs=1e-15)


def test_angle_and_density_ensembles_agree():
    """Weights from the angle and 2x2 density-matrix filters stay within 50·dt."""
    values = [2.0, 5.0, 8.0, 12.0]
    n = 100_000
    h0, l = qubit.qubit_operators(1.0)
    worst = 0.0
    for seed in range(3):
        rec, _ = simulate_qubit(values[seed], 1.0, DT, n, seed)
        steps = list(range(0, n + 1, 100))
        _, snaps, _ = qubit.filter_record(QubitEnsemble.uniform(values), rec, 1.0, snapshot_steps=steps)
        ang = np.array([s[2].weights for s in snaps])
        ens = EnsembleState.uniform(values, angle_to_density(0.0), h0, l)
        _, dens = density_filter(ens, rec, SdeConfig(dt=DT), stride=100)
        worst = max(worst, np.abs(ang - dens).max())
    assert worst <= 50 * DT


def test_angle_path_tracks_density_path():
    n = 100_000
    h0, l = qubit.qubit_operators(1.0)
    rec, path = simulate_qubit(1.0, 1.0, DT, n, 4, path_stride=1)
    thd = np.unwrap(np.arctan2((path[:, 0, 0] - path[:, 1, 1]).real, 2 * path[:, 0, 1].real))
    th = np.zeros(1)
    out = [0.0]
    for dM in rec.increments:
        th = angle_filter_step(th, 1.0, 1.0, dM, DT)
        out.append(th[0])
    assert np.abs(np.array(out) - thd).max() <= 50 * DT


@given(st.floats(-50, 50))
def test_representation_helpers(theta):
    sx, sz = bloch_vector(theta)
    assert sx * sx + sz * sz == pytest.approx(1.0)
    w = wrap_angle(theta)
    assert -np.pi < w <= np.pi
    assert np.cos(w) == pytest.approx(np.cos(theta), abs=1e-9)
    rho = angle_to_density(theta)
    assert np.trace(rho @ rho).real == pytest.approx(1.0)
    assert wrap_angle(density_to_angle(rho) - theta) == pytest.approx(0.0, abs=1e-9)


def test_joint_resample_copies_with_a1_h0():
    rng = np.random.default_rng(0)
    ens = QubitEnsemble(rng.normal(size=30), rng.uniform(0, 10, 30), rng.dirichlet(np.ones(30)))
    out = joint_resample(ens, ResampleConfig(a=1.0, h=0.0), make_rng(3))
    parents = qubit.sample_parents(ens.weights, make_rng(3), 30)
    np.testing.assert_array_equal(out.b, ens.b[parents])
    np.testing.assert_array_equal(out.theta, ens.theta[parents])
    assert np.all(out.weights == 1 / 30)


def test_joint_resample_degenerate_ensemble_unchanged():
    ens = QubitEnsemble(np.full(10, 0.3), np.full(10, 4.0), np.random.default_rng(1).dirichlet(np.ones(10)))
    out = joint_resample(ens, ResampleConfig(a=0.9, h=0.5), make_rng(0))
    np.testing.assert_array_equal(out.theta, ens.theta)
    np.testing.assert_array_equal(out.b, ens.b)


def test_joint_resample_fallback_for_collinear_ensemble():
    b = np.linspace(1, 9, 20)
    ens = QubitEnsemble(np.full(20, 0.2), b, np.full(20, 0.05))
    out = joint_resample(ens, ResampleConfig(a=0.9, h=0.5), make_rng(0), support=(0, 10))
    # theta has zero spread, so only B is kernel-sampled and theta is copied.
    np.testing.assert_array_equal(out.theta, ens.theta)
    assert len(np.unique(out.b)) > 10
    single = joint_resample(QubitEnsemble([0.1], [3.0], [1.0]), ResampleConfig(), make_rng(0))
    assert (single.theta[0], single.b[0]) == (0.1, 3.0)


def test_joint_resample_spread_and_support():
    rng = np.random.default_rng(2)
    n = 4000
    theta = rng.normal(0.0, 0.5, n)
    b = 5.0 + 2.0 * theta + rng.normal(0, 0.3, n)
    ens = QubitEnsemble(theta, b, np.full(n, 1 / n))
    out = joint_resample(ens, ResampleConfig(a=0.6, link_a_h=True), make_rng(5), support=(0, 10))
    assert np.all((out.b >= 0) & (out.b <= 10))
    cov_in = np.cov(np.vstack([ens.b, ens.theta]))
    cov_out = np.cov(np.vstack([out.b, out.theta]))
    np.testing.assert_allclose(cov_out, cov_in, rtol=0.15, atol=0.02)
    assert np.all(np.linalg.eigvalsh(cov_in) >= 0)


def test_backends_agree():
    rec, _ = simulate_qubit(5.0, 1.0, DT, 20_000, 3)
    ens = QubitEnsemble.uniform(np.linspace(0, 10, 50))
    out = {}
    for name in ("numba", "numpy"):
        with backend(name):
            out[name] = qubit.filter_record(ens, rec, 1.0, resample=ResampleConfig(), rng=make_rng(1),
                                            support=(0, 10), snapshot_steps=[10_000])
    assert out["numba"][2] == out["numpy"][2]
    np.testing.assert_allclose(out["numba"][0].b, out["numpy"][0].b, atol=1e-9)
    np.testing.assert_allclose(out["numba"][0].weights, out["numpy"][0].weights, atol=1e-9)


def test_filter_record_needs_rng_for_resampling():
    rec, _ = simulate_qubit(5.0, 1.0, DT, 10, 3)
    with pytest.raises(ValueError):
        qubit.filter_record(QubitEnsemble.uniform([1.0, 2.0]), rec, resample=ResampleConfig())


def test_validation():
    with pytest.raises(ValueError):
        QubitEnsemble([0.0], [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        QubitEnsemble([0.0], [1.0], [-1.0])


def test_snapshot_csv(tmp_path):
    ens = QubitEnsemble.uniform([1.0, 2.0])
    qubit.write_snapshots(tmp_path / "q.csv", DT, [(0, 0, ens), (10, 1, ens)])
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "t,resample_count,theta_1,theta_2,B_1,B_2,p_1,p_2"
    assert lines[2].startswith("0.001,1,")
