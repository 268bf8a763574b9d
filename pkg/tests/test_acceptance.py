"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run alone with ``pytest -m acceptance -s`` to see only these lines.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from qfilter.experiments import ExperimentConfig, run, with_overrides
from qfilter.observability import corollary_check, qubit_report

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

TESTS = Path(__file__).parent


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, detail

    return report


def test_ac1_observability_exact(verdict):
    start = time.perf_counter()
    pm = qubit_report([-1.0, 1.0])
    spread = qubit_report([2.0, 5.0, 8.0, 12.0])
    corollary = corollary_check([2.0, 5.0, 8.0, 12.0], True)
    elapsed = time.perf_counter() - start
    ok = ((pm["dim_observable"], pm["dim_ambient"], pm["observable"]) == (3, 6, False)
          and (spread["dim_observable"], spread["dim_ambient"], spread["observable"]) == (12, 12, True)
          and corollary.name == "OBSERVABLE" and elapsed < 1.0)
    verdict("AC1 observability", ok,
            f"±1: {pm['dim_observable']}/{pm['dim_ambient']}, {{2,5,8,12}}: "
            f"{spread['dim_observable']}/{spread['dim_ambient']}, corollary {corollary.name}, {elapsed:.3f} s")


def test_ac2_two_sign_candidates(verdict):
    cfg = ExperimentConfig(scenario="finite-set", b_values=[-1.0, 1.0], b_truth=1.0,
                           n_runs=100, seed=2024, dump_runs=False)
    s = run(cfg).summary
    frac = s["fraction_favoring_truth"]
    verdict("AC2 B in {-1,+1}", 0.68 <= frac <= 0.93, f"{s['runs_favoring_truth']}/100 favor truth, band [0.68, 0.93]")


def test_ac3_four_candidates_converge(verdict):
    cfg = ExperimentConfig(scenario="finite-set", n_runs=100, seed=2025, dump_runs=False)
    s = run(cfg).summary
    ok = s["runs_favoring_truth"] >= 95 and s["median_final_truth_weight"] > 0.95
    verdict("AC3 B in {2,5,8,12}", ok,
            f"truth is argmax in {s['runs_favoring_truth']}/100, median p(2) = {s['median_final_truth_weight']:.6f}")


def test_ac4_born_rule(verdict):
    cfg = ExperimentConfig(scenario="known-b", b_truth=0.0, n_runs=500, seed=2026, stride=100_000,
                           dump_runs=False)
    frac = run(cfg).summary["fraction_plus_z"]
    verdict("AC4 Born rule", 0.43 <= frac <= 0.57, f"fraction at +z = {frac:.3f}, band [0.43, 0.57]")


def test_ac5_particle_filter(verdict):
    cfg = ExperimentConfig(scenario="particle-filter", seed=3, dump_runs=False)
    s = run(cfg).summary
    b_hat, sigma, count = s["b_hat"][0], s["sigma_b_hat"][0], s["resample_count"][0]
    single = abs(b_hat - 5.0) <= 0.6 and sigma <= 0.5 and 2 <= count <= 20
    batch = run(with_overrides(cfg, n_runs=20, seed=4)).summary
    med = batch["median_abs_error"]
    verdict("AC5 particle filter", single and med <= 0.3,
            f"B_hat = {b_hat:.4f}, sigma = {sigma:.4f}, resamples = {count}; "
            f"20-seed median |B_hat - 5| = {med:.4f}")


def test_ac6_large_fields_converge_faster(verdict):
    cfg = ExperimentConfig(scenario="convergence-rate", n_runs=300, seed=2027, duration=5.0, stride=1000)
    curves = run(cfg).data["curves"]
    large, _ = curves["large"].at(5.0)
    small, _ = curves["small"].at(5.0)
    verdict("AC6 convergence ordering", large > small,
            f"mean I_0.95 at t=5: |B|>1 set {large:.3f}, |B|<1 set {small:.3f}")


INVARIANT_TESTS = [
    "test_ensemble.py::test_weights_stay_normalized_and_nonnegative",
    "test_sme.py::test_renormalized_step_trace_and_hermiticity",
    "test_qubit.py::test_angle_and_density_ensembles_agree",
    "test_qubit.py::test_angle_path_tracks_density_path",
    "test_qubit.py::test_single_member_is_bitwise_known_field",
    "test_qubit.py::test_single_member_compiled_loop_is_bitwise",
    "test_ensemble.py::test_member_evolution_is_reduction_of_ensemble",
    "test_ensemble.py::test_n_eff",
    "test_particles.py::test_a1_h0_gives_parent_copies",
    "test_particles.py::test_shared_value_zero_h_is_fixed_point",
    "test_sme.py::test_step_halving_shrinks_gap",
    "test_sme.py::test_angle_step_halving_shrinks_gap",
]


def test_ac7_invariant_suite(verdict):
    ids = [str(TESTS / t) for t in INVARIANT_TESTS]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    verdict("AC7 invariant suite", proc.returncode == 0, tail)


def test_ac8_determinism(tmp_path, verdict):
    configs = [
        ExperimentConfig(scenario="known-b", n_runs=3, seed=1, duration=1.0),
        ExperimentConfig(scenario="finite-set", n_runs=3, seed=1, duration=1.0, b_truth="sample"),
        ExperimentConfig(scenario="convergence-rate", n_runs=3, seed=1, duration=1.0),
        ExperimentConfig(scenario="particle-filter", n_runs=2, seed=1, duration=1.0, n_particles=200),
        ExperimentConfig(scenario="observability"),
    ]
    mismatched = []
    for k, cfg in enumerate(configs):
        a = run(cfg).write(tmp_path / f"{k}a")
        b = run(with_overrides(cfg, workers=2)).write(tmp_path / f"{k}b")
        left = {p.name: p.read_bytes() for p in a.iterdir()}
        right = {p.name: p.read_bytes() for p in b.iterdir()}
        if left != right:
            mismatched.append(cfg.scenario)
    verdict("AC8 determinism", not mismatched,
            "byte-identical reruns for all scenarios" if not mismatched else f"differs: {mismatched}")
