"""Time the compiled kernels against the pure-numpy fallback and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--steps N]
"""
import argparse
import time

import numpy as np

from qfilter import backend, qubit
from qfilter.ensemble import EnsembleState, advance
from qfilter.sme import SdeConfig, integrate_truth, make_rng, wiener_increments


def truth_case(steps, dt):
    h0, l = qubit.qubit_operators(1.0)
    noise = wiener_increments(make_rng(0), steps, dt)
    return lambda: integrate_truth(qubit.angle_to_density(0.0), h0, l, noise, dt)[0]


def ensemble_case(steps, dt, record):
    h0, l = qubit.qubit_operators(1.0)
    ens = EnsembleState.uniform([2.0, 5.0, 8.0, 12.0], qubit.angle_to_density(0.0), h0, l)

    def go():
        states, weights = ens.states.copy(), ens.weights.copy()
        advance(states, weights, ens.hamiltonians(), l, record, 0, steps, SdeConfig(dt=dt))
        return weights

    return go


def qubit_case(steps, dt, record, n):
    b = np.linspace(0.0, 10.0, n)

    def go():
        theta, p = np.zeros(n), np.full(n, 1.0 / n)
        qubit.advance(theta, b.copy(), p, record, 0, steps, 1.0, dt)
        return p

    return go


def timed(fn, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=20_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    dt = 1e-4
    record = truth_case(args.steps, dt)()
    cases = {
        "truth SME (2x2)": truth_case(args.steps, dt),
        "ensemble SME, N=4": ensemble_case(args.steps, dt, record),
        "qubit angles, N=1000": qubit_case(args.steps, dt, record, 1000),
    }
    print(f"{'kernel':<24}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases.items():
        with backend("numba"):
            fn()  # compile
            t_nb, out_nb = timed(fn, args.repeats)
        with backend("numpy"):
            t_np, out_np = timed(fn, 1)
        diff = float(np.max(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
        print(f"{name:<24}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
