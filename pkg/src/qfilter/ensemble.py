"""Bayesian filter for a parameter drawn from a finite set.

Each candidate value ξ_i carries a weight p_i and a conditional atomic state
ρ_i evolving under H = ξ_i H_0. With m_i = Tr((L+L†)ρ_i) and the ensemble
expectation e = Σ p_i m_i, one step is

    dW   = dM - e·dt
    dp_i = (m_i - e) p_i dW
    ρ_i  ← SME step driven by the member's own innovation dM - m_i·dt

The member innovation equals dW - (m_i - e)dt. Writing the member equation
with the shared dW alone drops the Ito cross term between dp_i and dρ_i;
keeping it makes a member with all the weight evolve exactly as the
known-parameter filter. Weights are clipped at zero and renormalized each
step; a clipped weight stays at zero.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _backend
from ._backend import jit
from .operators import DimensionError, as_operator
from .sme import (
    OK,
    SCHEMES,
    WEIGHTS_VANISHED,
    MeasurementRecord,
    SdeConfig,
    l_products,
    measurement_expectations,
    raise_for_status,
    sme_update,
    step_member,
    trace_product,
)


class EnsembleMember(NamedTuple):
    xi: float
    weight: float
    state: np.ndarray


@dataclass(frozen=True)
class EnsembleState:
    """Candidate values, weights and conditional states of the ensemble.

    ``states`` has shape (N, d, d). ``h0`` and ``l`` are the (d, d) base
    Hamiltonian and measurement operator; member i evolves under ξ_i·h0.
    """

    xi: np.ndarray
    weights: np.ndarray
    states: np.ndarray
    h0: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        if xi.ndim != 1 or xi.size == 0:
            raise ValueError("xi must be a non-empty vector")
        if weights.shape != xi.shape:
            raise ValueError("weights and xi must have the same length")
        if states.ndim != 3 or states.shape[0] != xi.size or states.shape[1] != states.shape[2]:
            raise DimensionError(f"states must have shape (N, d, d), got {states.shape}")
        h0, l = as_operator(self.h0), as_operator(self.l)
        if not (h0.shape == l.shape == states.shape[1:]):
            raise DimensionError("h0, l and member states must share a dimension")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "l", l)

    @classmethod
    def uniform(cls, xi: Sequence[float], rho0, h0, l, weights=None) -> "EnsembleState":
        """Every member starts in ``rho0``; weights default to uniform."""
        xi = np.asarray(xi, dtype=float)
        if np.unique(xi).size != xi.size:
            raise ValueError("xi values must be pairwise distinct")
        if weights is None:
            weights = np.full(xi.size, 1.0 / xi.size)
        else:
            weights = np.asarray(weights, dtype=float)
            if abs(weights.sum() - 1.0) > 1e-9:
                raise ValueError("initial weights must sum to 1")
        states = np.repeat(as_operator(rho0)[None], xi.size, axis=0)
        return cls(xi, weights, states, h0, l)

    def __len__(self) -> int:
        return self.xi.size

    @property
    def members(self) -> list[EnsembleMember]:
        return [EnsembleMember(float(x), float(p), s) for x, p, s in zip(self.xi, self.weights, self.states)]

    def hamiltonians(self) -> np.ndarray:
        return self.xi[:, None, None] * self.h0[None]


def _weight_update(weights, m, e, dW):
    w = weights + (m - e) * weights * dW
    w = np.maximum(w, 0.0)
    total = w.sum()
    if not total > 0:
        return w, WEIGHTS_VANISHED
    return w / total, OK


def ensemble_step(ens: EnsembleState, dM: float, cfg: SdeConfig) -> EnsembleState:
    """Advance the ensemble by one increment of the measurement record."""
    m = measurement_expectations(ens.states, ens.l)
    e = float(np.dot(ens.weights, m))
    dW = dM - e * cfg.dt
    states, status = sme_update(ens.states, ens.hamiltonians(), ens.l, dM, m, cfg.dt,
                                cfg.renormalize, cfg.scheme)
    raise_for_status(status)
    weights, status = _weight_update(ens.weights, m, e, dW)
    raise_for_status(status)
    return replace(ens, weights=weights, states=states)


def posterior(ens: EnsembleState) -> dict[float, float]:
    return {float(x): float(p) for x, p in zip(ens.xi, ens.weights)}


def estimates(ens: EnsembleState) -> tuple[float, float, float]:
    """MAP value (ties go to the smaller ξ), posterior mean and variance."""
    return weighted_estimates(ens.xi, ens.weights)


def weighted_estimates(xi, weights) -> tuple[float, float, float]:
    xi = np.asarray(xi, dtype=float)
    weights = np.asarray(weights, dtype=float)
    best = weights.max()
    map_value = float(xi[weights == best].min())
    mean = float(np.dot(weights, xi))
    var = float(np.dot(weights, (xi - mean) ** 2))
    return map_value, mean, var


def n_eff(weights) -> float:
    """Effective sample size 1/Σw²."""
    w = np.asarray(weights, dtype=float)
    s2 = float(np.dot(w, w))
    if not s2 > 0:
        raise ValueError("effective sample size undefined: all weights are zero")
    return 1.0 / s2


# ---------------------------------------------------------------------------
# Record-driven loops


@jit
def _ensemble_loop_numba(states, weights, hs, l, ld, ldl, lpl, dms, k0, k1, dt,
                         renormalize, scheme, threshold):
    n = weights.size
    d = l.shape[0]
    m = np.empty(n)
    s1 = np.empty((d, d), dtype=np.complex128)
    s2 = np.empty((d, d), dtype=np.complex128)
    out = np.empty((d, d), dtype=np.complex128)
    for k in range(k0, k1):
        dM = dms[k]
        e = 0.0
        for i in range(n):
            m[i] = trace_product(lpl, states[i])
            e += weights[i] * m[i]
        dW = dM - e * dt
        for i in range(n):
            status = step_member(states[i], hs[i], l, ld, ldl, dM, m[i], dt,
                                 renormalize, scheme, s1, s2, out)
            if status != 0:
                return status, k
        total = 0.0
        for i in range(n):
            w = weights[i] + (m[i] - e) * weights[i] * dW
            if w < 0.0:
                w = 0.0
            weights[i] = w
            total += w
        if not total > 0.0:
            return 3, k
        sq = 0.0
        for i in range(n):
            weights[i] /= total
            sq += weights[i] * weights[i]
        if 1.0 / (sq * n) < threshold:
            return 0, k + 1
    return 0, k1


def _ensemble_loop_numpy(states, weights, hs, l, ld, ldl, lpl, dms, k0, k1, dt,
                         renormalize, scheme, threshold):
    scheme_name = "kraus" if scheme == SCHEMES["kraus"] else "euler"
    n = weights.size
    for k in range(k0, k1):
        dM = dms[k]
        m = np.einsum("ij,nji->n", lpl, states).real
        e = float(np.dot(weights, m))
        dW = dM - e * dt
        new, status = sme_update(states, hs, l, dM, m, dt, renormalize, scheme_name)
        if status != OK:
            return status, k
        states[...] = new
        w, status = _weight_update(weights, m, e, dW)
        if status != OK:
            return status, k
        weights[...] = w
        if 1.0 / (np.dot(w, w) * n) < threshold:
            return OK, k + 1
    return OK, k1


def advance(states, weights, hs, l, dms, k0: int, k1: int, cfg: SdeConfig, threshold: float = 0.0):
    """Run the ensemble in place over ``dms[k0:k1]``.

    Stops early, after the step that pushes N_eff/N below ``threshold``.
    Returns the index of the next unprocessed increment.
    """
    kernel = _ensemble_loop_numba if _backend.get_backend() == "numba" else _ensemble_loop_numpy
    status, k = kernel(states, weights, hs, l, *l_products(l), dms, int(k0), int(k1), cfg.dt,
                       bool(cfg.renormalize), SCHEMES[cfg.scheme], float(threshold))
    raise_for_status(status, k)
    return k


def filter_record(ens: EnsembleState, record: MeasurementRecord, cfg: SdeConfig | None = None,
                  stride: int = 0):
    """Feed a whole record through the ensemble filter.

    Returns the final state and, when ``stride > 0``, an array of weights
    sampled every ``stride`` steps (row 0 is the initial distribution).
    """
    cfg = cfg or SdeConfig(dt=record.dt)
    if not np.isclose(cfg.dt, record.dt, rtol=1e-12, atol=0.0):
        raise ValueError("cfg.dt does not match the record step")
    states = np.ascontiguousarray(ens.states, dtype=np.complex128).copy()
    weights = ens.weights.copy()
    hs = np.ascontiguousarray(ens.hamiltonians())
    l = np.ascontiguousarray(ens.l)
    dms = np.ascontiguousarray(record.increments)
    n = dms.size
    trace = None
    if stride > 0:
        trace = np.empty((n // stride + 1, weights.size))
        trace[0] = weights
        k = 0
        for row in range(1, trace.shape[0]):
            k = advance(states, weights, hs, l, dms, k, row * stride, cfg)
            trace[row] = weights
        advance(states, weights, hs, l, dms, k, n, cfg)
    else:
        advance(states, weights, hs, l, dms, 0, n, cfg)
    return replace(ens, weights=weights, states=states), trace


def write_weight_trajectory(path, times, weights, extra: dict | None = None) -> None:
    """CSV with header ``t,p_1,...,p_N`` plus optional named column blocks."""
    weights = np.asarray(weights)
    n = weights.shape[1]
    cols = ["t"] + [f"p_{i + 1}" for i in range(n)]
    blocks = [weights]
    for name, block in (extra or {}).items():
        block = np.asarray(block)
        cols += [f"{name}_{i + 1}" for i in range(block.shape[1])]
        blocks.append(block)
    data = np.column_stack([np.asarray(times)] + blocks)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
