"""Qubit magnetometer in the Bloch-angle representation.

A qubit starting in |+x⟩ precesses under H = Bσ_y while σ_z is measured with
L = √κ σ_z. Its conditional state stays pure on the x-z great circle, so it
is fully described by the angle θ from the +x axis: Bloch vector
(cos θ, 0, sin θ). The known-field filter is

    dθ = -2B dt + κ sin(2θ) dt + 2√κ cos θ dW,    dW = dM - 2√κ sin θ dt.

For an ensemble of candidate fields with e = Σ p_i sin θ_i and the shared
innovation dW = dM - 2√κ e dt,

    dθ_i = -2B_i dt + 2κ cos θ_i (2e - sin θ_i) dt + 2√κ cos θ_i dW
    dp_i = 2√κ (sin θ_i - e) p_i dW.

The θ drift is the known-field drift rewritten for the shared innovation,
so a single member reduces exactly to the known-field filter. The angle
step adds the Milstein term -2κ sin θ cos θ (dM² - dt), which keeps it in
step with the density-matrix integrator (strong order one for L ∝ σ_z).
θ is never wrapped while integrating; :func:`wrap_angle` is for display only.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _backend
from ._backend import jit
from .operators import SIGMA_Y, SIGMA_Z, IDENTITY, SIGMA_X
from .particles import MAX_REDRAWS, ResampleConfig, kernel_children, sample_parents, shifted_mean
from .sme import WEIGHTS_VANISHED, MeasurementRecord, raise_for_status


class QubitMember(NamedTuple):
    theta: float
    b: float
    weight: float


def wrap_angle(theta):
    """Reduce to (-π, π]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


def bloch_vector(theta) -> np.ndarray:
    """(sx, sz) for each angle."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def angle_to_density(theta) -> np.ndarray:
    return 0.5 * (IDENTITY + np.cos(theta) * SIGMA_X + np.sin(theta) * SIGMA_Z)


def density_to_angle(rho) -> float:
    rho = np.asarray(rho)
    sx = 2.0 * rho[0, 1].real
    sz = (rho[0, 0] - rho[1, 1]).real
    return float(np.arctan2(sz, sx))


def qubit_operators(kappa: float = 1.0):
    """(H_0, L) = (σ_y, √κ σ_z)."""
    return SIGMA_Y.copy(), np.sqrt(kappa) * SIGMA_Z


def _check_rates(kappa, dt):
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")


def _angle_update(theta, b, kappa, e, dW, dM, dt):
    s = np.sin(theta)
    c = np.cos(theta)
    return (theta + (-2.0 * b + 2.0 * kappa * c * (2.0 * e - s)) * dt + 2.0 * np.sqrt(kappa) * c * dW
            - 2.0 * kappa * s * c * (dM * dM - dt))


def angle_filter_step(theta, b, kappa: float, dM, dt: float):
    """Known-field filter step; vectorizes over independent trajectories."""
    _check_rates(kappa, dt)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or not np.all(np.isfinite(dM)):
        raise ValueError("non-finite input")
    s = np.sin(theta)
    dW = dM - 2.0 * np.sqrt(kappa) * s * dt
    return _angle_update(theta, b, kappa, s, dW, dM, dt)


@dataclass(frozen=True)
class QubitEnsemble:
    """Angles, field values and weights of an ensemble of qubit filters."""

    theta: np.ndarray
    b: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        b = np.asarray(self.b, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if not (theta.ndim == 1 and theta.shape == b.shape == w.shape) or theta.size == 0:
            raise ValueError("theta, b and weights must be equal-length non-empty vectors")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, b_values: Sequence[float], theta0: float = 0.0, weights=None) -> "QubitEnsemble":
        b = np.asarray(b_values, dtype=float)
        w = np.full(b.size, 1.0 / b.size) if weights is None else np.asarray(weights, dtype=float)
        return cls(np.full(b.size, float(theta0)), b, w)

    @classmethod
    def from_members(cls, members: Sequence[QubitMember]) -> "QubitEnsemble":
        arr = np.array([tuple(m) for m in members], dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def members(self) -> list[QubitMember]:
        return [QubitMember(float(t), float(b), float(p)) for t, b, p in zip(self.theta, self.b, self.weights)]

    def __len__(self) -> int:
        return self.theta.size

    def sigma_z(self) -> float:
        """Ensemble expectation Σ p_i sin θ_i."""
        return float(np.dot(self.weights, np.sin(self.theta)))


def qubit_ensemble_step(ens, kappa: float, dM: float, dt: float):
    """One step of the ensemble filter; accepts a QubitEnsemble or members."""
    _check_rates(kappa, dt)
    as_members = not isinstance(ens, QubitEnsemble)
    if as_members:
        ens = QubitEnsemble.from_members(ens)
    s = np.sin(ens.theta)
    e = np.dot(ens.weights, s)
    dW = dM - 2.0 * np.sqrt(kappa) * e * dt
    theta = _angle_update(ens.theta, ens.b, kappa, e, dW, dM, dt)
    w = ens.weights + 2.0 * np.sqrt(kappa) * (s - e) * ens.weights * dW
    w = np.maximum(w, 0.0)
    total = w.sum()
    if not total > 0:
        raise_for_status(WEIGHTS_VANISHED)
    new = replace(ens, theta=theta, weights=w / total)
    return new.members if as_members else new


# ---------------------------------------------------------------------------
# Record-driven loops


@jit
def _qubit_loop_numba(theta, b, p, dms, k0, k1, kappa, dt, threshold):
    n = theta.size
    sk = np.sqrt(kappa)
    s = np.empty(n)
    for i in range(n):
        s[i] = np.sin(theta[i])
    for k in range(k0, k1):
        e = 0.0
        for i in range(n):
            e += p[i] * s[i]
        dM = dms[k]
        dW = dM - 2.0 * sk * e * dt
        total = 0.0
        for i in range(n):
            c = np.cos(theta[i])
            theta[i] = (theta[i] + (-2.0 * b[i] + 2.0 * kappa * c * (2.0 * e - s[i])) * dt
                        + 2.0 * sk * c * dW - 2.0 * kappa * s[i] * c * (dM * dM - dt))
            w = p[i] + 2.0 * sk * (s[i] - e) * p[i] * dW
            if w < 0.0:
                w = 0.0
            p[i] = w
            total += w
            s[i] = np.sin(theta[i])
        if not total > 0.0:
            return 3, k
        sq = 0.0
        for i in range(n):
            p[i] /= total
            sq += p[i] * p[i]
        if 1.0 / (sq * n) < threshold:
            return 0, k + 1
    return 0, k1


def _qubit_loop_numpy(theta, b, p, dms, k0, k1, kappa, dt, threshold):
    n = theta.size
    sk = np.sqrt(kappa)
    for k in range(k0, k1):
        s = np.sin(theta)
        e = np.dot(p, s)
        dW = dms[k] - 2.0 * sk * e * dt
        theta[...] = _angle_update(theta, b, kappa, e, dW, dms[k], dt)
        w = np.maximum(p + 2.0 * sk * (s - e) * p * dW, 0.0)
        total = w.sum()
        if not total > 0.0:
            return WEIGHTS_VANISHED, k
        p[...] = w / total
        if 1.0 / (np.dot(p, p) * n) < threshold:
            return 0, k + 1
    return 0, k1


def advance(theta, b, p, dms, k0: int, k1: int, kappa: float, dt: float, threshold: float = 0.0) -> int:
    """Run the ensemble arrays in place over ``dms[k0:k1]``; see ensemble.advance."""
    kernel = _qubit_loop_numba if _backend.get_backend() == "numba" else _qubit_loop_numpy
    status, k = kernel(theta, b, p, dms, int(k0), int(k1), float(kappa), float(dt), float(threshold))
    raise_for_status(status, k)
    return k


def _needs_resample(p, threshold):
    return 1.0 / (np.dot(p, p) * p.size) < threshold


def filter_record(ens: QubitEnsemble, record: MeasurementRecord, kappa: float = 1.0, *,
                  snapshot_steps=(), resample: ResampleConfig | None = None,
                  rng: np.random.Generator | None = None, support=None):
    """Feed a record through the qubit ensemble filter.

    Without ``resample`` this is the finite-set filter. With it, the ensemble
    is a particle set that is rebuilt by :func:`joint_resample` whenever
    N_eff/N drops below ``resample.threshold``. Returns ``(final, snapshots,
    resample_count)`` where each snapshot is ``(step, resample_count,
    QubitEnsemble)``.
    """
    dms = np.ascontiguousarray(record.increments, dtype=float)
    n = dms.size
    threshold = resample.threshold if resample is not None else 0.0
    if resample is not None and rng is None:
        raise ValueError("resampling needs an rng")
    wanted = {int(s) for s in snapshot_steps if 0 <= s <= n}
    stops = sorted(wanted | {n})
    theta, b, p = ens.theta.copy(), ens.b.copy(), ens.weights.copy()
    snapshots = []
    count = 0
    k = 0
    for stop in stops:
        while k < stop:
            k = advance(theta, b, p, dms, k, stop, kappa, record.dt, threshold)
            if resample is not None and _needs_resample(p, threshold):
                child = joint_resample(QubitEnsemble(theta, b, p), resample, rng, support)
                theta, b, p = child.theta.copy(), child.b.copy(), child.weights.copy()
                count += 1
        if stop in wanted:
            snapshots.append((stop, count, QubitEnsemble(theta.copy(), b.copy(), p.copy())))
    return QubitEnsemble(theta, b, p), snapshots, count


def joint_resample(ens, cfg: ResampleConfig, rng: np.random.Generator, support=None):
    """Liu-West resampling of (B, θ) jointly with a two-dimensional Gaussian kernel.

    Children are centred on a·(B, θ)_parent + (1-a)·(B̄, θ̄) with covariance
    h² times the weighted ensemble covariance. When that covariance has no
    Cholesky factor (fewer than two members, or a degenerate ensemble) only B
    is kernel-resampled and θ is copied from the parent. Children whose B
    leaves ``support`` are redrawn, then clamped.
    """
    as_members = not isinstance(ens, QubitEnsemble)
    if as_members:
        ens = QubitEnsemble.from_members(ens)
    n = len(ens)
    w = ens.weights
    a, h = cfg.a, cfg.smoothing
    parents = sample_parents(w, rng, n)
    x = np.column_stack([ens.b, ens.theta])
    mean = shifted_mean(x, w)
    dev = x - mean
    cov = (dev * w[:, None]).T @ dev / w.sum()
    centres = x[parents] + (1.0 - a) * (mean - x[parents])
    chol = None
    if n >= 2 and h > 0.0:
        try:
            chol = np.linalg.cholesky(h * h * cov)
        except np.linalg.LinAlgError:
            chol = None
    if h == 0.0:
        children = centres
    elif chol is not None:
        children = centres + rng.standard_normal((n, 2)) @ chol.T
        if support is not None:
            lo, hi = support
            for _ in range(MAX_REDRAWS):
                bad = (children[:, 0] < lo) | (children[:, 0] > hi)
                if not bad.any():
                    break
                children[bad] = centres[bad] + rng.standard_normal((int(bad.sum()), 2)) @ chol.T
            children[:, 0] = np.clip(children[:, 0], lo, hi)
    else:
        b_new = kernel_children(ens.b, w, parents, a, h, rng, support)
        children = np.column_stack([b_new, ens.theta[parents]])
    new = QubitEnsemble(children[:, 1].copy(), children[:, 0].copy(), np.full(n, 1.0 / n))
    return new.members if as_members else new


def write_snapshots(path, dt: float, snapshots) -> None:
    """CSV rows ``t,resample_count,theta_1..N,B_1..N,p_1..N``."""
    if not snapshots:
        raise ValueError("no snapshots to write")
    n = len(snapshots[0][2])
    header = (["t", "resample_count"] + [f"theta_{i + 1}" for i in range(n)]
              + [f"B_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for step, count, e in snapshots:
            vals = np.concatenate([e.theta, e.b, e.weights])
            fh.write(",".join([f"{step * dt:.17g}", str(count)] + [f"{v:.17g}" for v in vals]) + "\n")
