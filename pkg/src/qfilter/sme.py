"""Ito-Euler integration of the homodyne stochastic master equation.

The conditional state obeys

    dρ = -i[H,ρ]dt + (LρL† - ½L†Lρ - ½ρL†L)dt + (Lρ + ρL† - Tr((L+L†)ρ)ρ) dW

with innovation dW = dM - Tr((L+L†)ρ)dt. The filter can be driven by an
external record of increments dM, or used to generate such a record by
simulating the true system (:func:`simulate_truth`).

Two explicit first-order schemes are available:

``"euler"``
    The plain Ito-Euler increment ρ + drift·dt + diffusion·dW.
``"kraus"`` (default)
    ρ' = MρM†/Tr(MρM†) with M = I - (iH + ½L†L)dt + L·dM. Expanding to
    first order reproduces the Euler increment, but the update is completely
    positive, so states stay positive and pure states stay pure. Plain Euler
    lets Tr(ρ²) of a pure state random-walk by ~1e-2 over a unit-time run at
    dt = 1e-4.

After each step the state can be renormalized (unit trace, Hermitian part).
Positivity is not projected; it is monitored through the purity and an
:class:`IntegrationError` is raised once Tr(ρ²)/Tr(ρ)² exceeds ``1 + 1e-3``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from ._backend import jit
from .operators import DimensionError, as_operator, dagger

PURITY_SLACK = 1e-3

OK = 0
NON_FINITE = 1
NOT_POSITIVE = 2
WEIGHTS_VANISHED = 3

SCHEMES = {"euler": 0, "kraus": 1}

_STATUS_TEXT = {
    NON_FINITE: "state became non-finite; reduce dt",
    NOT_POSITIVE: "state lost positivity (purity above 1 + 1e-3); reduce dt",
    WEIGHTS_VANISHED: "all ensemble weights were clipped to zero",
}


class IntegrationError(RuntimeError):
    """The explicit integrator diverged or left the state space."""

    def __init__(self, status: int, step: int | None = None):
        self.status = status
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(_STATUS_TEXT.get(status, f"integration failed (status {status})") + where)


def raise_for_status(status: int, step: int | None = None) -> None:
    if status != OK:
        raise IntegrationError(status, step)


@dataclass(frozen=True)
class SdeConfig:
    """Step size (units of 1/κ), RNG seed, renormalization and scheme."""

    dt: float = 1e-4
    seed: int = 0
    renormalize: bool = True
    scheme: str = "kraus"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {tuple(SCHEMES)}, got {self.scheme!r}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator; ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def n_steps_for(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1:
        raise ValueError(f"duration {duration} shorter than one step of {dt}")
    return n


@dataclass
class MeasurementRecord:
    """Homodyne increments dM_k on the grid t0 + k·dt."""

    dt: float
    increments: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.increments.ndim != 1:
            raise ValueError("increments must be one-dimensional")
        if not np.all(np.isfinite(self.increments)):
            raise ValueError("increments must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return self.increments.size

    @property
    def duration(self) -> float:
        return self.increments.size * self.dt

    @property
    def times(self) -> np.ndarray:
        """Start time of each increment."""
        return self.t0 + self.dt * np.arange(self.increments.size)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,dM\n")
            for t, dm in zip(self.times, self.increments):
                fh.write(f"{t:.17g},{dm:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "MeasurementRecord":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "dM"]:
                raise ValueError(f"expected header 't,dM', got {header}")
            rows = [(float(t), float(dm)) for t, dm in reader]
        if len(rows) < 2:
            raise ValueError("record needs at least two rows to infer dt")
        t = np.array([r[0] for r in rows])
        dt = float(np.mean(np.diff(t)))
        return cls(dt=dt, increments=np.array([r[1] for r in rows]), t0=float(t[0]))


# ---------------------------------------------------------------------------
# Density matrices


def pure_state(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, np.conj(v))


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.trace(rho @ rho)))


def check_density_matrix(rho, tol: float = 1e-9) -> np.ndarray:
    """Validate Hermiticity, unit trace and the purity bound; return the array."""
    rho = as_operator(rho)
    if np.max(np.abs(rho - dagger(rho))) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError("density matrix does not have unit trace")
    if purity(rho) > 1.0 + 1e-6:
        raise ValueError("density matrix is not positive (purity above 1)")
    return rho


# ---------------------------------------------------------------------------
# Vectorized (numpy) step on a stack of states


def measurement_expectations(rhos: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Tr((L+L†)ρ_i) for a stack ``rhos`` of shape (N, d, d)."""
    lpl = l + dagger(l)
    return np.einsum("ij,nji->n", lpl, rhos).real


def _status_of(rhos: np.ndarray) -> int:
    if not np.all(np.isfinite(rhos)):
        return NON_FINITE
    tr = np.einsum("nii->n", rhos).real
    pur = np.einsum("nij,nij->n", rhos, np.conj(rhos)).real
    if np.any(pur > (1.0 + PURITY_SLACK) * tr * tr):
        return NOT_POSITIVE
    return OK


def sme_update(rhos, hs, l, dM, m, dt, renormalize, scheme="kraus"):
    """One step for each state in a stack, each driven by its own innovation.

    ``m`` holds the pre-step expectations Tr((L+L†)ρ_i). Returns the new stack
    and a status code. The Kraus scheme always divides by the trace.
    """
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        ld = dagger(l)
        ldl = ld @ l
        if scheme == "kraus":
            d = l.shape[0]
            ms = np.eye(d) - (1j * hs + 0.5 * ldl) * dt + l * dM
            new = ms @ rhos @ np.conj(np.swapaxes(ms, -1, -2))
            if not renormalize:
                new = new / np.einsum("nii->n", new).real[:, None, None]
        else:
            lr = l @ rhos
            rld = rhos @ ld
            drift = -1j * (hs @ rhos - rhos @ hs) + lr @ ld - 0.5 * (ldl @ rhos + rhos @ ldl)
            diffusion = lr + rld - m[:, None, None] * rhos
            dw = dM - m * dt
            new = rhos + drift * dt + diffusion * dw[:, None, None]
        if renormalize:
            new = 0.5 * (new + np.conj(np.swapaxes(new, -1, -2)))
            new = new / np.einsum("nii->n", new).real[:, None, None]
    return new, _status_of(new)


def innovation(rho, l, dM: float, dt: float) -> float:
    """dM - Tr((L+L†)ρ)dt."""
    rho, l = as_operator(rho), as_operator(l)
    if rho.shape != l.shape:
        raise DimensionError(f"dimension mismatch: {rho.shape} vs {l.shape}")
    return float(dM - measurement_expectations(rho[None], l)[0] * dt)


def sme_step(rho, h, l, dM: float, cfg: SdeConfig) -> np.ndarray:
    """Advance a density matrix by one step given the increment ``dM``."""
    rho, h, l = as_operator(rho), as_operator(h), as_operator(l)
    if not (rho.shape == h.shape == l.shape):
        raise DimensionError(f"dimension mismatch: {rho.shape}, {h.shape}, {l.shape}")
    m = measurement_expectations(rho[None], l)
    new, status = sme_update(rho[None], h[None], l, dM, m, cfg.dt, cfg.renormalize, cfg.scheme)
    raise_for_status(status)
    return new[0]


# ---------------------------------------------------------------------------
# Compiled kernels


def l_products(l: np.ndarray):
    """Contiguous (L†, L†L, L+L†) for the kernels."""
    ld = np.ascontiguousarray(dagger(l))
    return ld, np.ascontiguousarray(ld @ l), np.ascontiguousarray(l + ld)


@jit
def trace_product(a, rho):
    """Re Tr(a ρ)."""
    d = rho.shape[0]
    s = 0.0 + 0.0j
    for i in range(d):
        for j in range(d):
            s += a[i, j] * rho[j, i]
    return s.real


@jit
def _euler_increment(rho, h, l, ld, ldl, dM, m, dt, lr, out):
    d = rho.shape[0]
    dw = dM - m * dt
    for i in range(d):
        for j in range(d):
            acc = 0.0 + 0.0j
            for k in range(d):
                acc += l[i, k] * rho[k, j]
            lr[i, j] = acc
    for i in range(d):
        for j in range(d):
            hr = 0.0 + 0.0j
            rh = 0.0 + 0.0j
            lrl = 0.0 + 0.0j
            ar = 0.0 + 0.0j
            ra = 0.0 + 0.0j
            rld = 0.0 + 0.0j
            for k in range(d):
                hr += h[i, k] * rho[k, j]
                rh += rho[i, k] * h[k, j]
                lrl += lr[i, k] * ld[k, j]
                ar += ldl[i, k] * rho[k, j]
                ra += rho[i, k] * ldl[k, j]
                rld += rho[i, k] * ld[k, j]
            drift = -1j * (hr - rh) + lrl - 0.5 * (ar + ra)
            diffusion = lr[i, j] + rld - m * rho[i, j]
            out[i, j] = rho[i, j] + drift * dt + diffusion * dw


@jit
def _kraus_increment(rho, h, l, ldl, dM, dt, mk, mr, out):
    d = rho.shape[0]
    for i in range(d):
        for j in range(d):
            v = -(1j * h[i, j] + 0.5 * ldl[i, j]) * dt + l[i, j] * dM
            if i == j:
                v += 1.0
            mk[i, j] = v
    for i in range(d):
        for j in range(d):
            acc = 0.0 + 0.0j
            for k in range(d):
                acc += mk[i, k] * rho[k, j]
            mr[i, j] = acc
    tr = 0.0
    for i in range(d):
        for j in range(d):
            acc = 0.0 + 0.0j
            for k in range(d):
                acc += mr[i, k] * np.conj(mk[j, k])
            out[i, j] = acc
        tr += out[i, i].real
    for i in range(d):
        for j in range(d):
            out[i, j] = out[i, j] / tr


@jit
def step_member(rho, h, l, ld, ldl, dM, m, dt, renormalize, scheme, s1, s2, out):
    """Advance one state in place and return a status code.

    ``s1``, ``s2`` and ``out`` are (d, d) complex scratch arrays.
    """
    d = rho.shape[0]
    if scheme == 1:
        _kraus_increment(rho, h, l, ldl, dM, dt, s1, s2, out)
    else:
        _euler_increment(rho, h, l, ld, ldl, dM, m, dt, s1, out)
    if renormalize:
        tr = 0.0
        for i in range(d):
            tr += out[i, i].real
        for i in range(d):
            for j in range(i, d):
                v = 0.5 * (out[i, j] + np.conj(out[j, i])) / tr
                rho[i, j] = v
                rho[j, i] = np.conj(v)
    else:
        for i in range(d):
            for j in range(d):
                rho[i, j] = out[i, j]
    tr = 0.0
    pur = 0.0
    for i in range(d):
        tr += rho[i, i].real
        for j in range(d):
            z = rho[i, j]
            if not (np.isfinite(z.real) and np.isfinite(z.imag)):
                return 1
            pur += z.real * z.real + z.imag * z.imag
    if not np.isfinite(tr):
        return 1
    if pur > (1.0 + 1e-3) * tr * tr:
        return 2
    return 0


@jit
def _truth_loop_numba(rho, h, l, ld, ldl, lpl, noise, dt, renormalize, scheme, dm_out, path_out, stride):
    d = rho.shape[0]
    s1 = np.empty((d, d), dtype=np.complex128)
    s2 = np.empty((d, d), dtype=np.complex128)
    out = np.empty((d, d), dtype=np.complex128)
    path_out[0] = rho
    for k in range(noise.size):
        m = trace_product(lpl, rho)
        dM = m * dt + noise[k]
        dm_out[k] = dM
        status = step_member(rho, h, l, ld, ldl, dM, m, dt, renormalize, scheme, s1, s2, out)
        if status != 0:
            return status, k
        if (k + 1) % stride == 0:
            path_out[(k + 1) // stride] = rho
    return 0, noise.size


def _truth_loop_numpy(rho, h, l, ld, ldl, lpl, noise, dt, renormalize, scheme, dm_out, path_out, stride):
    scheme_name = "kraus" if scheme == SCHEMES["kraus"] else "euler"
    state = rho[None].copy()
    hs = h[None]
    path_out[0] = rho
    for k in range(noise.size):
        m = np.array([np.trace(lpl @ state[0]).real])
        dM = m[0] * dt + noise[k]
        dm_out[k] = dM
        state, status = sme_update(state, hs, l, dM, m, dt, renormalize, scheme_name)
        if status != OK:
            return status, k
        if (k + 1) % stride == 0:
            path_out[(k + 1) // stride] = state[0]
    rho[...] = state[0]
    return OK, noise.size


def integrate_truth(rho0, h, l, noise, dt: float, renormalize: bool = True,
                    path_stride: int = 1, scheme: str = "kraus"):
    """Evolve the true-system filter on given Wiener increments.

    Returns ``(dM, path)`` where ``dM = Tr((L+L†)ρ)dt + noise`` per step and
    ``path`` holds the state every ``path_stride`` steps, starting with ``rho0``.
    """
    rho = np.array(as_operator(rho0), dtype=np.complex128)
    h = np.ascontiguousarray(as_operator(h))
    l = np.ascontiguousarray(as_operator(l))
    if not (rho.shape == h.shape == l.shape):
        raise DimensionError("rho0, h and l must share a dimension")
    noise = np.ascontiguousarray(noise, dtype=float)
    stride = int(path_stride)
    if stride < 1:
        raise ValueError("path_stride must be >= 1")
    dm = np.empty(noise.size)
    path = np.empty((noise.size // stride + 1,) + rho.shape, dtype=np.complex128)
    kernel = _truth_loop_numba if _backend.get_backend() == "numba" else _truth_loop_numpy
    status, k = kernel(rho, h, l, *l_products(l), noise, float(dt), bool(renormalize),
                       SCHEMES[scheme], dm, path, stride)
    raise_for_status(status, k)
    return dm, path


def wiener_increments(rng: np.random.Generator, n: int, dt: float) -> np.ndarray:
    return rng.standard_normal(n) * np.sqrt(dt)


def simulate_truth(rho0, h_true, l, duration: float, cfg: SdeConfig, path_stride: int = 1):
    """Generate a measurement record by simulating the true system.

    Draws dW ~ N(0, dt) from a Philox generator seeded with ``cfg.seed`` and
    returns ``(MeasurementRecord, path)``; see :func:`integrate_truth`.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    n = n_steps_for(duration, cfg.dt)
    noise = wiener_increments(make_rng(cfg.seed), n, cfg.dt)
    dm, path = integrate_truth(rho0, h_true, l, noise, cfg.dt, cfg.renormalize,
                               path_stride, cfg.scheme)
    return MeasurementRecord(dt=cfg.dt, increments=dm), path
