"""Resampling quantum particle filter for a continuous parameter.

The posterior over ξ is approximated by N weighted point masses, each with
its own conditional atomic state, and propagated with the finite-ensemble
filter. When the effective sample size drops below ``threshold·N`` the set is
rebuilt by Liu-West kernel resampling: pick a parent from the weights, draw
the child value from N(a·ξ_parent + (1-a)·ξ̄, h²·V) and copy the parent's
atomic state.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ensemble import EnsembleState, advance, ensemble_step, n_eff, weighted_estimates
from .sme import MeasurementRecord, SdeConfig, make_rng

MAX_REDRAWS = 100

__all__ = [
    "ResampleConfig",
    "UniformPrior",
    "ParticleSet",
    "init_particles",
    "n_eff",
    "sample_parents",
    "liu_west_resample",
    "pf_step",
    "filter_record",
    "write_snapshots",
]


@dataclass(frozen=True)
class ResampleConfig:
    """Liu-West kernel settings.

    ``a`` shrinks children towards the ensemble mean, ``h`` scales the kernel
    spread and resampling fires when N_eff/N < ``threshold``. With
    ``link_a_h`` the smoothing is tied to the shrinkage by h² = 1 - a².
    """

    a: float = 0.98
    h: float = 1e-3
    threshold: float = 2.0 / 3.0
    link_a_h: bool = False

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must lie in [0, 1]")
        if not 0.0 <= self.h <= 1.0:
            raise ValueError("h must lie in [0, 1]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    @property
    def smoothing(self) -> float:
        if self.link_a_h:
            return float(np.sqrt(1.0 - self.a * self.a))
        return self.h


@dataclass(frozen=True)
class UniformPrior:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("UniformPrior needs high > low")

    @property
    def support(self) -> tuple[float, float]:
        return (self.low, self.high)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)


@dataclass(frozen=True)
class ParticleSet:
    """An ensemble plus resampling bookkeeping.

    ``rng`` is consumed by resampling, so a ParticleSet and the sets derived
    from it share one random stream.
    """

    ensemble: EnsembleState
    rng: np.random.Generator
    resample_count: int = 0
    support: tuple[float, float] | None = None

    def __len__(self) -> int:
        return len(self.ensemble)

    def estimate(self) -> tuple[float, float]:
        """Posterior mean and standard deviation of ξ."""
        _, mean, var = weighted_estimates(self.ensemble.xi, self.ensemble.weights)
        return mean, float(np.sqrt(var))


def init_particles(prior, n: int, rho0, seed, h0, l) -> ParticleSet:
    """Draw ``n`` values from ``prior`` with uniform weights and a shared state.

    ``prior`` needs ``sample(rng, n)``; a ``support`` attribute, if present,
    bounds later resampling.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    rng = make_rng(seed)
    xi = np.asarray(prior.sample(rng, n), dtype=float)
    states = np.repeat(np.asarray(rho0, dtype=complex)[None], n, axis=0)
    ens = EnsembleState(xi, np.full(n, 1.0 / n), states, h0, l)
    return ParticleSet(ens, rng, 0, getattr(prior, "support", None))


def sample_parents(weights, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Multinomial parent indices by inverting the cumulative weights."""
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random(n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def shifted_mean(x, w) -> np.ndarray:
    """Weighted mean along axis 0, exact when all rows are identical."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    return x[0] + np.tensordot(w, x - x[0], axes=1) / w.sum()


def _keep_inside(values, draw, support):
    """Redraw out-of-support entries of ``values`` via ``draw(mask)``; clamp at the end."""
    if support is None:
        return values
    lo, hi = support
    for _ in range(MAX_REDRAWS):
        bad = (values < lo) | (values > hi)
        if not bad.any():
            return values
        values[bad] = draw(bad)
    return np.clip(values, lo, hi)


def kernel_children(xi, weights, parents, a, h, rng, support=None) -> np.ndarray:
    """Liu-West children of the given parent indices (1-D parameter)."""
    mean = shifted_mean(xi, weights)
    var = float(np.dot(weights, (xi - mean) ** 2) / weights.sum())
    centres = xi[parents] + (1.0 - a) * (mean - xi[parents])
    sd = h * np.sqrt(var)
    if sd == 0.0:
        return centres
    children = centres + sd * rng.standard_normal(parents.size)
    return _keep_inside(children, lambda bad: centres[bad] + sd * rng.standard_normal(bad.sum()),
                        support)


def liu_west_resample(ps: ParticleSet, cfg: ResampleConfig) -> ParticleSet:
    """Rebuild the particle set by kernel resampling; child weights are 1/N."""
    ens = ps.ensemble
    n = len(ens)
    parents = sample_parents(ens.weights, ps.rng, n)
    xi = kernel_children(ens.xi, ens.weights, parents, cfg.a, cfg.smoothing, ps.rng, ps.support)
    new = replace(ens, xi=xi, weights=np.full(n, 1.0 / n), states=ens.states[parents].copy())
    return replace(ps, ensemble=new, resample_count=ps.resample_count + 1)


def _needs_resample(weights, threshold: float) -> bool:
    w = np.asarray(weights)
    return 1.0 / (np.dot(w, w) * w.size) < threshold


def pf_step(ps: ParticleSet, dM: float, cfg_sde: SdeConfig, cfg_rs: ResampleConfig) -> ParticleSet:
    """One filter step, then resample if N_eff/N fell below the threshold."""
    ps = replace(ps, ensemble=ensemble_step(ps.ensemble, dM, cfg_sde))
    if _needs_resample(ps.ensemble.weights, cfg_rs.threshold):
        ps = liu_west_resample(ps, cfg_rs)
    return ps


def filter_record(ps: ParticleSet, record: MeasurementRecord, cfg_sde: SdeConfig,
                  cfg_rs: ResampleConfig, snapshot_steps=()):
    """Run the particle filter over a record with the compiled ensemble loop.

    Returns the final set and a list of ``(step, resample_count, xi, weights)``
    snapshots taken after the listed numbers of steps.
    """
    dms = np.ascontiguousarray(record.increments)
    n = dms.size
    stops = sorted({int(s) for s in snapshot_steps if 0 <= s <= n} | {n})
    wanted = {int(s) for s in snapshot_steps}
    snapshots = []

    def take(step, p):
        snapshots.append((step, p.resample_count, p.ensemble.xi.copy(), p.ensemble.weights.copy()))

    def buffers(p):
        e = p.ensemble
        return (np.ascontiguousarray(e.states, dtype=np.complex128).copy(), e.weights.copy(),
                np.ascontiguousarray(e.hamiltonians()))

    l = np.ascontiguousarray(ps.ensemble.l)
    states, weights, hs = buffers(ps)
    k = 0
    for stop in stops:
        while k < stop:
            k = advance(states, weights, hs, l, dms, k, stop, cfg_sde, cfg_rs.threshold)
            if _needs_resample(weights, cfg_rs.threshold):
                ps = replace(ps, ensemble=replace(ps.ensemble, weights=weights, states=states))
                ps = liu_west_resample(ps, cfg_rs)
                states, weights, hs = buffers(ps)
        if stop in wanted:
            take(stop, replace(ps, ensemble=replace(ps.ensemble, weights=weights.copy(),
                                                    states=states.copy())))
    ps = replace(ps, ensemble=replace(ps.ensemble, weights=weights, states=states))
    return ps, snapshots


def write_snapshots(path, dt: float, snapshots) -> None:
    """CSV rows ``t,resample_count,xi_1..xi_N,w_1..w_N``."""
    if not snapshots:
        raise ValueError("no snapshots to write")
    n = snapshots[0][2].size
    header = ["t", "resample_count"] + [f"xi_{i + 1}" for i in range(n)] + [f"w_{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for step, count, xi, w in snapshots:
            vals = [f"{step * dt:.17g}", str(count)] + [f"{v:.17g}" for v in np.concatenate([xi, w])]
            fh.write(",".join(vals) + "\n")
