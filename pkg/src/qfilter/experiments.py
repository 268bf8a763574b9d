"""Seeded batch experiments on the qubit magnetometer.

Every run derives its random streams from ``SeedSequence([seed, run_index])``
so a batch is a pure function of its configuration, whatever the number of
worker threads. Runners compute results in memory; :meth:`ExperimentResult.write`
persists them.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import qubit
from .density import DensityGrid, weighted_kde
from .ensemble import weighted_estimates
from .observability import ATOMIC_BASES, qubit_report
from .particles import ResampleConfig
from .sme import SCHEMES, MeasurementRecord, integrate_truth, make_rng, n_steps_for, wiener_increments

SCENARIOS = ("known-b", "finite-set", "convergence-rate", "particle-filter", "observability")

_DEFAULTS = {
    "known-b": {"b_truth": 0.0},
    "finite-set": {"b_truth": 2.0, "b_values": (2.0, 5.0, 8.0, 12.0)},
    "convergence-rate": {
        "b_truth": "sample",
        "b_value_sets": {"large": (2.0, 4.0, 6.0, 8.0), "small": (0.2, 0.4, 0.6, 0.8)},
    },
    "particle-filter": {"b_truth": 5.0},
    "observability": {"b_truth": 1.0},
}


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment batch. Rates and fields are in units of κ.

    ``b_truth`` may be ``"sample"``: uniform over ``b_values`` for the
    finite-set scenarios, uniform over ``prior`` for the particle filter.
    ``stride`` is the number of integration steps between stored trajectory
    rows. ``dump_runs`` defaults to writing per-run CSVs except for
    convergence-rate batches.
    """

    scenario: str
    kappa: float = 1.0
    b_truth: float | str | None = None
    b_values: tuple | None = None
    b_value_sets: dict | None = None
    prior: tuple = (0.0, 10.0)
    dt: float = 1e-4
    duration: float = 10.0
    n_runs: int = 1
    n_particles: int = 1000
    a: float = 0.98
    h: float = 1e-3
    threshold: float = 2.0 / 3.0
    link_a_h: bool = False
    alpha: float = 0.95
    seed: int | None = None
    out: str | None = None
    stride: int = 100
    n_snapshots: int = 50
    grid_points: int = 150
    scheme: str = "kraus"
    atomic: str = "xz"
    workers: int = 1
    dump_runs: bool | None = None
    save_record: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        for key, value in _DEFAULTS[self.scenario].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.b_values is not None:
            object.__setattr__(self, "b_values", tuple(float(v) for v in self.b_values))
        if self.b_value_sets is not None:
            object.__setattr__(self, "b_value_sets",
                               {str(k): tuple(float(v) for v in vs) for k, vs in self.b_value_sets.items()})
        object.__setattr__(self, "prior", tuple(float(v) for v in self.prior))
        if self.dump_runs is None:
            object.__setattr__(self, "dump_runs", self.scenario != "convergence-rate")
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        finite = lambda x: isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
        need(finite(self.kappa) and self.kappa > 0, "kappa must be positive")
        need(finite(self.dt) and self.dt > 0, "dt must be positive")
        need(finite(self.duration) and self.duration > 0, "duration must be positive")
        need(self.duration >= self.dt, "duration must cover at least one step")
        need(isinstance(self.n_runs, int) and self.n_runs >= 1, "n_runs must be an integer >= 1")
        need(isinstance(self.n_particles, int) and self.n_particles >= 1, "n_particles must be >= 1")
        need(isinstance(self.stride, int) and self.stride >= 1, "stride must be an integer >= 1")
        need(isinstance(self.n_snapshots, int) and self.n_snapshots >= 2, "n_snapshots must be >= 2")
        need(isinstance(self.grid_points, int) and self.grid_points >= 2, "grid_points must be >= 2")
        need(isinstance(self.workers, int) and self.workers >= 1, "workers must be >= 1")
        need(0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)")
        need(self.scheme in SCHEMES, f"scheme must be one of {tuple(SCHEMES)}")
        need(self.atomic in ATOMIC_BASES, f"atomic must be one of {tuple(ATOMIC_BASES)}")
        need(len(self.prior) == 2 and self.prior[1] > self.prior[0], "prior must be [low, high] with low < high")
        if self.seed is not None:
            need(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
                 "seed must be a non-negative integer")
        need(self.n_runs == 1 or self.seed is not None, "a seed is required when n_runs > 1")
        try:
            ResampleConfig(self.a, self.h, self.threshold, self.link_a_h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.b_truth, str):
            need(self.b_truth == "sample", 'b_truth must be a number or "sample"')
            need(self.scenario in ("finite-set", "convergence-rate", "particle-filter"),
                 f'b_truth "sample" is not supported for {self.scenario}')
        else:
            need(finite(self.b_truth), "b_truth must be finite")
        for values in self._value_sets().values():
            need(len(values) >= 1, "value sets must be non-empty")
            need(len(set(values)) == len(values), "value sets must not contain duplicates")
            need(all(math.isfinite(v) for v in values), "value sets must be finite")
        if self.scenario == "finite-set" and not isinstance(self.b_truth, str):
            need(self.b_truth in self.b_values, "b_truth must be one of b_values")
        if self.scenario == "convergence-rate":
            need(bool(self.b_value_sets), "b_value_sets must name at least one set")
            if not isinstance(self.b_truth, str):
                need(all(self.b_truth in vs for vs in self.b_value_sets.values()),
                     "a fixed b_truth must belong to every value set")

    def _value_sets(self) -> dict:
        sets = dict(self.b_value_sets or {})
        if self.b_values is not None:
            sets["b_values"] = self.b_values
        return sets

    @property
    def n_steps(self) -> int:
        return n_steps_for(self.duration, self.dt)

    @property
    def master_seed(self) -> int:
        return 0 if self.seed is None else self.seed

    def resample_config(self) -> ResampleConfig:
        return ResampleConfig(self.a, self.h, self.threshold, self.link_a_h)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("b_values", "prior"):
            if d[key] is not None:
                d[key] = list(d[key])
        if d["b_value_sets"] is not None:
            d["b_value_sets"] = {k: list(v) for k, v in d["b_value_sets"].items()}
        return d

    def summary_dict(self) -> dict:
        """Configuration echoed into summaries; leaves out settings that do not affect results."""
        d = self.to_dict()
        for key in ("out", "workers"):
            d.pop(key)
        return d

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        merged = dict(data)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if "scenario" not in merged:
            raise ConfigError("configuration must name a scenario")
        try:
            return cls(**merged)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, **overrides)


# ---------------------------------------------------------------------------
# Shared pieces


@dataclass
class ExperimentResult:
    """Summary plus the tables a run produced, keyed by output file name."""

    config: ExperimentConfig
    summary: dict
    tables: dict[str, Callable] = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def write(self, out_dir=None) -> Path:
        out = Path(out_dir if out_dir is not None else (self.config.out or "."))
        out.mkdir(parents=True, exist_ok=True)
        for name, writer in self.tables.items():
            writer(out / name)
        write_json(out / "summary.json", self.summary)
        return out


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def run_streams(master_seed: int, idx: int):
    """Independent (truth, filter, choice) seed sequences for one run."""
    return np.random.SeedSequence([master_seed, idx]).spawn(3)


def _batch(cfg: ExperimentConfig, fn: Callable[[int], object]) -> list:
    if cfg.workers == 1 or cfg.n_runs == 1:
        return [fn(i) for i in range(cfg.n_runs)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, range(cfg.n_runs)))


def _grid_steps(n: int, stride: int) -> list[int]:
    return sorted(set(range(0, n + 1, stride)) | {n})


def simulate_qubit(b: float, kappa: float, dt: float, n_steps: int, seed, scheme: str = "kraus",
                   path_stride: int | None = None):
    """Truth record for a qubit starting in |+x⟩ under field ``b``.

    Returns the record and the density matrix path sampled every
    ``path_stride`` steps (default: start and end only).
    """
    h0, l = qubit.qubit_operators(kappa)
    noise = wiener_increments(make_rng(seed), n_steps, dt)
    stride = n_steps if path_stride is None else path_stride
    dm, path = integrate_truth(qubit.angle_to_density(0.0), b * h0, l, noise, dt, True, stride, scheme)
    return MeasurementRecord(dt=dt, increments=dm), path


def _choose_truth(cfg: ExperimentConfig, values, seed) -> float:
    if cfg.b_truth == "sample":
        rng = make_rng(seed)
        if values is None:
            return float(rng.uniform(*cfg.prior))
        return float(values[int(rng.integers(len(values)))])
    return float(cfg.b_truth)


def indicator(weights, alpha: float):
    """1 where any weight in a row exceeds ``alpha``."""
    return (np.asarray(weights) > alpha).any(axis=-1).astype(float)


# ---------------------------------------------------------------------------
# Known field


@dataclass
class KnownFieldRun:
    b: float
    times: np.ndarray
    record: MeasurementRecord
    sx: np.ndarray
    sz: np.ndarray


def _known_b_run(cfg: ExperimentConfig, idx: int) -> KnownFieldRun:
    truth_seed, _, _ = run_streams(cfg.master_seed, idx)
    n = cfg.n_steps
    record, path = simulate_qubit(cfg.b_truth, cfg.kappa, cfg.dt, n, truth_seed, cfg.scheme, cfg.stride)
    steps = np.arange(path.shape[0]) * cfg.stride
    sx = 2.0 * path[:, 0, 1].real
    sz = (path[:, 0, 0] - path[:, 1, 1]).real
    return KnownFieldRun(float(cfg.b_truth), steps * cfg.dt, record, sx, sz)


def run_known_b(cfg: ExperimentConfig) -> ExperimentResult:
    """Trajectories of the true qubit state under a known field.

    The summary reports the final ⟨σ_z⟩ of each run and the fraction that
    ended in the upper hemisphere.
    """
    runs = _batch(cfg, lambda i: _known_b_run(cfg, i))
    final_sz = [float(r.sz[-1]) for r in runs]
    summary = {
        "scenario": cfg.scenario,
        "config": cfg.summary_dict(),
        "n_runs": cfg.n_runs,
        "final_sz": final_sz,
        "fraction_plus_z": float(np.mean(np.asarray(final_sz) > 0.0)),
    }
    tables = {}
    if cfg.dump_runs:
        for i, r in enumerate(runs):
            m = np.concatenate([[0.0], np.cumsum(r.record.increments)])
            tables[f"run_{i}.csv"] = _bind(write_table, ["t", "M", "sx", "sz"],
                                           np.column_stack([r.times, m[: r.times.size * cfg.stride: cfg.stride],
                                                            r.sx, r.sz]))
    if cfg.save_record:
        for i, r in enumerate(runs):
            tables[f"record_{i}.csv"] = r.record.to_csv
    return ExperimentResult(cfg, summary, tables, {"runs": runs})


def _bind(writer, header, rows):
    return lambda path: writer(path, header, rows)


# ---------------------------------------------------------------------------
# Finite candidate set


@dataclass
class FiniteSetRun:
    b_truth: float
    b_values: np.ndarray
    times: np.ndarray
    weights: np.ndarray
    theta: np.ndarray
    record: MeasurementRecord | None = None

    @property
    def final_weights(self) -> np.ndarray:
        return self.weights[-1]

    @property
    def truth_index(self) -> int:
        return int(np.flatnonzero(self.b_values == self.b_truth)[0])

    @property
    def favors_truth(self) -> bool:
        map_value, _, _ = weighted_estimates(self.b_values, self.final_weights)
        return map_value == self.b_truth


def finite_set_run(cfg: ExperimentConfig, idx: int, values, keep_record: bool = False) -> FiniteSetRun:
    truth_seed, _, choice_seed = run_streams(cfg.master_seed, idx)
    b_truth = _choose_truth(cfg, values, choice_seed)
    n = cfg.n_steps
    record, _ = simulate_qubit(b_truth, cfg.kappa, cfg.dt, n, truth_seed, cfg.scheme)
    steps = _grid_steps(n, cfg.stride)
    _, snaps, _ = qubit.filter_record(qubit.QubitEnsemble.uniform(values), record, cfg.kappa,
                                      snapshot_steps=steps)
    weights = np.array([s[2].weights for s in snaps])
    theta = np.array([s[2].theta for s in snaps])
    return FiniteSetRun(b_truth, np.asarray(values, dtype=float), np.asarray(steps) * cfg.dt,
                        weights, theta, record if keep_record else None)


def run_finite_set(cfg: ExperimentConfig) -> ExperimentResult:
    """Ensemble filter over ``b_values`` fed by simulated truth records."""
    values = cfg.b_values
    runs = _batch(cfg, lambda i: finite_set_run(cfg, i, values, cfg.save_record))
    final = np.array([r.final_weights for r in runs])
    argmax_counts = {repr(v): 0 for v in values}
    for r in runs:
        map_value, _, _ = weighted_estimates(r.b_values, r.final_weights)
        argmax_counts[repr(map_value)] += 1
    truth_weights = np.array([r.final_weights[r.truth_index] for r in runs])
    summary = {
        "scenario": cfg.scenario,
        "config": cfg.summary_dict(),
        "n_runs": cfg.n_runs,
        "b_values": list(values),
        "b_truth": [r.b_truth for r in runs],
        "final_weights": final.tolist(),
        "argmax_counts": argmax_counts,
        "runs_favoring_truth": int(sum(r.favors_truth for r in runs)),
        "fraction_favoring_truth": float(np.mean([r.favors_truth for r in runs])),
        "median_final_truth_weight": float(np.median(truth_weights)),
    }
    tables = {}
    k = len(values)
    header = ["t"] + [f"p_{i + 1}" for i in range(k)] + [f"theta_{i + 1}" for i in range(k)]
    if cfg.dump_runs:
        for i, r in enumerate(runs):
            tables[f"run_{i}.csv"] = _bind(write_table, header, np.column_stack([r.times, r.weights, r.theta]))
    if cfg.save_record:
        for i, r in enumerate(runs):
            tables[f"record_{i}.csv"] = r.record.to_csv
    return ExperimentResult(cfg, summary, tables, {"runs": runs})


# ---------------------------------------------------------------------------
# Convergence rate


@dataclass
class ConvergenceCurve:
    times: np.ndarray
    mean_any: np.ndarray
    mean_truth: np.ndarray

    def at(self, t: float) -> tuple[float, float]:
        """Mean indicator values at the stored time closest to ``t``."""
        j = int(np.argmin(np.abs(self.times - t)))
        return float(self.mean_any[j]), float(self.mean_truth[j])


def convergence_rate(cfg: ExperimentConfig) -> ExperimentResult:
    """Run-averaged convergence indicator for each value set.

    ``mean_any`` fires when any weight exceeds ``alpha``; ``mean_truth`` only
    when the true value's weight does.
    """
    curves = {}
    tables = {}
    for name, values in cfg.b_value_sets.items():
        runs = _batch(cfg, lambda i: finite_set_run(cfg, i, values))
        any_hits = np.array([indicator(r.weights, cfg.alpha) for r in runs])
        truth_hits = np.array([(r.weights[:, r.truth_index] > cfg.alpha).astype(float) for r in runs])
        curves[name] = ConvergenceCurve(runs[0].times, any_hits.mean(axis=0), truth_hits.mean(axis=0))
        if cfg.dump_runs:
            k = len(values)
            header = ["t"] + [f"p_{j + 1}" for j in range(k)] + [f"theta_{j + 1}" for j in range(k)]
            for i, r in enumerate(runs):
                tables[f"run_{name}_{i}.csv"] = _bind(write_table, header,
                                                      np.column_stack([r.times, r.weights, r.theta]))
    names = list(curves)
    times = curves[names[0]].times
    header = ["t"]
    cols = [times]
    for name in names:
        header += [f"I_{name}", f"I_truth_{name}"]
        cols += [curves[name].mean_any, curves[name].mean_truth]
    tables["convergence.csv"] = _bind(write_table, header, np.column_stack(cols))
    summary = {
        "scenario": cfg.scenario,
        "config": cfg.summary_dict(),
        "alpha": cfg.alpha,
        "n_runs": cfg.n_runs,
        "sets": {
            name: {
                "b_values": list(cfg.b_value_sets[name]),
                "final_mean_indicator": float(c.mean_any[-1]),
                "final_mean_truth_indicator": float(c.mean_truth[-1]),
                "midpoint_mean_indicator": c.at(0.5 * cfg.duration)[0],
            }
            for name, c in curves.items()
        },
    }
    return ExperimentResult(cfg, summary, tables, {"curves": curves})


# ---------------------------------------------------------------------------
# Particle filter


@dataclass
class ParticleRun:
    b_truth: float
    b_hat: float
    sigma: float
    resample_count: int
    snapshots: list
    density: DensityGrid


def snapshot_steps(n_steps: int, count: int) -> list[int]:
    return sorted({int(round(s)) for s in np.linspace(0, n_steps, count)})


def density_grid(snaps, dt: float, prior, points: int) -> DensityGrid:
    lo, hi = prior
    grid = np.linspace(lo, hi, points)
    db = (hi - lo) / points
    masses = np.array([weighted_kde(e.b, e.weights, grid, "auto", db) for _, _, e in snaps])
    times = np.array([step * dt for step, _, _ in snaps])
    return DensityGrid(times, grid, masses, db)


def particle_run(cfg: ExperimentConfig, idx: int) -> ParticleRun:
    truth_seed, filter_seed, choice_seed = run_streams(cfg.master_seed, idx)
    b_truth = _choose_truth(cfg, None, choice_seed)
    n = cfg.n_steps
    record, _ = simulate_qubit(b_truth, cfg.kappa, cfg.dt, n, truth_seed, cfg.scheme)
    rng = make_rng(filter_seed)
    b0 = rng.uniform(cfg.prior[0], cfg.prior[1], cfg.n_particles)
    ens = qubit.QubitEnsemble.uniform(b0)
    final, snaps, count = qubit.filter_record(
        ens, record, cfg.kappa, snapshot_steps=snapshot_steps(n, cfg.n_snapshots),
        resample=cfg.resample_config(), rng=rng, support=cfg.prior)
    _, mean, var = weighted_estimates(final.b, final.weights)
    return ParticleRun(b_truth, mean, float(np.sqrt(var)), count, snaps,
                       density_grid(snaps, cfg.dt, cfg.prior, cfg.grid_points))


def run_particle_filter(cfg: ExperimentConfig) -> ExperimentResult:
    """Particle filter over a continuous field prior with joint (B, θ) resampling."""
    runs = _batch(cfg, lambda i: particle_run(cfg, i))
    errors = np.abs([r.b_hat - r.b_truth for r in runs])
    summary = {
        "scenario": cfg.scenario,
        "config": cfg.summary_dict(),
        "n_runs": cfg.n_runs,
        "b_truth": [r.b_truth for r in runs],
        "b_hat": [r.b_hat for r in runs],
        "sigma_b_hat": [r.sigma for r in runs],
        "resample_count": [r.resample_count for r in runs],
        "median_abs_error": float(np.median(errors)),
    }
    tables = {"density.csv": runs[0].density.to_csv}
    for i, r in enumerate(runs):
        if i > 0:
            tables[f"density_{i}.csv"] = r.density.to_csv
        if cfg.dump_runs:
            tables[f"run_{i}.csv"] = _bind(qubit.write_snapshots, cfg.dt, r.snapshots)
    return ExperimentResult(cfg, summary, tables, {"runs": runs})


# ---------------------------------------------------------------------------
# Observability


def run_observability(cfg: ExperimentConfig) -> ExperimentResult:
    report = qubit_report(cfg.b_values, b=float(cfg.b_truth), kappa=cfg.kappa, atomic=cfg.atomic)
    return ExperimentResult(cfg, report, {}, {"report": report})


RUNNERS = {
    "known-b": run_known_b,
    "finite-set": run_finite_set,
    "convergence-rate": convergence_rate,
    "particle-filter": run_particle_filter,
    "observability": run_observability,
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.scenario](cfg)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with validation rerun."""
    try:
        return replace(cfg, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
