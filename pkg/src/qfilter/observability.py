"""Observability of the parameter filter.

The observable space is the smallest operator subspace that contains the
identity and is closed under the Lindblad generator and the measurement map
K[X] = L†X + XL. It is built by iterating

    Z_0 = span{I},  Z_n = span{Z_{n-1}, Lindblad[Z_{n-1}], K[Z_{n-1}]}

until the span stops growing. The filter forgets its initial condition
(given nonzero prior weight on the truth) when that space is the whole
ambient algebra.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .operators import (
    IDENTITY,
    RANK_TOL,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    OperatorBasis,
    as_operator,
    gram_schmidt,
    hs_norm,
    k_map,
    lindblad_map,
    tensor,
)


class Verdict(str, Enum):
    OBSERVABLE = "Observable"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class ObservabilityReport:
    basis: OperatorBasis
    dim_observable: int
    dim_ambient: int
    observable: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "dim_observable": self.dim_observable,
            "dim_ambient": self.dim_ambient,
            "observable": self.observable,
            "iterations": self.iterations,
        }


@dataclass
class ExtendedModel:
    """Parameter embedded as Ξ = diag(values): H = Ξ⊗H_0, L = I⊗L."""

    h_ext: np.ndarray
    l_ext: np.ndarray
    ambient_basis: list
    values: np.ndarray


def observable_space(h, l, ambient: Sequence, tol: float = RANK_TOL) -> ObservabilityReport:
    """Grow the observable space from the identity and compare it to ``ambient``."""
    h, l = as_operator(h), as_operator(l)
    ambient = [as_operator(a) for a in ambient]
    if not ambient:
        raise ValueError("ambient basis is empty")
    ambient_span = gram_schmidt(ambient, tol)
    if ambient_span.dim != len(ambient):
        raise ValueError("ambient operators are linearly dependent")
    identity = np.eye(h.shape[0], dtype=complex)
    if not ambient_span.contains(identity, tol):
        raise ValueError("ambient space must contain the identity")

    basis = OperatorBasis()
    basis.try_add(identity, tol)
    frontier = list(basis.members)
    rounds = 0
    while True:
        images = [f(x) for x in frontier for f in (lambda x: lindblad_map(h, l, x), lambda x: k_map(l, x))]
        # Members have unit norm, so image norms measure the size of the maps;
        # anything far below that is round-off from an exact zero.
        scale = max(hs_norm(y) for y in images)
        added = []
        for y in images:
            if basis.try_add(y, tol, scale):
                added.append(basis.members[-1])
        if not added:
            break
        rounds += 1
        if rounds > ambient_span.dim + 1:
            raise RuntimeError("observable-space iteration failed to terminate")
        frontier = added

    observable = basis.dim == ambient_span.dim and all(basis.contains(a, tol) for a in ambient)
    return ObservabilityReport(basis, basis.dim, ambient_span.dim, observable, rounds)


def extend_model(h0, l, values: Sequence[float], atomic_basis: Sequence) -> ExtendedModel:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("values must be a non-empty vector")
    if np.unique(values).size != values.size:
        raise ValueError("parameter values must be pairwise distinct")
    n = values.size
    projectors = [np.diag(np.eye(n)[i]).astype(complex) for i in range(n)]
    xi = np.diag(values).astype(complex)
    return ExtendedModel(
        h_ext=tensor(xi, h0),
        l_ext=tensor(np.eye(n), l),
        ambient_basis=[tensor(p, a) for p in projectors for a in atomic_basis],
        values=values,
    )


def corollary_check(values: Sequence[float], base_observable: bool) -> Verdict:
    """Sufficient condition: an observable base filter and distinct positive values.

    Anything else is reported as inconclusive (a zero value or a ±ξ pair can
    break observability, but need not), so fall back to :func:`observable_space`.
    """
    values = np.asarray(values, dtype=float)
    distinct = np.unique(values).size == values.size
    if base_observable and distinct and np.all(values > 0):
        return Verdict.OBSERVABLE
    return Verdict.INCONCLUSIVE


def absolute_continuity_check(initial_weights: Sequence[float]) -> bool:
    """True when every candidate value carries nonzero prior weight."""
    w = np.asarray(initial_weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("initial weights must sum to 1")
    return bool(np.all(w > 0))


ATOMIC_BASES = {
    "xz": [IDENTITY, SIGMA_X, SIGMA_Z],
    "full": [IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z],
}


def qubit_report(values: Sequence[float] | None = None, b: float = 1.0, kappa: float = 1.0,
                 atomic: str = "xz") -> dict:
    """Observability summary for the qubit magnetometer.

    With ``values`` the extended model over those field values is analysed and
    the corollary verdict is included; otherwise the known-field filter with
    field ``b``.
    """
    atomic_basis = ATOMIC_BASES[atomic]
    h0, l = SIGMA_Y, np.sqrt(kappa) * SIGMA_Z
    base = observable_space(b * h0 if values is None else h0, l, atomic_basis)
    if values is None:
        out = base.to_dict()
        out["model"] = "known-field"
        return out
    model = extend_model(h0, l, values, atomic_basis)
    report = observable_space(model.h_ext, model.l_ext, model.ambient_basis)
    out = report.to_dict()
    out["model"] = "extended"
    out["values"] = [float(v) for v in model.values]
    out["corollary"] = corollary_check(values, base.observable).value
    return out
