"""Dense operator algebra on small Hilbert spaces.

Operators are plain ``complex128`` numpy arrays of shape ``(d, d)``. The
functions here cover what the filters and the observability analysis need:
Kronecker products, the Hilbert-Schmidt inner product, Gram-Schmidt
orthogonalization and the two superoperators that generate the observable
space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Relative rank tolerance shared by gram_schmidt and the observability code.
RANK_TOL = 1e-9


class DimensionError(ValueError):
    """Operators of incompatible dimension were combined."""


def as_operator(a) -> np.ndarray:
    """Return ``a`` as a square complex matrix, raising on bad shapes."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise DimensionError(f"operator must be a non-empty square matrix, got shape {arr.shape}")
    return arr


def _check_same_dim(*ops: np.ndarray) -> None:
    dims = {op.shape for op in ops}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


def is_hermitian(a, tol: float = 1e-12) -> bool:
    a = as_operator(a)
    return bool(np.max(np.abs(a - dagger(a))) <= tol)


def is_diagonal(a, tol: float = 1e-12) -> bool:
    a = as_operator(a)
    off = a - np.diag(np.diag(a))
    return bool(np.max(np.abs(off), initial=0.0) <= tol)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def tensor(a, b) -> np.ndarray:
    """Kronecker product ``a ⊗ b``."""
    return np.kron(as_operator(a), as_operator(b))


def hs_inner(a, b) -> complex:
    """Hilbert-Schmidt inner product ``Tr(a† b)``."""
    a, b = as_operator(a), as_operator(b)
    _check_same_dim(a, b)
    return complex(np.vdot(a, b))


def hs_norm(a) -> float:
    return float(np.sqrt(hs_inner(a, a).real))


@dataclass
class OperatorBasis:
    """Pairwise Hilbert-Schmidt orthogonal operators, normalized to unit norm."""

    members: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def residual(self, op) -> np.ndarray:
        """Component of ``op`` orthogonal to the span of the basis."""
        r = as_operator(op).copy()
        # Two passes of modified Gram-Schmidt keep the residual orthogonal to
        # working precision even when the input is nearly dependent.
        for _ in range(2):
            for q in self.members:
                r -= np.vdot(q, r) * q
        return r

    def try_add(self, op, tol: float = RANK_TOL, scale: float | None = None) -> bool:
        """Append the normalized residual of ``op`` if it is independent.

        The residual is kept when its norm exceeds ``tol * scale``; ``scale``
        defaults to the norm of ``op``. Pass the largest norm among the
        operators being compared so that round-off sized inputs are dropped.
        Returns whether a member was added.
        """
        op = as_operator(op)
        if self.members:
            _check_same_dim(op, self.members[0])
        norm = hs_norm(op)
        if norm == 0.0:
            return False
        r = self.residual(op)
        rnorm = hs_norm(r)
        if rnorm <= tol * (norm if scale is None else scale):
            return False
        self.members.append(r / rnorm)
        return True

    def contains(self, op, tol: float = RANK_TOL) -> bool:
        """Whether ``op`` lies in the span, to relative tolerance ``tol``."""
        norm = hs_norm(op)
        return norm == 0.0 or hs_norm(self.residual(op)) <= tol * norm


def gram_schmidt(ops: Sequence, tol: float = RANK_TOL) -> OperatorBasis:
    """Orthonormal basis for the span of ``ops``.

    An input is dropped when its residual is at most ``tol`` times the largest
    input norm.
    """
    ops = [as_operator(op) for op in ops]
    basis = OperatorBasis()
    if not ops:
        return basis
    scale = max(hs_norm(op) for op in ops)
    for op in ops:
        basis.try_add(op, tol, scale)
    return basis


def lindblad_map(h, l, x) -> np.ndarray:
    """Heisenberg-picture Lindblad generator ``i[H,X] + L†XL - ½L†LX - ½XL†L``."""
    h, l, x = as_operator(h), as_operator(l), as_operator(x)
    _check_same_dim(h, l, x)
    ld = dagger(l)
    ldl = ld @ l
    return 1j * commutator(h, x) + ld @ x @ l - 0.5 * (ldl @ x + x @ ldl)


def k_map(l, x) -> np.ndarray:
    """Measurement superoperator ``L†X + XL``."""
    l, x = as_operator(l), as_operator(x)
    _check_same_dim(l, x)
    return dagger(l) @ x + x @ l
