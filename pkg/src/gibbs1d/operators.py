"""
Dense operator algebra on chains of d-level sites.

Operators are plain numpy arrays. Tensor basis ordering: site ``lo`` of a
window is the most significant digit, so ``np.kron(a, b)`` places ``a`` on
the lower site indices. Sites are 1-indexed.

All exponentials go through a Hermitian eigendecomposition (``Spectrum``) so
that one decomposition serves every inverse temperature, time and power.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionCapError,
    ExponentOverflowError,
    NumericError,
    ShapeError,
    SupportError,
)

DEFAULT_CAP = 2**16
EXP_LIMIT = 700.0
HERMITIAN_RTOL = 1e-12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def dimension_cap() -> int:
    """Matrix-side cap; the ``GIBBS1D_CAP`` environment variable overrides it."""
    value = os.environ.get("GIBBS1D_CAP")
    return int(value) if value else DEFAULT_CAP


def check_dim(dim: int, cap: int | None = None) -> None:
    cap = dimension_cap() if cap is None else cap
    if dim > cap:
        raise DimensionCapError(f"operator dimension {dim} exceeds cap {cap}")


@dataclass(frozen=True, order=True)
class Window:
    """Contiguous, inclusive, 1-indexed site interval ``[lo, hi]``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 1 or self.hi < self.lo:
            raise SupportError(f"invalid window [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    def contains(self, other: "Window") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def overlaps(self, other: "Window") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: "Window") -> "Window":
        return Window(min(self.lo, other.lo), max(self.hi, other.hi))

    def extend(self, l: int, n: int) -> "Window":
        """Grow by ``l`` sites on both ends, clipped to ``[1, n]``."""
        return Window(max(1, self.lo - l), min(n, self.hi + l))

    def __str__(self):
        return f"[{self.lo},{self.hi}]"


@dataclass(frozen=True, eq=False)
class SupportedOperator:
    """A dense matrix together with the window it acts on."""

    op: np.ndarray
    window: Window
    d: int = 2

    def __post_init__(self):
        expected = self.d**self.window.size
        if self.op.shape != (expected, expected):
            raise ShapeError(
                f"operator of shape {self.op.shape} does not fit window "
                f"{self.window} with d={self.d} (expected side {expected})"
            )

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    def __add__(self, other: "SupportedOperator") -> "SupportedOperator":
        w = self.window.hull(other.window)
        return SupportedOperator(embed(self, w).op + embed(other, w).op, w, self.d)

    def __sub__(self, other: "SupportedOperator") -> "SupportedOperator":
        w = self.window.hull(other.window)
        return SupportedOperator(embed(self, w).op - embed(other, w).op, w, self.d)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Hermitian eigendecomposition ``basis @ diag(eigenvalues) @ basis^H``."""

    eigenvalues: np.ndarray
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def identity(d: int, nsites: int) -> np.ndarray:
    return np.eye(d**nsites)


def kron(a: np.ndarray, b: np.ndarray, cap: int | None = None) -> np.ndarray:
    check_dim(a.shape[0] * b.shape[0], cap)
    return np.kron(a, b)


def embed(op: SupportedOperator, target: Window) -> SupportedOperator:
    """Pad ``op`` with identities so it acts on ``target``."""
    if not target.contains(op.window):
        raise SupportError(f"window {op.window} is not inside {target}")
    if target == op.window:
        return op
    left = op.d ** (op.window.lo - target.lo)
    right = op.d ** (target.hi - op.window.hi)
    check_dim(op.dim * left * right)
    mat = op.op
    if right > 1:
        mat = np.kron(mat, np.eye(right, dtype=mat.dtype))
    if left > 1:
        mat = np.kron(np.eye(left, dtype=mat.dtype), mat)
    return SupportedOperator(mat, target, op.d)


def _positions(window: Window, keep: Window | Iterable[int]) -> list[int]:
    sites = list(keep.sites) if isinstance(keep, Window) else sorted(set(keep))
    if any(s not in window.sites for s in sites):
        raise SupportError(f"keep set {sites} is not inside {window}")
    return [s - window.lo for s in sites]


def partial_trace(mat: np.ndarray, d: int, nsites: int, keep: Sequence[int]) -> np.ndarray:
    """Unnormalized trace over all positions (0-based) not listed in ``keep``."""
    keep = sorted(keep)
    drop = [p for p in range(nsites) if p not in keep]
    dk, dt = d ** len(keep), d ** len(drop)
    t = mat.reshape((d,) * (2 * nsites))
    perm = keep + drop + [nsites + p for p in keep] + [nsites + p for p in drop]
    t = t.transpose(perm).reshape(dk, dt, dk, dt)
    return np.einsum("aibi->ab", t)


def truncate(op: SupportedOperator, keep: Window | Iterable[int]) -> SupportedOperator:
    """Normalized partial trace over ``op.window`` minus ``keep``, re-padded with identity.

    ``keep`` may be a window or an arbitrary set of sites (needed when the
    kept region has two disconnected pieces).
    """
    pos = _positions(op.window, keep)
    q, d = op.window.size, op.d
    if len(pos) == q:
        return op
    drop = [p for p in range(q) if p not in pos]
    dt = d ** len(drop)
    reduced = partial_trace(op.op, d, q, pos) / dt
    # (keep, drop) ordering -> original site ordering
    full = np.kron(reduced, np.eye(dt)).reshape((d,) * (2 * q))
    order = pos + drop
    inverse = [order.index(p) for p in range(q)]
    full = full.transpose(inverse + [q + i for i in inverse])
    return SupportedOperator(full.reshape(op.dim, op.dim), op.window, d)


def op_norm(op: np.ndarray | SupportedOperator) -> float:
    """Largest singular value."""
    mat = op.op if isinstance(op, SupportedOperator) else op
    if not np.all(np.isfinite(mat)):
        raise NumericError("operator has non-finite entries")
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def is_hermitian(mat: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    scale = np.max(np.abs(mat)) if mat.size else 0.0
    return bool(np.max(np.abs(mat - mat.conj().T), initial=0.0) <= rtol * max(scale, 1e-300))


def herm_eig(op: np.ndarray | SupportedOperator) -> Spectrum:
    mat = op.op if isinstance(op, SupportedOperator) else op
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise NumericError("operator has non-finite entries")
    if not is_hermitian(mat):
        raise ShapeError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    return Spectrum(vals, vecs)


def _check_exponent(values: np.ndarray) -> None:
    if values.size and np.max(values) > EXP_LIMIT:
        raise ExponentOverflowError(
            f"exponent {np.max(values):.4g} overflows double precision; "
            "rescale the Hamiltonian or lower beta"
        )


def expm_scaled(spec: Spectrum, scale: complex) -> np.ndarray:
    """``exp(scale * G)`` for the operator ``G`` behind ``spec``."""
    if scale == 0:
        return np.eye(spec.dim)
    exponent = scale * spec.eigenvalues
    _check_exponent(np.real(exponent))
    v = spec.basis
    return (v * np.exp(exponent)) @ v.conj().T


def conjugate(op: np.ndarray, gen: Spectrum, scale: complex) -> np.ndarray:
    """``exp(scale G) @ op @ exp(-scale G)``, evaluated in the eigenbasis of ``G``."""
    if op.shape != (gen.dim, gen.dim):
        raise ShapeError(f"operator shape {op.shape} does not match generator dim {gen.dim}")
    if scale == 0:
        return op
    v = gen.basis
    lam = gen.eigenvalues
    exponent = scale * (lam[:, None] - lam[None, :])
    _check_exponent(np.real(exponent))
    inner = v.conj().T @ op @ v
    return v @ (inner * np.exp(exponent)) @ v.conj().T


def diagonal_in_basis(op: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Diagonal of ``basis^H @ op @ basis`` without forming the full product."""
    return np.sum(basis.conj() * (op @ basis), axis=0)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def log_trace_exp(eigenvalues: np.ndarray, scale: float) -> float:
    """``log tr exp(scale G)`` from the eigenvalues of ``G``, overflow-safe."""
    x = scale * np.asarray(eigenvalues, dtype=float)
    top = np.max(x)
    return float(top + np.log(np.sum(np.exp(x - top))))


def expm_taylor(mat: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    """Exponential of a general (non-Hermitian) square matrix.

    Scale so the 1-norm is below 1/2, sum the Taylor series until the next
    term drops under ``tol``, then square back.
    """
    norm = np.linalg.norm(mat, 1)
    if not math.isfinite(norm):
        raise NumericError("matrix has non-finite entries")
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    a = mat / 2.0**squarings
    result = np.eye(mat.shape[0], dtype=np.result_type(mat, float))
    term = result.copy()
    for j in range(1, 40):
        term = term @ a / j
        result = result + term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(result, 1):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def adjoint_power(
    H_terms: Sequence, O: SupportedOperator, m: int, max_power: int = 12
) -> SupportedOperator:
    """Nested commutator ``[H, [H, ... [H, O]]]`` (``m`` levels), built termwise.

    ``H_terms`` are objects with ``.op`` and ``.window`` (``SupportedOperator``
    or chain ``LocalTerm``). Only terms overlapping the current support
    contribute, so the window grows by at most ``k - 1`` sites per side per
    level; it never leaves the chain because the terms do not.
    """
    if m < 0 or m > max_power:
        raise ValueError(f"power {m} outside [0, {max_power}]")
    current = O
    for _ in range(m):
        touching = [t for t in H_terms if t.window.overlaps(current.window)]
        if not touching:
            return SupportedOperator(np.zeros_like(current.op), current.window, O.d)
        w = current.window
        for t in touching:
            w = w.hull(t.window)
        X = embed(current, w).op
        H = sum(embed(SupportedOperator(t.op, t.window, O.d), w).op for t in touching)
        current = SupportedOperator(commutator(H, X), w, O.d)
    return current
