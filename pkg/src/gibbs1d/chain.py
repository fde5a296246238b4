"""
One-dimensional k-local Hamiltonians on open chains.

A chain is an ordered list of local terms ``h_j``; term ``j`` acts on the
contiguous sites ``start .. start + width - 1`` with ``width <= k`` and
``||h_j|| <= 1``. Boundaries are open: no term wraps around.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError, ShapeError, SupportError
from .operators import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    SupportedOperator,
    Window,
    check_dim,
    embed,
    is_hermitian,
    op_norm,
)

NORM_SLACK = 1e-12
PRESETS = ("tfim", "xxz", "classical_ising", "three_site_footnote", "random_klocal")


@dataclass(frozen=True, eq=False)
class LocalTerm:
    start: int
    op: np.ndarray
    d: int = 2
    norm_bound: float = field(init=False)

    def __post_init__(self):
        if not is_hermitian(self.op):
            raise ShapeError(f"term at site {self.start} is not Hermitian")
        object.__setattr__(self, "norm_bound", op_norm(self.op))
        if self.norm_bound > 1 + NORM_SLACK:
            raise ShapeError(f"term at site {self.start} has norm {self.norm_bound:.6g} > 1")
        # validates the shape against d
        SupportedOperator(self.op, self.window, self.d)

    @property
    def width(self) -> int:
        return int(round(np.log(self.op.shape[0]) / np.log(self.d)))

    @property
    def window(self) -> Window:
        return Window(self.start, self.start + self.width - 1)

    @property
    def supported(self) -> SupportedOperator:
        return SupportedOperator(self.op, self.window, self.d)


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """The Hamiltonian ``H = sum_j h_j``.

    ``diagonal_basis`` optionally names a single-site unitary that makes every
    term diagonal after rotating each site by it (used by the transfer-matrix
    solver).
    """

    n: int
    d: int
    k: int
    terms: tuple[LocalTerm, ...]
    name: str = "custom"
    diagonal_basis: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.k < 1:
            raise GeometryError("n, d and k must be positive")
        if self.n < self.k:
            raise GeometryError(f"chain of {self.n} sites is shorter than k={self.k}")
        prev = 0
        for t in self.terms:
            if t.d != self.d:
                raise ShapeError("term local dimension differs from chain d")
            if t.width > self.k:
                raise GeometryError(f"term at {t.start} has width {t.width} > k={self.k}")
            if t.window.hi > self.n:
                raise GeometryError(f"term at {t.start} runs past site {self.n}")
            if t.start < prev:
                raise GeometryError("terms must be sorted by start site")
            prev = t.start

    @property
    def full_window(self) -> Window:
        return Window(1, self.n)

    @property
    def num_terms(self) -> int:
        return len(self.terms)

    def term(self, i: int) -> LocalTerm:
        """Term ``h_i`` with 1-based ``i``."""
        if not 1 <= i <= self.num_terms:
            raise GeometryError(f"term index {i} outside 1..{self.num_terms}")
        return self.terms[i - 1]

    @property
    def is_real(self) -> bool:
        return all(not np.any(np.imag(t.op)) for t in self.terms)


@dataclass(frozen=True, eq=False)
class HamSplit:
    inside: list
    outside: list
    boundary: list
    window: Window

    @property
    def boundary_sites(self) -> list[int]:
        sites = set()
        for t in self.boundary:
            sites.update(t.window.sites)
        return sorted(sites)


def _kron_all(ops: Sequence[np.ndarray]) -> np.ndarray:
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def _normalize(raw: list[tuple[int, np.ndarray]], d: int) -> list[LocalTerm]:
    # one global factor, applied only when some term exceeds norm 1
    top = max((op_norm(op) for _, op in raw), default=0.0)
    scale = 1.0 / top if top > 1.0 else 1.0
    terms = []
    for start, op in raw:
        op = op * scale
        if not np.any(np.imag(op)):
            op = np.real(op)
        if op_norm(op) > 0:
            terms.append(LocalTerm(start, 0.5 * (op + op.conj().T), d))
    return terms


def _random_hermitian(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (a + a.conj().T)
    return h / op_norm(h)


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)`` via ``SeedSequence``."""
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def build_preset(
    name: str,
    n: int,
    d: int = 2,
    k: int | None = None,
    params: dict | None = None,
    seed: int = 0,
) -> ChainSpec:
    """Build one of the named model chains.

    tfim                 h_j = -J Z_j Z_{j+1} - g X_j, h_n = -g X_n   (J=1, g=1)
    xxz                  h_j = Jxy (X X + Y Y) + Jz Z Z              (Jxy=1, Jz=1)
    classical_ising      h_j = -J Z_j Z_{j+1} - hz Z_j, h_n = -hz Z_n (J=1, hz=0)
    three_site_footnote  h_j = J1 s_j.s_{j+1} + J2 sum_a s^a_j 1 s^a_{j+2}  (J1=0.2, J2=0.1)
    random_klocal        one normalized random Hermitian term per start site

    Terms are rescaled by a common factor when any of them exceeds norm 1.
    """
    params = dict(params or {})
    if name == "random_klocal":
        k = 2 if k is None else k
        if n < k:
            raise GeometryError(f"chain of {n} sites is shorter than k={k}")
        rng = seeded_rng(seed, 0)
        terms = [LocalTerm(j, _random_hermitian(rng, d**k), d) for j in range(1, n - k + 2)]
        return ChainSpec(n, d, k, tuple(terms), name=name)

    if d != 2:
        raise GeometryError(f"preset {name!r} is a spin-1/2 model (d=2)")
    I = np.eye(2)
    raw: list[tuple[int, np.ndarray]] = []
    diagonal_basis = None
    if name in ("tfim", "classical_ising"):
        k = 2
        if n < k:
            raise GeometryError(f"chain of {n} sites is shorter than k={k}")
        J = params.get("J", 1.0)
        if name == "tfim":
            g, field_op = params.get("g", 1.0), PAULI_X
        else:
            g, field_op = params.get("hz", 0.0), PAULI_Z
            diagonal_basis = np.eye(2)
        for j in range(1, n):
            raw.append((j, -J * np.kron(PAULI_Z, PAULI_Z) - g * np.kron(field_op, I)))
        raw.append((n, -g * field_op))
    elif name == "xxz":
        k = 2
        if n < k:
            raise GeometryError(f"chain of {n} sites is shorter than k={k}")
        jxy, jz = params.get("Jxy", 1.0), params.get("Jz", 1.0)
        bond = jxy * (np.kron(PAULI_X, PAULI_X) + np.kron(PAULI_Y, PAULI_Y)) + jz * np.kron(
            PAULI_Z, PAULI_Z
        )
        raw = [(j, bond) for j in range(1, n)]
    elif name == "three_site_footnote":
        k = 3
        if n < k:
            raise GeometryError(f"chain of {n} sites is shorter than k={k}")
        j1, j2 = params.get("J1", 0.2), params.get("J2", 0.1)
        paulis = (PAULI_X, PAULI_Y, PAULI_Z)
        near = sum(_kron_all([s, s, I]) for s in paulis)
        far = sum(_kron_all([s, I, s]) for s in paulis)
        raw = [(j, j1 * near + j2 * far) for j in range(1, n - 1)]
        raw.append((n - 1, j1 * sum(np.kron(s, s) for s in paulis)))
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return ChainSpec(n, d, k, tuple(_normalize(raw, d)), name=name, diagonal_basis=diagonal_basis)


def partial_hamiltonian(spec: ChainSpec, i: int) -> list[LocalTerm]:
    """Terms ``h_1 .. h_{i-1}``; empty for ``i = 1``."""
    if not 1 <= i <= spec.num_terms + 1:
        raise GeometryError(f"index {i} outside 1..{spec.num_terms + 1}")
    return list(spec.terms[: i - 1])


def window_around(spec: ChainSpec, i: int, l: int) -> Window:
    """Support of ``h_i`` plus ``l`` sites on each side, clipped to the chain."""
    if l < 0:
        raise GeometryError("window radius must be non-negative")
    return spec.term(i).window.extend(l, spec.n)


def is_clipped(spec: ChainSpec, i: int, l: int) -> bool:
    w = spec.term(i).window
    return w.lo - l < 1 or w.hi + l > spec.n


def split(terms: Sequence[LocalTerm], window: Window) -> HamSplit:
    """Partition terms into those inside ``window``, outside it, and straddling it."""
    inside, outside, boundary = [], [], []
    for t in terms:
        if window.contains(t.window):
            inside.append(t)
        elif not window.overlaps(t.window):
            outside.append(t)
        else:
            boundary.append(t)
    return HamSplit(inside, outside, boundary, window)


def assemble(terms: Sequence[LocalTerm], window: Window, d: int = 2) -> SupportedOperator:
    """``sum_j h_j`` embedded on ``window``."""
    dim = d**window.size
    check_dim(dim)
    real = all(not np.any(np.imag(t.op)) for t in terms)
    out = np.zeros((dim, dim), dtype=float if real else complex)
    for t in terms:
        if not window.contains(t.window):
            raise SupportError(f"term {t.window} is not inside {window}")
        op = np.real(t.op) if real else t.op
        out += embed(SupportedOperator(op, t.window, d), window).op
    return SupportedOperator(out, window, d)


def full_hamiltonian(spec: ChainSpec) -> np.ndarray:
    return assemble(spec.terms, spec.full_window, spec.d).op


# --- binary dump ---------------------------------------------------------
#
# little-endian layout:
#   magic b"G1DC", then uint32 n, d, k, term_count
#   per term: uint32 start, uint32 width, then (d**width)**2 complex entries
#   in row-major order, each as two float64 (real, imag)

MAGIC = b"G1DC"
_HEADER = struct.Struct("<4s4I")
_TERM = struct.Struct("<2I")


def dump_terms(spec: ChainSpec, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, spec.n, spec.d, spec.k, spec.num_terms))
        for t in spec.terms:
            fh.write(_TERM.pack(t.start, t.width))
            fh.write(np.ascontiguousarray(t.op, dtype="<c16").tobytes())


def load_terms(path: str | Path, name: str = "custom") -> ChainSpec:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ShapeError("truncated chain file")
    magic, n, d, k, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ShapeError(f"bad magic {magic!r}")
    offset = _HEADER.size
    terms = []
    for _ in range(count):
        start, width = _TERM.unpack_from(data, offset)
        offset += _TERM.size
        dim = d**width
        nbytes = dim * dim * 16
        if offset + nbytes > len(data):
            raise ShapeError("truncated chain file")
        op = np.frombuffer(data, dtype="<c16", count=dim * dim, offset=offset).reshape(dim, dim)
        offset += nbytes
        op = np.array(op, dtype=complex)
        if not np.any(op.imag):
            op = op.real.copy()
        terms.append(LocalTerm(start, op, d))
    return ChainSpec(n, d, k, tuple(terms), name=name)
