"""
Exact reference values: full diagonalization, transfer matrices for
commuting chains, thermal expectations and connected correlations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import ChainSpec, full_hamiltonian
from .errors import CommutationError, GeometryError, NumericError
from .operators import (
    Spectrum,
    SupportedOperator,
    check_dim,
    commutator,
    diagonal_in_basis,
    embed,
    herm_eig,
    log_trace_exp,
    op_norm,
)

COMMUTE_TOL = 1e-10
FIT_FLOOR = 1e-14


@dataclass(frozen=True)
class CorrelationRecord:
    distance: int
    value: float
    beta: float
    tags: tuple[str, str] = ("O'", "O")


def _is_diagonal(mat: np.ndarray) -> bool:
    return not np.any(mat - np.diag(np.diagonal(mat)))


def chain_eigenvalues(spec: ChainSpec) -> np.ndarray:
    check_dim(spec.d**spec.n)
    H = full_hamiltonian(spec)
    if _is_diagonal(H):
        return np.sort(np.real(np.diagonal(H)))
    return np.linalg.eigvalsh(H)


def exact_log_partition(spec: ChainSpec, beta: float) -> float:
    """``log tr exp(-beta H)`` by full diagonalization."""
    return log_trace_exp(chain_eigenvalues(spec), -beta)


class ThermalState:
    """Gibbs state ``exp(-beta H) / Z`` of a whole chain, kept in its eigenbasis."""

    def __init__(self, spec: ChainSpec, beta: float):
        check_dim(spec.d**spec.n)
        self.spec = spec
        self.beta = beta
        self.spectrum: Spectrum = herm_eig(full_hamiltonian(spec))
        x = -beta * self.spectrum.eigenvalues
        w = np.exp(x - np.max(x))
        self.weights = w / np.sum(w)

    def density_matrix(self) -> np.ndarray:
        v = self.spectrum.basis
        return (v * self.weights) @ v.conj().T

    def expectation(self, O: SupportedOperator | np.ndarray) -> complex:
        mat = embed(O, self.spec.full_window).op if isinstance(O, SupportedOperator) else O
        v = self.spectrum.basis
        diag = diagonal_in_basis(mat, v)
        return complex(np.dot(self.weights, diag))


def gibbs_expectation(
    spec: ChainSpec, beta: float, O: SupportedOperator, state: ThermalState | None = None
) -> float:
    state = state or ThermalState(spec, beta)
    value = state.expectation(O)
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise NumericError(f"expectation has imaginary part {value.imag:.3g}; is O Hermitian?")
    return value.real


def correlation(
    spec: ChainSpec,
    beta: float,
    O: SupportedOperator,
    O_prime: SupportedOperator,
    state: ThermalState | None = None,
) -> CorrelationRecord:
    """``tr(rho O' O) - tr(rho O') tr(rho O)`` for disjoint supports."""
    if O.window.overlaps(O_prime.window):
        raise GeometryError(f"supports {O.window} and {O_prime.window} overlap")
    state = state or ThermalState(spec, beta)
    full = spec.full_window
    a = embed(O_prime, full).op
    b = embed(O, full).op
    value = state.expectation(a @ b) - state.expectation(a) * state.expectation(b)
    left, right = sorted([O.window, O_prime.window])
    return CorrelationRecord(right.lo - left.hi, float(value.real), beta)


def fit_correlation_length(records: Sequence[CorrelationRecord]) -> tuple[float, float]:
    """Least-squares fit of ``log|value|`` against distance.

    Returns ``(xi, r2)`` with ``xi = -1/slope``. Sentinels: ``xi = inf`` for a
    non-negative slope, ``xi = 0`` when every value sits below the noise floor.
    """
    usable = [r for r in records if abs(r.value) > FIT_FLOOR]
    if not usable:
        return 0.0, float("nan")
    if len(usable) < 4:
        raise ValueError(f"need at least 4 records above {FIT_FLOOR}, got {len(usable)}")
    x = np.array([r.distance for r in usable], dtype=float)
    y = np.log(np.abs([r.value for r in usable]))
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    if slope >= -1e-12:
        return math.inf, float(r2)
    return float(-1.0 / slope), float(r2)


def write_correlation_csv(records: Sequence[CorrelationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "distance", "value"])
        for r in records:
            w.writerow([f"{r.beta:.17g}", r.distance, f"{r.value:.17g}"])


# --- transfer matrix -------------------------------------------------------


def max_commutator(spec: ChainSpec) -> tuple[float, tuple[int, int]]:
    """Largest ``||[h_i, h_j]||`` over overlapping pairs, with the pair (1-based)."""
    worst, pair = 0.0, (0, 0)
    for a, ta in enumerate(spec.terms):
        for b in range(a + 1, spec.num_terms):
            tb = spec.terms[b]
            if not ta.window.overlaps(tb.window):
                continue
            w = ta.window.hull(tb.window)
            c = op_norm(commutator(embed(ta.supported, w).op, embed(tb.supported, w).op))
            if c > worst:
                worst, pair = c, (a + 1, b + 1)
    return worst, pair


def _detect_local_basis(spec: ChainSpec, rng: np.random.Generator) -> list[np.ndarray]:
    # every slice tr_other(h (1 x X)) is diagonal in the common site basis, so a
    # generic random combination of slices has that basis as its eigenbasis
    d = spec.d
    bases = []
    for site in range(1, spec.n + 1):
        acc = np.zeros((d, d), dtype=complex)
        for t in spec.terms:
            if site not in t.window.sites:
                continue
            if t.width == 1:
                acc += rng.normal() * t.op
                continue
            other = 2 if site == t.start else 1
            for _ in range(2):
                x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
                x = x + x.conj().T
                pair = t.op.reshape(d, d, d, d)
                if other == 2:
                    acc += rng.normal() * np.einsum("ajbk,kj->ab", pair, x)
                else:
                    acc += rng.normal() * np.einsum("jakb,kj->ab", pair, x)
        acc = 0.5 * (acc + acc.conj().T)
        bases.append(np.linalg.eigh(acc)[1])
    return bases


def _site_bases(spec: ChainSpec) -> list[np.ndarray]:
    if spec.diagonal_basis is not None:
        return [spec.diagonal_basis] * spec.n
    if all(np.allclose(t.op, np.diag(np.diagonal(t.op)), atol=COMMUTE_TOL) for t in spec.terms):
        return [np.eye(spec.d)] * spec.n
    if spec.k != 2:
        raise CommutationError(
            "no common diagonal basis declared; automatic detection only covers k=2"
        )
    return _detect_local_basis(spec, np.random.default_rng(12345))


def _diagonal_energies(spec: ChainSpec, bases: list[np.ndarray]) -> list[np.ndarray]:
    """Per term, its diagonal in the rotated product basis, padded to a k-site block."""
    d, k, n = spec.d, spec.k, spec.n
    blocks = []
    for t in spec.terms:
        u = bases[t.start - 1]
        for s in range(t.start + 1, t.start + t.width):
            u = np.kron(u, bases[s - 1])
        rotated = u.conj().T @ t.op @ u
        off = rotated - np.diag(np.diagonal(rotated))
        if np.max(np.abs(off), initial=0.0) > 1e-8:
            raise CommutationError(
                f"term {t.start} is not diagonal in the detected product basis"
            )
        diag = np.real(np.diagonal(rotated))
        b0 = min(t.start, n - k + 1)
        left = t.start - b0
        right = b0 + k - 1 - (t.start + t.width - 1)
        block = np.kron(np.ones(d**left), np.kron(diag, np.ones(d**right)))
        blocks.append((b0, block))
    energies = [np.zeros(d**k) for _ in range(n - k + 1)]
    for b0, block in blocks:
        energies[b0 - 1] += block
    return energies


def transfer_matrix_log_partition(spec: ChainSpec, beta: float) -> float:
    """Exact ``log Z`` for commuting chains in ``n * d**k`` work.

    Terms must be simultaneously diagonal in a product basis, either declared by
    the preset or detected for k = 2. The state carries the Boltzmann weights
    of the last ``k - 1`` sites; a running log-scale keeps it in range.
    """
    worst, pair = max_commutator(spec)
    if worst > COMMUTE_TOL:
        raise CommutationError(
            f"terms {pair[0]} and {pair[1]} do not commute (||[h_i, h_j]|| = {worst:.3g})"
        )
    d, k = spec.d, spec.k
    energies = _diagonal_energies(spec, _site_bases(spec))
    state = np.ones(d ** (k - 1))
    log_scale = 0.0
    for e in energies:
        shift = np.min(e)
        weights = np.exp(-beta * (e - shift))
        log_scale -= beta * shift
        state = _step(state, weights, d, k)
        top = np.max(state)
        state = state / top
        log_scale += math.log(top)
    return float(log_scale + math.log(np.sum(state)))


def _step(state: np.ndarray, weights: np.ndarray, d: int, k: int) -> np.ndarray:
    """Sum out site j: state over (j .. j+k-2) -> state over (j+1 .. j+k-1)."""
    if k == 1:
        return state * np.sum(weights)
    prev = state.reshape(d, d ** (k - 2))
    w = weights.reshape(d, d ** (k - 2), d)
    return np.einsum("ar,arb->rb", prev, w).reshape(-1)
