"""
Sequential free-energy estimation from local windows.

``log Z = n log d + sum_i log tr(rho_i A_i)`` where each factor is the ratio
of partition functions with and without ``h_i`` for the partial Hamiltonian
``H_i = h_1 + ... + h_{i-1}``. The estimator replaces each factor by the same
ratio computed on the window ``L_l`` around ``h_i``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import (
    ChainSpec,
    assemble,
    is_clipped,
    partial_hamiltonian,
    split,
    window_around,
)
from .errors import GeometryError, Gibbs1DError, NumericError
from .oracles import exact_log_partition
from .operators import (
    SupportedOperator,
    Window,
    conjugate,
    diagonal_in_basis,
    embed,
    herm_eig,
    log_trace_exp,
    op_norm,
    partial_trace,
    truncate,
)
from .qbp import DysonParams, QbpParams, build_A, gauss_legendre, window_operators

STEP_METHODS = ("window_ratio", "explicit_qbp", "explicit_dyson")
ERROR_FLOOR = 1e-13
REFERENCE_MAX_DIM = 2**12


@dataclass(frozen=True)
class StepEstimate:
    term_index: int
    window: Window
    log_ratio: float
    method: str
    clipped: bool
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class FreeEnergyReport:
    beta: float
    n: int
    d: int
    l: int
    steps: list[StepEstimate]
    free_energy_density: float
    l1: int | None = None
    l2: int | None = None
    exact_reference: float | None = None
    abs_error: float | None = None
    total_time: float = 0.0

    def recompute_density(self) -> float:
        total = 0.0
        for s in self.steps:
            total += s.log_ratio
        return math.log(self.d) + total / self.n


def _window_eigenvalues(op: np.ndarray) -> np.ndarray:
    if op.size == 1:
        return np.real(op.reshape(1))
    return np.linalg.eigvalsh(op)


def step_ratio(spec: ChainSpec, i: int, l: int, beta: float) -> StepEstimate:
    """``log tr exp(-beta (H_in + h_i)) - log tr exp(-beta H_in)`` on ``L_l``.

    ``H_in`` holds the terms of ``H_i`` lying entirely inside the window.
    """
    start = time.perf_counter()
    W = window_around(spec, i, l)
    inside = split(partial_hamiltonian(spec, i), W).inside
    H_in = assemble(inside, W, spec.d).op
    h = embed(spec.term(i).supported, W).op
    if np.iscomplexobj(h) and not np.iscomplexobj(H_in):
        H_in = H_in.astype(complex)
    with_term = log_trace_exp(_window_eigenvalues(H_in + h), -beta)
    without = log_trace_exp(_window_eigenvalues(H_in), -beta)
    return StepEstimate(
        i, W, with_term - without, "window_ratio", is_clipped(spec, i, l), time.perf_counter() - start
    )


def restrict(op: SupportedOperator, keep: Window) -> SupportedOperator:
    """Normalized partial trace of ``op`` down to the window ``keep``."""
    if not op.window.contains(keep):
        raise GeometryError(f"{keep} is not inside {op.window}")
    pos = [s - op.window.lo for s in keep.sites]
    traced = op.d ** (op.window.size - keep.size)
    return SupportedOperator(partial_trace(op.op, op.d, op.window.size, pos) / traced, keep, op.d)


def _gibbs_trace(H: np.ndarray, O: np.ndarray, beta: float) -> complex:
    """``tr(exp(-beta H) O) / tr(exp(-beta H))``."""
    gen = herm_eig(H)
    x = -beta * gen.eigenvalues
    p = np.exp(x - np.max(x))
    p /= np.sum(p)
    v = gen.basis
    return complex(np.dot(p, diagonal_in_basis(O, v)))


def step_ratio_explicit(
    spec: ChainSpec,
    i: int,
    l: int,
    l1: int,
    beta: float,
    method: str = "explicit_qbp",
    qbp_params: QbpParams = QbpParams(),
    dyson_params: DysonParams = DysonParams(),
    pad: int = 4,
) -> StepEstimate:
    """``log tr(rho_i^(L_l) A^(L_l1))`` with ``A`` built on ``L_(l1 + pad)``."""
    if l < l1:
        raise GeometryError(f"window radius l={l} is smaller than l1={l1}")
    start = time.perf_counter()
    inner = {"explicit_qbp": "qbp", "explicit_dyson": "dyson", "explicit_exact": "exact"}[method]
    H_A, h_A = window_operators(spec, i, l1 + pad)
    A = build_A(H_A, h_A, beta, inner, qbp_params, dyson_params)
    L1 = window_around(spec, i, l1)
    W = window_around(spec, i, l)
    A_local = embed(restrict(A, L1), W).op
    inside = split(partial_hamiltonian(spec, i), W).inside
    value = _gibbs_trace(assemble(inside, W, spec.d).op, A_local, beta)
    if value.real <= 0:
        raise NumericError(f"step {i}: tr(rho A) = {value:.3g} is not positive")
    return StepEstimate(
        i, W, math.log(value.real), method, is_clipped(spec, i, l), time.perf_counter() - start
    )


def estimate_free_energy(
    spec: ChainSpec,
    beta: float,
    l: int,
    method: str = "window_ratio",
    l1: int | None = None,
    qbp_params: QbpParams = QbpParams(),
    dyson_params: DysonParams = DysonParams(),
    pad: int = 4,
    threads: int = 1,
    reference: bool = True,
) -> FreeEnergyReport:
    """Estimate ``log Z / n`` term by term.

    Steps are independent and may run on ``threads`` workers; their log ratios
    are always summed in term order, so the result does not depend on
    scheduling.
    """
    if method not in STEP_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {STEP_METHODS}")
    start = time.perf_counter()

    def run(i: int) -> StepEstimate:
        try:
            if method == "window_ratio":
                return step_ratio(spec, i, l, beta)
            return step_ratio_explicit(
                spec, i, l, l if l1 is None else l1, beta, method, qbp_params, dyson_params, pad
            )
        except Gibbs1DError as exc:
            raise type(exc)(f"step {i}: {exc}") from exc

    indices = range(1, spec.num_terms + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            steps = list(pool.map(run, indices))
    else:
        steps = [run(i) for i in indices]

    report = FreeEnergyReport(beta, spec.n, spec.d, l, steps, 0.0, l1=l1)
    report.free_energy_density = report.recompute_density()
    if reference and spec.d**spec.n <= REFERENCE_MAX_DIM:
        report.exact_reference = exact_log_partition(spec, beta) / spec.n
        report.abs_error = abs(report.free_energy_density - report.exact_reference)
    report.total_time = time.perf_counter() - start
    return report


@dataclass
class SweepResult:
    records: list[dict]
    decay_rate: float
    r2: float
    note: str = ""


def sweep_window(
    spec: ChainSpec,
    beta: float,
    l_values: Sequence[int],
    method: str = "window_ratio",
    **kwargs,
) -> SweepResult:
    """Density error against the exact value for each ``l``, with a log-linear fit."""
    exact = exact_log_partition(spec, beta) / spec.n
    records = []
    for l in l_values:
        rep = estimate_free_energy(spec, beta, l, method, reference=False, **kwargs)
        records.append(
            {"l": l, "density": rep.free_energy_density, "abs_error": abs(rep.free_energy_density - exact)}
        )
    usable = [r for r in records if r["abs_error"] > ERROR_FLOOR]
    if len(usable) < 3:
        exact_hit = len(usable) < len(records)
        note = "exact at finite l" if exact_hit else "fit-insufficient"
        return SweepResult(records, math.nan, math.nan, note)
    x = np.array([r["l"] for r in usable], dtype=float)
    y = np.log([r["abs_error"] for r in usable])
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return SweepResult(records, float(slope), float(r2))


def suggest_window(result: SweepResult, target_eps: float) -> int | None:
    """Smallest ``l`` at which the fitted decay reaches ``target_eps``."""
    if not result.decay_rate < 0:
        return None
    usable = [r for r in result.records if r["abs_error"] > ERROR_FLOOR]
    x = np.array([r["l"] for r in usable], dtype=float)
    y = np.log([r["abs_error"] for r in usable])
    icept = float(np.mean(y - result.decay_rate * x))
    return max(0, math.ceil((math.log(target_eps) - icept) / result.decay_rate))


# --- error budget ------------------------------------------------------------


@dataclass
class ErrorBudget:
    i: int
    l: int
    l1: int
    l2: int
    t1: float
    t2: float
    t3: float
    lhs: float
    beta: float
    refinement_delta: float = math.nan

    @property
    def bound(self) -> float:
        return self.t1 + 2.0 * self.beta * (self.t2 + self.t3)


def _near(sites: Sequence[int], radius: int, n: int) -> list[int]:
    out = set()
    for s in sites:
        out.update(range(max(1, s - radius), min(n, s + radius) + 1))
    return sorted(out)


def _budget_integrals(H_i, H_b, A1, keep2, beta, grid, d, full):
    nodes, weights = gauss_legendre(0.0, 1.0, grid)
    norm_A1 = op_norm(A1)
    t2 = t3 = 0.0
    for s, ws in zip(nodes, weights):
        gen = herm_eig(beta * (H_i - s * H_b))
        x = -gen.eigenvalues
        p = np.exp(x - np.max(x))
        p /= np.sum(p)
        v = gen.basis

        def expect(O):
            return np.dot(p, diagonal_in_basis(O, v))

        mean_A1 = expect(A1)
        for kappa, wk in zip(nodes, weights):
            X = conjugate(H_b, gen, kappa)
            X2 = truncate(SupportedOperator(X, full, d), keep2).op
            t2 += ws * wk * norm_A1 * op_norm(X - X2)
            cor = expect(X2 @ A1) - expect(X2) * mean_A1
            t3 += ws * wk * 0.5 * abs(cor)
    return t2, t3


def error_budget(
    spec: ChainSpec,
    i: int,
    l: int,
    l1: int,
    l2: int,
    beta: float,
    grid: int = 8,
    method: str = "exact",
    qbp_params: QbpParams = QbpParams(),
    dyson_params: DysonParams = DysonParams(),
    refine: bool = True,
) -> ErrorBudget:
    """Evaluate both sides of the three-term bound on ``|tr(rho_i A_i) - tr(rho_i^(L_l) A_i^(L_l1))|``.

    T1 = ``||A - A^(L_l1)||``; T2 and T3 are the ``(s, kappa)`` integrals of
    ``||A^(L_l1)|| ||H_b(s,k) - H_b(s,k)^(L'_l2)||`` and
    ``|Cor_rho(s)(H_b(s,k)^(L'_l2), A^(L_l1))| / 2`` on a tensor Gauss-Legendre
    grid, with ``H_b(s,k) = exp(k beta H_i(s)) H_b exp(-k beta H_i(s))`` and
    ``H_i(s) = H_i - s H_b``. Everything lives on the full chain, so ``A_i``
    here is the exact non-truncated operator.
    """
    if l < l1 + l2:
        raise GeometryError(f"need l >= l1 + l2, got l={l}, l1={l1}, l2={l2}")
    full = spec.full_window
    d = spec.d
    terms_i = partial_hamiltonian(spec, i)
    H_i = assemble(terms_i, full, d)
    h = embed(spec.term(i).supported, full)
    A = build_A(H_i, h, beta, method, qbp_params, dyson_params).op
    L1 = window_around(spec, i, l1)
    A1 = truncate(SupportedOperator(A, full, d), L1).op
    t1 = op_norm(A - A1)

    W = window_around(spec, i, l)
    parts = split(terms_i, W)
    H_in = assemble(parts.inside, full, d).op
    H_b = assemble(parts.boundary, full, d).op
    lhs = abs(_gibbs_trace(H_i.op, A, beta) - _gibbs_trace(H_in, A1, beta))

    if not parts.boundary or beta == 0:
        return ErrorBudget(i, l, l1, l2, t1, 0.0, 0.0, lhs, beta, 0.0 if refine else math.nan)
    keep2 = _near(parts.boundary_sites, l2, spec.n)
    t2, t3 = _budget_integrals(H_i.op, H_b, A1, keep2, beta, grid, d, full)
    delta = math.nan
    if refine:
        r2, r3 = _budget_integrals(H_i.op, H_b, A1, keep2, beta, 2 * grid, d, full)
        delta = abs((r2 + r3) - (t2 + t3))
    return ErrorBudget(i, l, l1, l2, t1, t2, t3, lhs, beta, delta)


# --- CSV -----------------------------------------------------------------------


def _g(x: float) -> str:
    return f"{x:.17g}"


def write_steps_csv(report: FreeEnergyReport, path, timings: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["i", "lo", "hi", "log_ratio", "clipped"]
        w.writerow(header + (["time_ms"] if timings else []))
        for s in report.steps:
            row = [s.term_index, s.window.lo, s.window.hi, _g(s.log_ratio), int(s.clipped)]
            if timings:
                row.append(f"{1e3 * s.wall_time:.3f}")
            w.writerow(row)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l", "density", "abs_error"])
        for r in result.records:
            w.writerow([r["l"], _g(r["density"]), _g(r["abs_error"])])


def write_budget_csv(budgets: Sequence[ErrorBudget], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "l", "l1", "l2", "T1", "T2", "T3", "lhs"])
        for b in budgets:
            w.writerow([b.i, b.l, b.l1, b.l2, _g(b.t1), _g(b.t2), _g(b.t3), _g(b.lhs)])
