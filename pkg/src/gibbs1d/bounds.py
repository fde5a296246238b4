"""
Numerical certification of the locality bounds behind the estimator.

Bounds with explicit constants (imaginary-time Lieb-Robinson, multicommutator
sum and its Lambert-W closed form) are checked as strict inequalities with a
small absolute slack. Bounds with an unknown prefactor (real-time
Lieb-Robinson) are compared by decay shape only and never count as violated.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .chain import ChainSpec, assemble, build_preset, full_hamiltonian, seeded_rng, split, window_around
from .engine import _gibbs_trace
from .operators import (
    SupportedOperator,
    Window,
    adjoint_power,
    conjugate,
    embed,
    herm_eig,
    op_norm,
    truncate,
)
from .qbp import gauss_legendre

GAMMA = 1.6026
ABS_SLACK = 1e-9
KINDS = ("imag_lr", "multicomm_sum", "multicomm_closed", "trunc_identity", "real_lr")


@dataclass(frozen=True)
class BoundCheckRecord:
    kind: str
    params: tuple[tuple[str, float], ...]
    measured: float
    bound: float
    applicable: bool
    violated: bool = False
    note: str = ""

    def __post_init__(self):
        if self.violated and not self.applicable:
            raise ValueError("a record can only be violated when the bound applies")

    def param(self, key: str) -> float:
        return dict(self.params)[key]


def make_record(
    kind: str,
    params: dict,
    measured: float,
    bound: float,
    applicable: bool,
    note: str = "",
) -> BoundCheckRecord:
    violated = applicable and measured > bound + ABS_SLACK
    return BoundCheckRecord(kind, tuple(params.items()), measured, bound, applicable, violated, note)


# --- Lambert W ------------------------------------------------------------------


def lambert_w(x: float, tol: float = 1e-15, max_iter: int = 100) -> float:
    """Principal branch of ``W(x) exp(W(x)) = x`` for ``x >= 0`` by Halley iteration."""
    if x < 0 or math.isnan(x):
        raise ValueError("lambert_w is implemented for x >= 0 only")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return math.inf
    w = math.log1p(x)
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= tol * max(1.0, abs(w)):
            break
    return w


# --- imaginary-time Lieb-Robinson ---------------------------------------------------


def imag_lr_measured(spec: ChainSpec, O: SupportedOperator, tau: float, l2: int) -> float:
    """``||O(i tau) - O(i tau)^(L'_l2)||`` with ``O(i tau) = exp(tau H) O exp(-tau H)``."""
    return imag_lr_profile(spec, O, tau, [l2])[0]


def imag_lr_profile(
    spec: ChainSpec, O: SupportedOperator, tau: float, l2_values: Sequence[int]
) -> list[float]:
    """``imag_lr_measured`` for several ``l2`` sharing one diagonalization."""
    full = spec.full_window
    if tau == 0:
        return [0.0 for _ in l2_values]
    gen = herm_eig(full_hamiltonian(spec))
    X = conjugate(embed(O, full).op.astype(complex), gen, tau)
    out = []
    for l2 in l2_values:
        keep = O.window.extend(l2, spec.n)
        if keep == full:
            out.append(0.0)
            continue
        out.append(op_norm(X - truncate(SupportedOperator(X, full, spec.d), keep).op))
    return out


def imag_lr_bound(tau: float, l2: int, k: int) -> tuple[float, bool]:
    """``zeta^ceil(l2/k) / (1 - zeta)`` with ``zeta = 6 e k tau / (gamma log ceil(l2/k))``.

    Applicable only when ``ceil(l2/k) >= 2`` and ``zeta < 1``; otherwise the
    value is ``inf`` and the record is flagged inapplicable.
    """
    c = math.ceil(l2 / k)
    if c < 2:
        return math.inf, False
    zeta = 6.0 * math.e * k * tau / (GAMMA * math.log(c))
    if zeta >= 1.0:
        return math.inf, False
    return zeta**c / (1.0 - zeta), True


# --- multicommutators -------------------------------------------------------------


def multicomm_measured(spec: ChainSpec, O: SupportedOperator, m: int) -> float:
    return op_norm(adjoint_power(spec.terms, O, m))


def multicomm_profile(spec: ChainSpec, O: SupportedOperator, m_max: int) -> list[float]:
    """``||ad_H^m(O)||`` for ``m = 0 .. m_max``, reusing each level."""
    out = [op_norm(O)]
    current = O
    for _ in range(m_max):
        current = adjoint_power(spec.terms, current, 1)
        out.append(op_norm(current))
    return out


def multicomm_bound_sum(m: int, k: int, l0: int) -> float:
    """``sum_q C(m,q) 2^(m+q) [l0 + q(k-1)]^(m-q) (k-1)^q`` (per unit ``||O||``)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if m <= 20:
        return float(
            sum(
                math.comb(m, q) * 2 ** (m + q) * (l0 + q * (k - 1)) ** (m - q) * (k - 1) ** q
                for q in range(m + 1)
            )
        )
    logs = []
    for q in range(m + 1):
        if k == 1 and q > 0:
            continue
        base = l0 + q * (k - 1)
        if base == 0 and m - q > 0:
            continue
        lt = (
            math.lgamma(m + 1)
            - math.lgamma(q + 1)
            - math.lgamma(m - q + 1)
            + (m + q) * math.log(2)
            + (m - q) * (math.log(base) if m > q else 0.0)
            + (q * math.log(k - 1) if q else 0.0)
        )
        logs.append(lt)
    if not logs:
        return 0.0
    top = max(logs)
    return math.exp(top + math.log(sum(math.exp(v - top) for v in logs)))


def multicomm_bound_closed(m: int, k: int, l0: int) -> tuple[float, float | None]:
    """Lambert-W closed form and, when ``l0 <= k`` and ``m >= 2``, the simplified form.

    closed     = (6k)^m u^(M - u),  M = m + l0/k,  u = M / W(e M)
    simplified = (6 k m / (gamma log m))^m
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    M = m + l0 / k
    u = M / lambert_w(math.e * M)
    closed = math.exp(m * math.log(6 * k) + (M - u) * math.log(u))
    simplified = None
    if l0 <= k and m >= 2:
        simplified = (6 * k * m / (GAMMA * math.log(m))) ** m
    return closed, simplified


# --- truncation-formula identity ------------------------------------------------


def _identity_integral(H, H_b, O, beta, ns, nk):
    s_nodes, s_w = gauss_legendre(0.0, 1.0, ns)
    k_nodes, k_w = gauss_legendre(0.0, 1.0, nk)
    total = 0.0
    for s, ws in zip(s_nodes, s_w):
        gen = herm_eig(beta * (H - s * H_b))
        x = -gen.eigenvalues
        p = np.exp(x - np.max(x))
        p /= np.sum(p)
        v = gen.basis
        O_rot = v.conj().T @ O @ v
        mean_O = np.dot(p, np.diagonal(O_rot))
        Hb_rot = v.conj().T @ H_b @ v
        lam = gen.eigenvalues
        for kap, wk in zip(k_nodes, k_w):
            # X = exp(kap G) H_b exp(-kap G) in the eigenbasis of G
            X_rot = Hb_rot * np.exp(kap * (lam[:, None] - lam[None, :]))
            cor = np.dot(p, np.einsum("ab,ba->a", X_rot, O_rot)) - np.dot(
                p, np.diagonal(X_rot)
            ) * mean_O
            total += ws * wk * cor
    return total


@dataclass
class TruncIdentityResult:
    residual: float
    refined_residual: float
    refinement_delta: float
    grid: tuple[int, int]


def trunc_identity_residual(
    spec: ChainSpec,
    O_L: SupportedOperator,
    l: int,
    beta: float,
    grid: tuple[int, int] = (16, 16),
) -> TruncIdentityResult:
    """Residual of ``tr(rho O) - tr(rho^(L_l) O) = -beta int int Cor_rho(s)(H_b(s,k), O)``.

    ``L_l`` is ``O``'s support grown by ``l``; ``H_b`` collects the terms
    straddling its edge, ``rho(s)`` is the Gibbs state of ``H - s H_b`` and
    ``H_b(s,k) = exp(k beta H(s)) H_b exp(-k beta H(s))``. Also returns the
    residual on the doubled grid.
    """
    full = spec.full_window
    W = O_L.window.extend(l, spec.n)
    parts = split(spec.terms, W)
    H = full_hamiltonian(spec)
    H_b = assemble(parts.boundary, full, spec.d).op
    O = embed(O_L, full).op
    lhs = _gibbs_trace(H, O, beta) - _gibbs_trace(H - H_b, O, beta)
    ns, nk = grid
    res = abs(lhs + beta * _identity_integral(H, H_b, O, beta, ns, nk))
    fine = abs(lhs + beta * _identity_integral(H, H_b, O, beta, 2 * ns, 2 * nk))
    return TruncIdentityResult(float(res), float(fine), float(abs(res - fine)), (ns, nk))


# --- real-time Lieb-Robinson (shape only) ------------------------------------------


def real_lr_shape(t: float, l: int, k: int) -> float:
    m0 = math.floor(l / k + 1)
    if t == 0:
        return 0.0
    return min((2 * math.e * k * k * abs(t) / m0) ** m0, 1.0)


def real_lr_check(spec: ChainSpec, term_index: int, t: float, l: int) -> BoundCheckRecord:
    """``||h_i(t) - h_i(t)^(L_l)||`` next to the unnormalized decay shape."""
    return real_lr_sweep(spec, term_index, t, [l])[0]


def real_lr_sweep(
    spec: ChainSpec, term_index: int, t: float, l_values: Sequence[int]
) -> list[BoundCheckRecord]:
    full = spec.full_window
    h = embed(spec.term(term_index).supported, full).op.astype(complex)
    if t != 0:
        h = conjugate(h, herm_eig(full_hamiltonian(spec)), 1j * t)
    out = []
    for l in l_values:
        keep = window_around(spec, term_index, l)
        if t == 0 or keep == full:
            measured = 0.0
        else:
            measured = op_norm(h - truncate(SupportedOperator(h, full, spec.d), keep).op)
        params = {"i": term_index, "t": t, "l": l, "k": spec.k}
        out.append(make_record("real_lr", params, measured, real_lr_shape(t, l, spec.k), False))
    return out


def log_slope(xs: Sequence[float], ys: Sequence[float], floor: float = 1e-13) -> float:
    pts = [(x, math.log(y)) for x, y in zip(xs, ys) if y > floor]
    if len(pts) < 2:
        return math.nan
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def real_lr_shape_ok(records: Sequence[BoundCheckRecord], tol: float = 0.1) -> bool | None:
    """Measured log-slope no shallower than the shape's, over the points where it is below 1."""
    rows = [r for r in records if 0 < r.bound < 1]
    if len(rows) < 2:
        return None
    xs = [r.param("l") for r in rows]
    sm = log_slope(xs, [r.measured for r in rows])
    sb = log_slope(xs, [r.bound for r in rows])
    if math.isnan(sm):
        return True
    return sm <= sb + tol * abs(sb)


# --- randomized suites --------------------------------------------------------------


@dataclass
class SuiteConfig:
    seeds: Sequence[int] = tuple(range(100))
    ks: tuple[int, ...] = (2, 3)
    n_min: int = 6
    n_max: int = 10
    tau_min: float = 1e-3
    tau_max: float = 0.5
    l2_max: int = 8
    m_min: int = 2
    m_max: int = 6
    bound_scale: float = 1.0
    workers: int = 1
    # inapplicable imaginary-time records are logged with measured = nan unless set
    measure_inapplicable: bool = False


def random_local_operator(rng: np.random.Generator, d: int, width: int) -> np.ndarray:
    dim = d**width
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return a / op_norm(a)


def _instance(seed: int, cfg: SuiteConfig, stream: int):
    rng = seeded_rng(seed, stream)
    k = cfg.ks[seed % len(cfg.ks)]
    n = int(rng.integers(max(cfg.n_min, k + 1), cfg.n_max + 1))
    spec = build_preset("random_klocal", n, 2, k, seed=seed)
    width = int(rng.integers(1, k + 1))
    lo = int(rng.integers(1, n - width + 2))
    O = SupportedOperator(random_local_operator(rng, 2, width), Window(lo, lo + width - 1))
    return rng, spec, O


def _imag_lr_seed(seed: int, cfg: SuiteConfig) -> list[BoundCheckRecord]:
    rng, spec, O = _instance(seed, cfg, 1)
    tau = float(math.exp(rng.uniform(math.log(cfg.tau_min), math.log(cfg.tau_max))))
    bounds = {l2: imag_lr_bound(tau, l2, spec.k) for l2 in range(cfg.l2_max + 1)}
    wanted = [l2 for l2, (_, ok) in bounds.items() if ok or cfg.measure_inapplicable]
    measured = dict(zip(wanted, imag_lr_profile(spec, O, tau, wanted))) if wanted else {}
    out = []
    for l2, (bound, ok) in bounds.items():
        params = {"seed": seed, "n": spec.n, "k": spec.k, "tau": tau, "l2": l2, "l0": O.window.size}
        note = "" if ok else "inapplicable"
        out.append(make_record("imag_lr", params, measured.get(l2, math.nan), bound * cfg.bound_scale, ok, note))
    return out


def _multicomm_seed(seed: int, cfg: SuiteConfig) -> list[BoundCheckRecord]:
    _, spec, O = _instance(seed, cfg, 2)
    l0 = O.window.size
    norms = multicomm_profile(spec, O, cfg.m_max)
    out = []
    for m in range(cfg.m_min, cfg.m_max + 1):
        s = multicomm_bound_sum(m, spec.k, l0)
        closed, _ = multicomm_bound_closed(m, spec.k, l0)
        params = {"seed": seed, "n": spec.n, "k": spec.k, "m": m, "l0": l0}
        note = "m=1 convention" if m == 1 else ""
        out.append(make_record("multicomm_sum", params, norms[m], norms[0] * s * cfg.bound_scale, True, note))
        out.append(make_record("multicomm_closed", params, s, closed * cfg.bound_scale, True))
    return out


def _run_suite(fn: Callable, cfg: SuiteConfig) -> list[BoundCheckRecord]:
    seeds = list(cfg.seeds)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(lambda s: fn(s, cfg), seeds))
    else:
        chunks = [fn(s, cfg) for s in seeds]
    return [r for chunk in chunks for r in chunk]


def imag_lr_suite(cfg: SuiteConfig = SuiteConfig()) -> list[BoundCheckRecord]:
    return _run_suite(_imag_lr_seed, cfg)


def multicomm_suite(cfg: SuiteConfig = SuiteConfig()) -> list[BoundCheckRecord]:
    return _run_suite(_multicomm_seed, cfg)


@dataclass
class SuiteSummary:
    total: int
    applicable: int
    violations: list[BoundCheckRecord] = field(default_factory=list)

    @property
    def worst(self) -> BoundCheckRecord | None:
        if not self.violations:
            return None
        return max(self.violations, key=lambda r: r.measured / r.bound if r.bound > 0 else math.inf)


def summarize(records: Iterable[BoundCheckRecord]) -> SuiteSummary:
    records = list(records)
    return SuiteSummary(
        len(records),
        sum(r.applicable for r in records),
        [r for r in records if r.violated and r.note != "m=1 convention"],
    )


def write_records_csv(records: Sequence[BoundCheckRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "params", "measured", "bound", "applicable", "violated", "note"])
        for r in records:
            params = ";".join(f"{k}={v:.17g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.params)
            w.writerow(
                [r.kind, params, f"{r.measured:.17g}", f"{r.bound:.17g}", int(r.applicable), int(r.violated), r.note]
            )
