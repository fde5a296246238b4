"""
Operators that split one term out of a Gibbs operator.

For a window Hamiltonian ``H`` and one extra term ``h`` we build ``A`` with
``tr(exp(-beta H) A) = tr(exp(-beta (H + h)))`` in three ways:

* ``exact_A``  -- ``exp(beta H) exp(-beta (H + h))`` from two spectra;
* ``dyson_A``  -- the imaginary-time ordered exponential, integrated as an ODE;
* ``qbp_A``    -- ``B^H B`` with ``B`` the tau-ordered exponential of the
  belief-propagation generator ``eta(tau)``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .chain import ChainSpec, assemble, partial_hamiltonian, split, window_around
from .errors import ExponentOverflowError, StabilityError
from .operators import (
    EXP_LIMIT,
    Spectrum,
    SupportedOperator,
    embed,
    expm_scaled,
    expm_taylor,
    herm_eig,
    op_norm,
    truncate,
)

METHODS = ("exact", "qbp", "dyson")


class QuadratureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QbpParams:
    """Real-time quadrature and Trotter settings.

    ``t_max`` of ``None`` means ``8 * beta``; the kernel tail past it is
    below ``exp(-16 pi)``.
    """

    t_max: float | None = None
    n_t: int = 400
    m_trotter: int = 64
    quadrature: str = "gauss_legendre"

    def __post_init__(self):
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.n_t < 8:
            raise ValueError("n_t must be at least 8")
        if self.m_trotter < 4:
            raise ValueError("m_trotter must be at least 4")
        if self.quadrature not in ("gauss_legendre", "trapezoid"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")

    def cutoff(self, beta: float) -> float:
        return 8.0 * beta if self.t_max is None else self.t_max


@dataclass(frozen=True)
class DysonParams:
    n_tau: int = 64
    order: str = "rk4"

    def __post_init__(self):
        if self.n_tau < 8:
            raise ValueError("n_tau must be at least 8")
        if self.order not in ("midpoint", "rk4"):
            raise ValueError(f"unknown order {self.order!r}")


def qbp_kernel(t, beta: float):
    """``sum_{n>=1} exp(-2 pi n t / beta) = 1 / (exp(2 pi t / beta) - 1)`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("kernel is defined for t > 0 only")
    return 1.0 / np.expm1(2.0 * math.pi * t / beta)


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _nodes(params: QbpParams, beta: float) -> tuple[np.ndarray, np.ndarray]:
    t_max = params.cutoff(beta)
    if params.quadrature == "gauss_legendre":
        return gauss_legendre(0.0, t_max, params.n_t)
    t = np.linspace(0.0, t_max, params.n_t + 1)
    w = np.full(t.shape, t_max / params.n_t)
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w


def _on_common_window(H: SupportedOperator, h: SupportedOperator):
    w = H.window.hull(h.window)
    return embed(H, w), embed(h, w)


def _kernel_weights(beta: float, params: QbpParams, kernel: Callable):
    """Nodes and kernel-folded weights; a ``t = 0`` node gets ``w * lim t K(t)``."""
    t, w = _nodes(params, beta)
    weights = np.empty_like(t)
    small = t == 0.0
    eps = 1e-9 * beta
    weights[~small] = w[~small] * kernel(t[~small], beta)
    weights[small] = w[small] * float(kernel(eps, beta)) * eps
    return t, weights, small


def sine_transform(omega, beta: float, params: QbpParams = QbpParams(), kernel: Callable = qbp_kernel):
    """``int_0^t_max K(t) sin(omega t) dt`` elementwise, by the configured rule.

    At ``t = 0`` (trapezoid only) the integrand is replaced by its limit
    ``omega * lim t K(t)``.
    """
    t, weights, small = _kernel_weights(beta, params, kernel)
    flat = np.asarray(omega, dtype=float).reshape(-1)
    out = np.empty_like(flat)
    chunk = max(1, 2_000_000 // len(t))
    for lo in range(0, flat.size, chunk):
        vals = np.sin(flat[lo : lo + chunk, None] * t[None, :])
        vals[:, small] = flat[lo : lo + chunk, None]
        out[lo : lo + chunk] = vals @ weights
    return out.reshape(np.shape(omega))


def difference_sine_transform(
    lam: np.ndarray, beta: float, params: QbpParams = QbpParams(), kernel: Callable = qbp_kernel
) -> np.ndarray:
    """``sine_transform(lam_a - lam_b)`` for all pairs, via two matrix products.

    Uses ``sin((a - b) t) = sin(a t) cos(b t) - cos(a t) sin(b t)``; the
    result is antisymmetrized so it is exactly odd under transposition.
    """
    t, weights, small = _kernel_weights(beta, params, kernel)
    phase = np.outer(lam, t[~small])
    P = (np.sin(phase) * weights[~small]) @ np.cos(phase).T
    F = P - P.T
    if np.any(small):
        F += np.sum(weights[small]) * (lam[:, None] - lam[None, :])
    return F


def _eta_in_basis(gen: Spectrum, h: np.ndarray, beta: float, params: QbpParams, kernel) -> np.ndarray:
    # h(t) - h(-t) has elements 2i sin(w_ab t) h_ab in the eigenbasis of the
    # generator, w_ab = lam_a - lam_b, so the real-time integral reduces to a
    # scalar sine transform per matrix element
    v = gen.basis
    h_tilde = v.conj().T @ h @ v
    F = difference_sine_transform(gen.eigenvalues, beta, params, kernel)
    eta_tilde = h_tilde * (-0.5 * beta + 2.0 * F)
    return v @ eta_tilde @ v.conj().T


def eta(
    tau: float,
    H_win: SupportedOperator,
    h: SupportedOperator,
    beta: float,
    params: QbpParams = QbpParams(),
    kernel: Callable = qbp_kernel,
) -> SupportedOperator:
    """Belief-propagation generator at interpolation parameter ``tau``.

    ``eta = -beta h / 2 - i int_0^t_max K(t) [h(t, tau) - h(-t, tau)] dt`` with
    ``h(t, tau)`` the real-time evolution of ``h`` under ``H + tau h``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    H_win, h = _on_common_window(H_win, h)
    if beta == 0:
        return SupportedOperator(np.zeros(h.op.shape, dtype=complex), h.window, h.d)
    gen = herm_eig(H_win.op + tau * h.op)
    result = _eta_in_basis(gen, h.op, beta, params, kernel)
    t_max = params.cutoff(beta)
    tail = float(kernel(t_max, beta)) * 2.0 * op_norm(h.op) * t_max
    if tail > 1e-3 * op_norm(result):
        warnings.warn(
            f"t_max={t_max:.3g} leaves a kernel tail of {tail:.3g}; increase t_max",
            QuadratureWarning,
            stacklevel=2,
        )
    return SupportedOperator(result, h.window, h.d)


def qbp_B(
    H_win: SupportedOperator,
    h: SupportedOperator,
    beta: float,
    params: QbpParams = QbpParams(),
    kernel: Callable = qbp_kernel,
) -> SupportedOperator:
    """Ordered product ``exp(eta(tau_m)/m) ... exp(eta(tau_1)/m)``, ``tau_s = s/m``."""
    H_win, h = _on_common_window(H_win, h)
    dim = h.dim
    if beta == 0:
        return SupportedOperator(np.eye(dim, dtype=complex), h.window, h.d)
    m = params.m_trotter
    B = np.eye(dim, dtype=complex)
    for s in range(1, m + 1):
        gen = herm_eig(H_win.op + (s / m) * h.op)
        slice_ = _eta_in_basis(gen, h.op, beta, params, kernel) / m
        B = expm_taylor(slice_) @ B
    return SupportedOperator(B, h.window, h.d)


def qbp_A(
    H_win: SupportedOperator,
    h: SupportedOperator,
    beta: float,
    params: QbpParams = QbpParams(),
    kernel: Callable = qbp_kernel,
) -> SupportedOperator:
    B = qbp_B(H_win, h, beta, params, kernel)
    A = B.op.conj().T @ B.op
    return SupportedOperator(0.5 * (A + A.conj().T), B.window, B.d)


def exact_A(H_win: SupportedOperator, h: SupportedOperator, beta: float) -> SupportedOperator:
    """``exp(beta H) exp(-beta (H + h))``."""
    H_win, h = _on_common_window(H_win, h)
    if beta == 0:
        return SupportedOperator(np.eye(h.dim), h.window, h.d)
    A = expm_scaled(herm_eig(H_win.op), beta) @ expm_scaled(herm_eig(H_win.op + h.op), -beta)
    return SupportedOperator(A, h.window, h.d)


def dyson_A(
    H_win: SupportedOperator,
    h: SupportedOperator,
    beta: float,
    params: DysonParams = DysonParams(),
) -> SupportedOperator:
    """Integrate ``dU/dtau = -exp(tau H) h exp(-tau H) U`` from ``U(0) = 1`` to ``tau = beta``.

    Works in the eigenbasis of ``H``, where the generator is
    ``-h_ab exp(tau (lam_a - lam_b))`` and can be evaluated exactly at every
    stage time.
    """
    H_win, h = _on_common_window(H_win, h)
    dim = h.dim
    if beta == 0:
        return SupportedOperator(np.eye(dim), h.window, h.d)
    gen = herm_eig(H_win.op)
    v, lam = gen.basis, gen.eigenvalues
    h_tilde = v.conj().T @ h.op @ v
    omega = lam[:, None] - lam[None, :]
    if beta * np.max(omega) > EXP_LIMIT:
        raise ExponentOverflowError("beta * spectral width overflows; lower beta")

    def rhs(tau, U):
        return -(h_tilde * np.exp(tau * omega)) @ U

    n = params.n_tau
    dt = beta / n
    limit = math.exp(2.0 * beta * op_norm(h.op) + 1.0)
    U = np.eye(dim, dtype=h_tilde.dtype)
    for step in range(n):
        tau = step * dt
        if params.order == "rk4":
            k1 = rhs(tau, U)
            k2 = rhs(tau + 0.5 * dt, U + 0.5 * dt * k1)
            k3 = rhs(tau + 0.5 * dt, U + 0.5 * dt * k2)
            k4 = rhs(tau + dt, U + dt * k3)
            U = U + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            k1 = rhs(tau, U)
            U = U + dt * rhs(tau + 0.5 * dt, U + 0.5 * dt * k1)
        if not np.all(np.isfinite(U)) or op_norm(U) > limit:
            raise StabilityError(f"ODE solution blew up at step {step}; use more than {n} steps")
    return SupportedOperator(v @ U @ v.conj().T, h.window, h.d)


def build_A(
    H_win: SupportedOperator,
    h: SupportedOperator,
    beta: float,
    method: str = "exact",
    qbp_params: QbpParams = QbpParams(),
    dyson_params: DysonParams = DysonParams(),
) -> SupportedOperator:
    if method == "exact":
        return exact_A(H_win, h, beta)
    if method == "qbp":
        return qbp_A(H_win, h, beta, qbp_params)
    if method == "dyson":
        return dyson_A(H_win, h, beta, dyson_params)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def window_operators(spec: ChainSpec, i: int, radius: int) -> tuple[SupportedOperator, SupportedOperator]:
    """``H_i`` restricted to terms inside ``L_radius`` and ``h_i``, both on that window."""
    W = window_around(spec, i, radius)
    inside = split(partial_hamiltonian(spec, i), W).inside
    return assemble(inside, W, spec.d), embed(spec.term(i).supported, W)


def shape_reference(beta: float, l: int, k: int) -> float:
    """``exp(beta - pi l / (2 e k^3 beta))``; the prefactor is not known."""
    if beta == 0:
        return 0.0
    return math.exp(beta - math.pi * l / (2.0 * math.e * k**3 * beta))


def a_truncation_error(
    spec: ChainSpec,
    term_index: int,
    beta: float,
    l1: int,
    method: str = "exact",
    pad: int = 4,
    ref_radius: int | None = None,
    qbp_params: QbpParams = QbpParams(),
    dyson_params: DysonParams = DysonParams(),
) -> tuple[float, float]:
    """``||A_W - A_W^(L_l1)||`` with ``A_W`` built on ``W = L_(l1 + pad)``.

    Pass ``ref_radius`` to pin ``W`` when sweeping ``l1``. Returns
    ``(measured, shape_ref)``.
    """
    radius = l1 + pad if ref_radius is None else ref_radius
    if radius < l1:
        raise ValueError("reference window must contain the truncation window")
    H_win, h = window_operators(spec, term_index, radius)
    A = build_A(H_win, h, beta, method, qbp_params, dyson_params)
    keep = window_around(spec, term_index, l1)
    measured = op_norm(A.op - truncate(A, keep).op)
    return measured, shape_reference(beta, l1, spec.k)


def truncation_sweep(
    spec: ChainSpec,
    term_index: int,
    beta: float,
    l1_values,
    method: str = "exact",
    pad: int = 4,
    **kwargs,
) -> list[dict]:
    """``a_truncation_error`` over ``l1_values`` against one shared reference window."""
    ref = max(l1_values) + pad
    rows = []
    for l1 in l1_values:
        measured, shape = a_truncation_error(
            spec, term_index, beta, l1, method, pad, ref_radius=ref, **kwargs
        )
        rows.append({"l1": l1, "measured": measured, "shape_ref": shape, "method": method, "beta": beta})
    return rows


def write_truncation_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l1", "measured", "shape_ref", "method", "beta"])
        for r in rows:
            w.writerow(
                [r["l1"], f"{r['measured']:.17g}", f"{r['shape_ref']:.17g}", r["method"], f"{r['beta']:.17g}"]
            )
