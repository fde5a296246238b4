from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbs1d.errors import (
    DimensionCapError,
    ExponentOverflowError,
    NumericError,
    ShapeError,
    SupportError,
)
from gibbs1d.operators import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    SupportedOperator,
    Window,
    adjoint_power,
    check_dim,
    commutator,
    conjugate,
    embed,
    expm_scaled,
    expm_taylor,
    herm_eig,
    kron,
    log_trace_exp,
    op_norm,
    partial_trace,
    truncate,
)


def random_op(rng, dim, hermitian=False):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    if hermitian:
        a = 0.5 * (a + a.conj().T)
    return a


class TestWindow:
    def test_extend_clips(self):
        assert Window(2, 3).extend(5, 6) == Window(1, 6)
        assert Window(3, 4).extend(1, 10) == Window(2, 5)

    def test_invalid(self):
        with pytest.raises(SupportError):
            Window(0, 2)
        with pytest.raises(SupportError):
            Window(3, 2)

    def test_relations(self):
        a, b = Window(1, 3), Window(3, 5)
        assert a.overlaps(b) and not a.contains(b)
        assert a.hull(b) == Window(1, 5)
        assert not Window(1, 2).overlaps(Window(3, 4))
        assert str(a) == "[1,3]"


def test_supported_operator_shape_check():
    with pytest.raises(ShapeError):
        SupportedOperator(np.eye(3), Window(1, 1))
    op = SupportedOperator(np.eye(4), Window(2, 3))
    assert op.dim == 4


def test_embed_places_lower_site_first():
    op = SupportedOperator(PAULI_Z, Window(1, 1))
    wide = embed(op, Window(1, 2))
    np.testing.assert_allclose(wide.op, np.kron(PAULI_Z, np.eye(2)))
    wide = embed(SupportedOperator(PAULI_Z, Window(2, 2)), Window(1, 3))
    np.testing.assert_allclose(wide.op, np.kron(np.eye(2), np.kron(PAULI_Z, np.eye(2))))


def test_embed_outside_raises():
    with pytest.raises(SupportError):
        embed(SupportedOperator(PAULI_Z, Window(4, 4)), Window(1, 3))


def test_add_uses_hull():
    a = SupportedOperator(PAULI_X, Window(1, 1))
    b = SupportedOperator(PAULI_Z, Window(3, 3))
    s = a + b
    assert s.window == Window(1, 3)
    expected = np.kron(PAULI_X, np.eye(4)) + np.kron(np.eye(4), PAULI_Z)
    np.testing.assert_allclose(s.op, expected)
    np.testing.assert_allclose((a - a).op, 0)


def test_cap(monkeypatch):
    with pytest.raises(DimensionCapError):
        check_dim(2**17)
    monkeypatch.setenv("GIBBS1D_CAP", "8")
    with pytest.raises(DimensionCapError):
        kron(np.eye(4), np.eye(4))
    check_dim(8)


class TestTruncate:
    def test_product_operator(self):
        # tr_2(X (x) Z)/2 = 0 and tr_2(X (x) 1)/2 = X
        op = SupportedOperator(np.kron(PAULI_X, np.eye(2)) + np.kron(PAULI_X, PAULI_Z), Window(1, 2))
        out = truncate(op, Window(1, 1))
        np.testing.assert_allclose(out.op, np.kron(PAULI_X, np.eye(2)), atol=1e-15)

    def test_identity_fixed(self):
        op = SupportedOperator(np.eye(8), Window(1, 3))
        np.testing.assert_allclose(truncate(op, [2]).op, np.eye(8))

    def test_full_keep_is_noop(self):
        rng = np.random.default_rng(0)
        op = SupportedOperator(random_op(rng, 8), Window(2, 4))
        assert truncate(op, Window(2, 4)) is op

    def test_noncontiguous_keep(self):
        a, b, c = PAULI_X, PAULI_Y, PAULI_Z
        op = SupportedOperator(np.kron(a, np.kron(b, c)), Window(1, 3))
        out = truncate(op, [1, 3])
        # middle factor traces to tr(Y)/2 = 0
        np.testing.assert_allclose(out.op, 0, atol=1e-15)
        op = SupportedOperator(np.kron(a, np.kron(np.eye(2), c)), Window(1, 3))
        np.testing.assert_allclose(truncate(op, [1, 3]).op, op.op, atol=1e-15)

    def test_keep_outside(self):
        op = SupportedOperator(np.eye(4), Window(1, 2))
        with pytest.raises(SupportError):
            truncate(op, Window(2, 3))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), keep=st.sets(st.integers(1, 3), min_size=1, max_size=3))
    def test_idempotent_and_contractive(self, seed, keep):
        rng = np.random.default_rng(seed)
        op = SupportedOperator(random_op(rng, 8), Window(1, 3))
        once = truncate(op, keep)
        twice = truncate(once, keep)
        np.testing.assert_allclose(once.op, twice.op, atol=1e-12)
        assert op_norm(once) <= op_norm(op) * (1 + 1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_explicit_partial_trace(self, seed):
        rng = np.random.default_rng(seed)
        mat = random_op(rng, 8)
        t = mat.reshape(2, 2, 2, 2, 2, 2)
        reduced = np.einsum("aibcid->abcd", t).reshape(4, 4) / 2
        np.testing.assert_allclose(partial_trace(mat, 2, 3, [0, 2]) / 2, reduced, atol=1e-12)


def test_op_norm():
    assert op_norm(PAULI_X) == pytest.approx(1.0)
    assert op_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0)
    with pytest.raises(NumericError):
        op_norm(np.array([[np.nan]]))


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(ShapeError):
        herm_eig(np.array([[0, 1], [0, 0]], dtype=float))
    with pytest.raises(NumericError):
        herm_eig(np.array([[np.inf, 0], [0, 1]]))


@pytest.mark.parametrize("scale", [0.0, 0.3, -1.7, 2.5j])
def test_expm_scaled_matches_scipy(scale):
    rng = np.random.default_rng(1)
    H = random_op(rng, 8, hermitian=True)
    spec = herm_eig(H)
    np.testing.assert_allclose(expm_scaled(spec, scale), scipy.linalg.expm(scale * H), atol=1e-10)


def test_expm_overflow():
    spec = herm_eig(np.diag([0.0, 1.0]))
    with pytest.raises(ExponentOverflowError):
        expm_scaled(spec, 800.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("norm", [1e-3, 0.4, 3.0, 40.0])
def test_expm_taylor_matches_scipy(seed, norm):
    rng = np.random.default_rng(seed)
    a = random_op(rng, 6)
    a *= norm / np.linalg.norm(a, 1)
    ref = scipy.linalg.expm(a)
    np.testing.assert_allclose(expm_taylor(a), ref, rtol=1e-11, atol=1e-12 * np.abs(ref).max())


def test_conjugate_matches_direct_product():
    rng = np.random.default_rng(2)
    H = random_op(rng, 8, hermitian=True)
    O = random_op(rng, 8)
    spec = herm_eig(H)
    for s in (0.4, 1j * 0.7):
        direct = scipy.linalg.expm(s * H) @ O @ scipy.linalg.expm(-s * H)
        np.testing.assert_allclose(conjugate(O, spec, s), direct, atol=1e-10)
    with pytest.raises(ShapeError):
        conjugate(np.eye(4), spec, 1.0)


def test_conjugate_bch_series():
    # exp(sH) O exp(-sH) = sum_m s^m/m! ad_H^m(O)
    rng = np.random.default_rng(3)
    H = 0.3 * random_op(rng, 4, hermitian=True)
    O = random_op(rng, 4)
    s = 0.5
    series = np.zeros_like(O)
    term = O.copy()
    fact = 1.0
    for m in range(30):
        series += s**m / fact * term
        term = commutator(H, term)
        fact *= m + 1
    np.testing.assert_allclose(conjugate(O, herm_eig(H), s), series, atol=1e-12)


def test_log_trace_exp_overflow_safe():
    eig = np.array([-2000.0, -1999.0])
    expected = 2000.0 + np.log(1 + np.exp(-1.0))
    assert log_trace_exp(eig, -1.0) == pytest.approx(expected, rel=1e-15)
    assert log_trace_exp(np.zeros(8), 3.0) == pytest.approx(np.log(8))


class TestAdjointPower:
    def test_zero_power(self):
        O = SupportedOperator(PAULI_Z, Window(2, 2))
        assert adjoint_power([], O, 0) is O

    def test_matches_dense(self):
        rng = np.random.default_rng(4)
        terms = [SupportedOperator(random_op(rng, 4, True), Window(j, j + 1)) for j in range(1, 5)]
        full = Window(1, 5)
        H = sum(embed(t, full).op for t in terms)
        O = SupportedOperator(random_op(rng, 2), Window(3, 3))
        dense = embed(O, full).op
        for m in range(1, 4):
            dense = commutator(H, dense)
            got = adjoint_power(terms, O, m)
            np.testing.assert_allclose(embed(got, full).op, dense, atol=1e-10)
            # support grows by at most k - 1 = 1 site per side
            assert got.window.size <= 1 + 2 * m

    def test_self_commutator(self):
        xx = np.kron(PAULI_X, PAULI_X)
        O = SupportedOperator(xx, Window(1, 2))
        out = adjoint_power([SupportedOperator(xx, Window(1, 2))], O, 1)
        assert op_norm(out) == 0.0

    def test_power_limit(self):
        with pytest.raises(ValueError):
            adjoint_power([], SupportedOperator(PAULI_Z, Window(1, 1)), 13)
