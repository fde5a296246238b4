from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from gibbs1d.chain import ChainSpec, build_preset
from gibbs1d.engine import (
    ERROR_FLOOR,
    ErrorBudget,
    error_budget,
    estimate_free_energy,
    restrict,
    step_ratio,
    step_ratio_explicit,
    suggest_window,
    sweep_window,
    write_budget_csv,
    write_steps_csv,
    write_sweep_csv,
)
from gibbs1d.errors import GeometryError
from gibbs1d.operators import SupportedOperator, Window
from gibbs1d.oracles import exact_log_partition, transfer_matrix_log_partition
from gibbs1d.qbp import QbpParams


def prefix_log_z(spec, count, beta):
    sub = ChainSpec(spec.n, spec.d, spec.k, spec.terms[:count])
    return exact_log_partition(sub, beta)


@pytest.fixture(scope="module")
def tfim8():
    return build_preset("tfim", 8)


class TestStepRatio:
    def test_first_term(self, tfim8):
        h = tfim8.term(1).op
        expected = math.log(np.trace(np.diag(np.exp(-np.linalg.eigvalsh(h))))) - 2 * math.log(2)
        for l in (0, 2, 5):
            assert step_ratio(tfim8, 1, l, 1.0).log_ratio == pytest.approx(expected, abs=1e-13)

    @pytest.mark.parametrize("i", [2, 4, 8])
    def test_spanning_window_is_exact(self, tfim8, i):
        est = step_ratio(tfim8, i, 8, 1.0)
        expected = prefix_log_z(tfim8, i, 1.0) - prefix_log_z(tfim8, i - 1, 1.0)
        assert est.log_ratio == pytest.approx(expected, abs=1e-10)
        assert est.clipped

    def test_beta_zero(self, tfim8):
        assert step_ratio(tfim8, 4, 2, 0.0).log_ratio == 0.0

    @pytest.mark.parametrize("name", ["tfim", "xxz", "random_klocal"])
    def test_sanity_bound(self, name):
        spec = build_preset(name, 7, k=2, seed=2)
        beta = 1.5
        for i in range(1, spec.num_terms + 1):
            est = step_ratio(spec, i, 2, beta)
            assert math.isfinite(est.log_ratio)
            assert abs(est.log_ratio) <= beta * (1 + 1e-12) + math.log(2) * est.window.size

    def test_window_metadata(self, tfim8):
        est = step_ratio(tfim8, 4, 1, 1.0)
        assert est.window == Window(3, 6)
        assert not est.clipped and est.method == "window_ratio"


def test_restrict(tfim8):
    op = SupportedOperator(np.eye(8), Window(2, 4))
    out = restrict(op, Window(3, 3))
    np.testing.assert_allclose(out.op, np.eye(2))
    with pytest.raises(GeometryError):
        restrict(op, Window(1, 2))


class TestExplicit:
    def test_commuting_matches(self):
        spec = build_preset("classical_ising", 8, params={"hz": 0.4})
        for l1 in (0, 1, 2):
            a = step_ratio_explicit(spec, 4, 3, l1, 1.0, "explicit_dyson")
            b = step_ratio(spec, 4, 3, 1.0)
            assert a.log_ratio == pytest.approx(b.log_ratio, abs=1e-9)

    def test_beta_zero(self, tfim8):
        assert step_ratio_explicit(tfim8, 4, 3, 1, 0.0, "explicit_qbp").log_ratio == pytest.approx(0.0, abs=1e-15)

    def test_dyson_converges_in_l1(self, tfim8):
        ref = step_ratio(tfim8, 4, 6, 1.0).log_ratio
        errs = [abs(step_ratio_explicit(tfim8, 4, 6, l1, 1.0, "explicit_dyson").log_ratio - ref) for l1 in (1, 2, 4)]
        assert errs[-1] < 1e-2
        assert errs[0] > errs[1] > errs[2]

    def test_geometry(self, tfim8):
        with pytest.raises(GeometryError):
            step_ratio_explicit(tfim8, 4, 1, 2, 1.0)

    @pytest.mark.parametrize(
        "name,seed",
        [("tfim", 0), ("xxz", 0), ("random_klocal", 1), ("random_klocal", 2)],
    )
    def test_qbp_error_halves(self, name, seed):
        # with pad 0 and l1 = l, only the Trotter error of the QBP product remains
        spec = build_preset(name, 7, k=2, seed=seed)
        ref = step_ratio(spec, 4, 1, 1.0).log_ratio
        errs = [
            abs(step_ratio_explicit(spec, 4, 1, 1, 1.0, "explicit_qbp", QbpParams(m_trotter=m), pad=0).log_ratio - ref)
            for m in (16, 32, 64)
        ]
        for a, b in zip(errs, errs[1:]):
            assert 0.4 <= b / a <= 0.6


class TestEstimate:
    @pytest.mark.parametrize("name", ["tfim", "xxz", "three_site_footnote"])
    def test_beta_zero(self, name):
        spec = build_preset(name, 6)
        rep = estimate_free_energy(spec, 0.0, 2)
        assert rep.free_energy_density == math.log(2)

    def test_classical_ising(self):
        spec = build_preset("classical_ising", 12)
        rep = estimate_free_energy(spec, 1.0, 4)
        tm = transfer_matrix_log_partition(spec, 1.0) / 12
        assert rep.free_energy_density == pytest.approx(tm, abs=1e-10)

    def test_tfim_l8(self):
        spec = build_preset("tfim", 10)
        rep = estimate_free_energy(spec, 1.0, 8)
        assert rep.abs_error < 1e-6
        assert rep.exact_reference == pytest.approx(exact_log_partition(spec, 1.0) / 10)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_telescoping(self, tfim8, beta):
        rep = estimate_free_energy(tfim8, beta, 8)
        total = 8 * math.log(2) + sum(s.log_ratio for s in rep.steps)
        assert total == pytest.approx(exact_log_partition(tfim8, beta), abs=1e-9)

    def test_recompute_is_exact(self, tfim8):
        rep = estimate_free_energy(tfim8, 1.0, 2)
        assert rep.recompute_density() == rep.free_energy_density

    def test_threads_deterministic(self, tfim8):
        a = estimate_free_energy(tfim8, 1.0, 3)
        b = estimate_free_energy(tfim8, 1.0, 3, threads=3)
        assert a.free_energy_density == b.free_energy_density
        assert [s.log_ratio for s in a.steps] == [s.log_ratio for s in b.steps]

    def test_unknown_method(self, tfim8):
        with pytest.raises(ValueError):
            estimate_free_energy(tfim8, 1.0, 2, method="magic")

    def test_monotone_convergence(self):
        spec = build_preset("tfim", 10)
        for beta in (0.5, 1.0):
            l_max = 8
            for i in (3, 5, 7, 10):
                final = step_ratio(spec, i, l_max, beta).log_ratio
                for l in range(0, l_max - 2):
                    far = abs(step_ratio(spec, i, l, beta).log_ratio - final)
                    near = abs(step_ratio(spec, i, l + 2, beta).log_ratio - final)
                    assert near <= far + 1e-12


class TestSweep:
    def test_commuting_flag(self):
        spec = build_preset("classical_ising", 8)
        res = sweep_window(spec, 1.0, [1, 2, 3, 4])
        assert res.note == "exact at finite l"
        assert all(r["abs_error"] <= ERROR_FLOOR for r in res.records)
        assert math.isnan(res.decay_rate)

    def test_beta_zero(self, tfim8):
        res = sweep_window(tfim8, 0.0, [1, 2, 3])
        assert all(r["abs_error"] < 1e-13 for r in res.records)

    def test_tfim_decay(self):
        spec = build_preset("tfim", 10)
        res = sweep_window(spec, 1.0, range(1, 9))
        assert res.decay_rate < 0 and res.r2 >= 0.9
        l = suggest_window(res, 1e-9)
        assert l is not None and 3 <= l <= 8

    def test_suggest_without_fit(self):
        spec = build_preset("classical_ising", 6)
        assert suggest_window(sweep_window(spec, 1.0, [1, 2]), 1e-6) is None


class TestBudget:
    def test_commuting(self):
        spec = build_preset("classical_ising", 8, params={"hz": 0.3})
        b = error_budget(spec, 5, 3, 1, 1, 0.7, grid=4)
        assert b.t1 < 1e-12 and b.t2 < 1e-12

    def test_beta_zero(self, tfim8):
        b = error_budget(tfim8, 5, 3, 1, 1, 0.0)
        assert b.t1 == b.t2 == b.t3 == b.lhs == 0.0

    @pytest.mark.parametrize("i", [6, 7, 8])
    def test_inequality(self, tfim8, i):
        b = error_budget(tfim8, i, 3, 1, 1, 0.5, grid=8)
        assert b.t2 > 0
        assert b.lhs <= b.bound * 1.05
        assert b.refinement_delta < 1e-6 * max(1.0, b.t2 + b.t3)

    def test_geometry(self, tfim8):
        with pytest.raises(GeometryError):
            error_budget(tfim8, 4, 2, 2, 1, 0.5)


class TestCsv:
    def test_steps(self, tmp_path, tfim8):
        rep = estimate_free_energy(tfim8, 1.0, 2)
        path = tmp_path / "steps.csv"
        write_steps_csv(rep, path)
        rows = list(csv.DictReader(path.open()))
        assert list(rows[0]) == ["i", "lo", "hi", "log_ratio", "clipped"]
        total = 0.0
        for r in rows:
            total += float(r["log_ratio"])
        assert math.log(2) + total / 8 == rep.free_energy_density
        write_steps_csv(rep, path, timings=True)
        assert path.read_text().splitlines()[0].endswith(",time_ms")

    def test_sweep_and_budget(self, tmp_path, tfim8):
        res = sweep_window(tfim8, 1.0, [1, 2, 3, 4])
        write_sweep_csv(res, tmp_path / "sweep.csv")
        assert (tmp_path / "sweep.csv").read_text().startswith("l,density,abs_error\n1,")
        write_budget_csv([ErrorBudget(1, 3, 1, 1, 0.1, 0.2, 0.3, 0.05, 0.5)], tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines == ["i,l,l1,l2,T1,T2,T3,lhs", "1,3,1,1,0.10000000000000001,0.20000000000000001,0.29999999999999999,0.050000000000000003"]
