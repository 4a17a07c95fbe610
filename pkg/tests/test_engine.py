"""Product numerical range, benchmarks, and covariant machinery."""

from __future__ import annotations

import numpy as np
import pytest

from qbench.engine import (
    BenchmarkReport,
    GroupRep,
    PnrConfig,
    check_covariance,
    check_ppt,
    covariant_benchmark,
    det_benchmark,
    optimal_mp_channel,
    pnr_grid_oracle,
    ppt_offset,
    prob_benchmark,
    product_numerical_range,
    twirl_channel,
)
from qbench.errors import ContractError, DimensionError, SupportError
from qbench.linalg import Operator
from qbench.model import (
    DetTest,
    ProbTest,
    jamiolkowski,
    performance_operator,
    score_det_direct,
    score_det_jam,
    score_prob,
)
from qbench.presets import (
    chsh_test,
    equator_test,
    heisenberg_weyl_rep,
    pauli_rep,
    teleport_test,
    tilde_pauli_rep,
)

from util import rand_channel, rand_density, rand_hermitian

RNG = np.random.default_rng(424242)
FAST = PnrConfig(restarts=16)


def rand_bipartite_hermitian(d1: int, d2: int, rng) -> Operator:
    return Operator(rand_hermitian(d1 * d2, rng), (d1, d2))


class TestProductNumericalRange:
    def test_product_operator_factorizes(self):
        # pnr(A ⊗ B) = lam_max(A) * lam_max(B) for PSD factors
        for _ in range(5):
            a = rand_density(2, RNG).matrix * 2.0
            b = rand_density(3, RNG).matrix * 1.5
            m = Operator(np.kron(a, b), (2, 3))
            res = product_numerical_range(m, FAST)
            expect = np.linalg.eigvalsh(a)[-1] * np.linalg.eigvalsh(b)[-1]
            assert abs(res.value - expect) < 1e-10

    def test_teleport_values(self):
        # normalised symmetric projector: best product overlap 2/(d(d+1))
        for d in (2, 3):
            res = product_numerical_range(teleport_test(d).omega, FAST)
            assert abs(res.value - 2.0 / (d * (d + 1))) < 1e-9

    def test_chsh_value(self):
        res = product_numerical_range(chsh_test().omega, FAST)
        assert abs(res.value - 1.0 / np.sqrt(2.0)) < 1e-9

    def test_equator_value(self):
        res = product_numerical_range(equator_test(3).omega, FAST)
        assert abs(res.value - 0.375) < 1e-9

    def test_bracket_and_maximizers(self):
        for _ in range(10):
            m = rand_bipartite_hermitian(2, 2, RNG)
            res = product_numerical_range(m, FAST)
            assert res.lower <= res.value <= res.upper + 1e-12
            m4 = m.matrix.reshape(2, 2, 2, 2)
            at = np.einsum(
                "xrys,x,r,y,s->",
                m4,
                res.maximizer_a.conj(),
                res.maximizer_b.conj(),
                res.maximizer_a,
                res.maximizer_b,
            )
            assert abs(at.real - res.value) < 1e-9
            assert abs(np.linalg.norm(res.maximizer_a) - 1.0) < 1e-12
            assert abs(np.linalg.norm(res.maximizer_b) - 1.0) < 1e-12

    def test_deterministic_for_fixed_seed(self):
        m = rand_bipartite_hermitian(2, 3, RNG)
        r1 = product_numerical_range(m, PnrConfig(restarts=8, seed=5))
        r2 = product_numerical_range(m, PnrConfig(restarts=8, seed=5))
        assert r1.value == r2.value
        assert np.array_equal(r1.maximizer_a, r2.maximizer_a)

    def test_non_hermitian_rejected(self):
        g = RNG.normal(size=(4, 4)) + 1j * RNG.normal(size=(4, 4))
        with pytest.raises(ContractError):
            product_numerical_range(Operator(g + 2j * np.eye(4), (2, 2)))


class TestGridOracle:
    def test_teleport_bracket_contains_closed_form(self):
        br = pnr_grid_oracle(teleport_test(2).omega, mesh=0.05)
        assert br.lower - 1e-9 <= 1.0 / 3.0 <= br.upper
        assert br.upper - br.lower < 0.05

    def test_seesaw_inside_bracket_random(self):
        for _ in range(10):
            m = rand_bipartite_hermitian(2, 2, RNG)
            res = product_numerical_range(m, FAST)
            br = pnr_grid_oracle(m, mesh=0.1)
            assert br.lower - 1e-9 <= res.value <= br.upper + 1e-9

    def test_dimension_guard(self):
        m = Operator(np.eye(18), (3, 6))
        with pytest.raises(DimensionError):
            pnr_grid_oracle(m)

    def test_mesh_guard(self):
        with pytest.raises(ContractError):
            pnr_grid_oracle(teleport_test(2).omega, mesh=0.0)


class TestDetBenchmark:
    def test_teleport_generic_path(self):
        report = det_benchmark(teleport_test(2).omega, FAST)
        assert abs(report.value - 2.0 / 3.0) < 1e-6
        assert report.converged
        # the minimiser is the maximally mixed state
        assert np.allclose(report.tau_min.matrix, np.eye(2) / 2, atol=1e-3)

    def test_teleport_closed_form_matches_generic(self):
        generic = det_benchmark(teleport_test(2).omega, FAST)
        closed = det_benchmark(
            teleport_test(2).omega, FAST, rep=heisenberg_weyl_rep(2)
        )
        assert closed.method == "closed_form"
        assert abs(closed.value - 2.0 / 3.0) < 1e-9
        assert abs(generic.value - closed.value) < 1e-6

    def test_equator_generic_path(self):
        report = det_benchmark(equator_test(3).omega, FAST)
        assert abs(report.value - 0.75) < 1e-6

    def test_non_ppt_rejected(self):
        with pytest.raises(ContractError):
            det_benchmark(chsh_test().omega, FAST)

    def test_report_json_fields(self):
        report = det_benchmark(teleport_test(2).omega, FAST, rep=heisenberg_weyl_rep(2))
        payload = report.to_json()
        for key in ("value", "lower", "upper", "tau_min", "method", "restarts"):
            assert key in payload


class TestProbBenchmark:
    def test_equator_threshold(self):
        assert abs(prob_benchmark(equator_test(3), FAST) - 0.75) < 1e-9

    def test_chsh_threshold_without_ppt(self):
        # the ratio form stays exact for non-PPT operators
        assert abs(prob_benchmark(chsh_test(), FAST) - np.sqrt(2.0)) < 1e-9

    def test_teleport_threshold(self):
        assert abs(prob_benchmark(teleport_test(2), FAST) - 2.0 / 3.0) < 1e-9

    def test_support_leak_raises(self):
        t = teleport_test(2)
        bad = ProbTest(t.omega, Operator(np.diag([1.0, 0.0]).astype(complex), (2,)))
        with pytest.raises(SupportError):
            prob_benchmark(bad, FAST)


class TestCovariance:
    def test_builtin_reps_are_covariant(self):
        assert check_covariance(teleport_test(2).omega, heisenberg_weyl_rep(2))
        assert check_covariance(teleport_test(3).omega, heisenberg_weyl_rep(3))
        assert check_covariance(equator_test(3).omega, pauli_rep())
        assert check_covariance(chsh_test().omega, tilde_pauli_rep())

    def test_generic_operator_is_not(self):
        m = Operator(
            np.kron(rand_hermitian(2, RNG), rand_hermitian(2, RNG)), (2, 2)
        )
        assert not check_covariance(m, pauli_rep())

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            check_covariance(teleport_test(3).omega, pauli_rep())

    def test_covariant_benchmarks(self):
        assert abs(
            covariant_benchmark(teleport_test(2).omega, heisenberg_weyl_rep(2), FAST)
            - 2.0 / 3.0
        ) < 1e-9
        assert abs(
            covariant_benchmark(teleport_test(3).omega, heisenberg_weyl_rep(3), FAST)
            - 0.5
        ) < 1e-9
        assert abs(
            covariant_benchmark(chsh_test().omega, tilde_pauli_rep(), FAST)
            - np.sqrt(2.0)
        ) < 1e-9
        assert abs(
            covariant_benchmark(equator_test(3).omega, pauli_rep(), FAST) - 0.75
        ) < 1e-9

    def test_reducible_rep_rejected(self):
        z = np.diag([1.0, -1.0]).astype(complex)
        rep = GroupRep([(np.eye(2), np.eye(2)), (z, z)])
        with pytest.raises(ContractError):
            covariant_benchmark(equator_test(3).omega, rep, FAST)

    def test_twirl_leaves_covariant_score_fixed(self):
        t = teleport_test(2)
        rep = heisenberg_weyl_rep(2)
        for _ in range(5):
            c = rand_channel(2, 2, 2, RNG)
            s0, _ = score_prob(t, c)
            s1, _ = score_prob(t, twirl_channel(c, rep))
            assert abs(s0 - s1) < 1e-10


class TestPptOffset:
    def test_shift_makes_psd(self):
        shifted, offset = ppt_offset(chsh_test().omega)
        assert offset == pytest.approx(np.sqrt(2.0), abs=1e-12)
        assert np.linalg.eigvalsh(shifted.matrix).min() > -1e-12

    def test_observable_shift_cancels_for_tp_devices(self):
        # scoring against O + cI then subtracting c is exact
        for _ in range(10):
            sigma = rand_density(4, RNG)
            obs = Operator(rand_hermitian(4, RNG), (2, 2))
            shifted, c0 = ppt_offset(obs)
            t_raw = DetTest(Operator(sigma.matrix, (2, 2)), obs)
            t_shift = DetTest(Operator(sigma.matrix, (2, 2)), shifted)
            dev = rand_channel(2, 2, 3, RNG)
            raw = score_det_direct(t_raw, dev)
            undone = score_det_direct(t_shift, dev) - c0
            assert abs(raw - undone) < 1e-10

    def test_benchmark_shift_scales_with_input_dim(self):
        # benchmark(omega + cI) = benchmark(omega) + c * d_in on covariant tests
        omega = chsh_test().omega
        shifted, c0 = ppt_offset(omega)
        rep = tilde_pauli_rep()
        v_shift = covariant_benchmark(shifted, rep, FAST)
        assert abs((v_shift - c0 * 2) - np.sqrt(2.0)) < 1e-9


class TestOptimalMpChannel:
    def test_achieves_teleport_benchmark(self):
        t = teleport_test(2)
        c = optimal_mp_channel(t.omega, heisenberg_weyl_rep(2), FAST)
        s, p = score_prob(t, c)
        assert abs(s - 2.0 / 3.0) < 1e-6
        assert abs(p - 1.0) < 1e-9

    def test_achieves_chsh_benchmark(self):
        t = chsh_test()
        c = optimal_mp_channel(t.omega, tilde_pauli_rep(), FAST)
        s, _ = score_prob(t, c)
        assert abs(s - np.sqrt(2.0)) < 1e-6

    def test_achieves_equator_benchmark(self):
        t = equator_test(3)
        c = optimal_mp_channel(t.omega, pauli_rep(), FAST)
        s, _ = score_prob(t, c)
        assert abs(s - 0.75) < 1e-6

    def test_resulting_channel_is_mp(self):
        c = optimal_mp_channel(teleport_test(2).omega, heisenberg_weyl_rep(2), FAST)
        assert c.trace_preserving
        from qbench.linalg import partial_transpose

        pt = partial_transpose(jamiolkowski(c), 1)
        assert np.linalg.eigvalsh(pt.matrix).min() > -1e-9


class TestGroupRep:
    def test_non_unitary_rejected(self):
        with pytest.raises(ContractError):
            GroupRep([(np.eye(2) * 2.0, np.eye(2))])

    def test_bad_weights_rejected(self):
        with pytest.raises(ContractError):
            GroupRep([(np.eye(2), np.eye(2))], weights=[0.5])

    def test_ppt_check_reports_eigenvalue(self):
        low = check_ppt(teleport_test(2).omega)
        assert low > -1e-12
        with pytest.raises(ContractError):
            check_ppt(chsh_test().omega)
