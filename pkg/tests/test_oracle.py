import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from acvar.errors import (
    InvalidParameterError,
    NoAcceptanceError,
    TiltOverflowError,
    UnattainableThresholdError,
)
from acvar.markov import MarkovChain, max_cycle_mean, stationary_distribution, total_variation
from acvar.oracle import (
    OracleSolution,
    acvar_oracle,
    conditioned_expectation,
    lambda_prime,
    log_mgf,
    mc_conditioning_oracle,
    perron_pair,
    solve_zeta_star,
    tilted_kernel,
    tilted_matrix,
)

from conftest import small_chains

E = math.e


def interior_alpha(chain, frac):
    """A threshold a fraction ``frac`` of the way from the mean to the attainable max."""
    mean = stationary_distribution(chain.P) @ chain.g
    return mean + frac * (max_cycle_mean(chain.P, chain.g) - mean)


class TestTiltedMatrix:
    def test_zero_tilt_is_identity(self, chain40):
        assert np.array_equal(tilted_matrix(chain40, 0.0), chain40.P)

    def test_two_state_rows(self, iid2):
        assert np.allclose(tilted_matrix(iid2, 1.0), [[0.5, 0.5], [0.5 * E, 0.5 * E]], rtol=1e-15)

    def test_constant_reward_scales_whole_matrix(self, chain40):
        chain = chain40.with_rewards(np.full(40, 0.7))
        assert np.allclose(tilted_matrix(chain, 2.0), math.exp(1.4) * chain40.P, rtol=1e-14)

    def test_overflow(self, iid2):
        with pytest.raises(TiltOverflowError, match="rescale"):
            tilted_matrix(iid2, 1000.0)


class TestPerronPair:
    def test_stochastic_matrix(self, chain40):
        pair = perron_pair(chain40.P)
        assert pair.rho == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(pair.V, 1.0, atol=1e-10)

    def test_iid_closed_form(self):
        pair = perron_pair(np.array([[0.5, 0.5], [0.5 * E, 0.5 * E]]))
        assert pair.rho == pytest.approx((1 + E) / 2, abs=1e-12)
        assert np.allclose(pair.V, [1.0, E], rtol=1e-12)

    def test_sticky_chain_characteristic_root(self):
        M = np.array([[0.9, 0.1], [0.1 * E, 0.9 * E]])
        b, c = 0.9 * (1 + E), 0.8 * E
        root = (b + math.sqrt(b * b - 4 * c)) / 2
        assert perron_pair(M).rho == pytest.approx(root, rel=1e-12)
        assert root == pytest.approx(2.4638, abs=1e-4)

    def test_reference_component(self, chain40):
        pair = perron_pair(tilted_matrix(chain40, 1.0), i0=7)
        assert pair.V[7] == 1.0 and pair.i0 == 7

    @given(small_chains(positive=False), st.floats(-3, 3), st.data())
    def test_eigen_residual(self, chain, zeta, data):
        i0 = data.draw(st.integers(0, chain.s - 1))
        M = tilted_matrix(chain, zeta)
        pair = perron_pair(M, i0)
        assert np.all(pair.V > 0) and pair.V[i0] == 1.0
        assert np.max(np.abs(M @ pair.V - pair.rho * pair.V)) / pair.rho <= 1e-9 * max(1.0, pair.V.max())


class TestLogMgf:
    def test_zero(self, chain40):
        assert log_mgf(chain40, 0.0) == pytest.approx(0.0, abs=1e-14)

    def test_constant_reward(self, chain40):
        chain = chain40.with_rewards(np.full(40, -1.3))
        assert log_mgf(chain, 2.0) == pytest.approx(-2.6, abs=1e-12)

    def test_iid(self, iid2):
        assert log_mgf(iid2, 1.0) == pytest.approx(math.log((1 + E) / 2), abs=1e-12)
        assert log_mgf(iid2, 1.0) == pytest.approx(0.62011, abs=1e-5)

    def test_frozen_reference_value(self, chain40):
        # from a dense eigen-decomposition of the tilted matrix
        assert log_mgf(chain40, 1.0) == pytest.approx(1.8683329398495017, abs=1e-10)

    def test_large_tilt_stays_finite(self, chain40):
        # exp(230 * 3) is within a factor e^20 of overflow; the shifted evaluation is not
        value = log_mgf(chain40, 230.0)
        assert math.isfinite(value) and 3.0 * 230 - 10 < value < 3.0 * 230


class TestLambdaPrime:
    def test_zero_is_stationary_mean(self, chain40):
        mean = stationary_distribution(chain40.P) @ chain40.g
        assert lambda_prime(chain40, 0.0) == pytest.approx(mean, abs=1e-12)

    @pytest.mark.parametrize("zeta", [-2.0, 0.0, 0.5, math.log(3), 4.0])
    def test_iid_logistic(self, iid2, zeta):
        assert lambda_prime(iid2, zeta) == pytest.approx(math.exp(zeta) / (1 + math.exp(zeta)), abs=1e-12)

    @pytest.mark.parametrize("zeta", [0.3, 1.0, 2.5])
    def test_finite_difference(self, chain40, zeta):
        d = 1e-5
        fd = (log_mgf(chain40, zeta + d) - log_mgf(chain40, zeta - d)) / (2 * d)
        assert lambda_prime(chain40, zeta) == pytest.approx(fd, abs=1e-6)

    @given(small_chains(), st.floats(-3, 3), st.floats(0.01, 2))
    def test_nondecreasing(self, chain, z, dz):
        assert lambda_prime(chain, z + dz) >= lambda_prime(chain, z) - 1e-9


class TestSolveZetaStar:
    def test_mean_threshold_gives_zero(self, chain40):
        assert solve_zeta_star(chain40, lambda_prime(chain40, 0.0)) == 0.0

    def test_iid_closed_form(self, iid2):
        assert solve_zeta_star(iid2, 0.75) == pytest.approx(math.log(3), abs=1e-9)

    def test_max_reward_is_unattainable(self, iid2):
        with pytest.raises(UnattainableThresholdError):
            solve_zeta_star(iid2, 1.0)
        with pytest.raises(UnattainableThresholdError):
            solve_zeta_star(iid2, 5.0)

    def test_frozen_reference_value(self, chain40):
        # Brent root of a finite-differenced dense-eigenvalue log-MGF
        assert solve_zeta_star(chain40, 2.5) == pytest.approx(1.821464552692198, abs=1e-8)

    def test_lower_tail_by_symmetry(self, iid2):
        assert solve_zeta_star(iid2, 0.25, tail="lower") == pytest.approx(-math.log(3), abs=1e-9)
        assert solve_zeta_star(iid2, 0.6, tail="lower") == 0.0
        with pytest.raises(UnattainableThresholdError):
            solve_zeta_star(iid2, 0.0, tail="lower")

    def test_bad_inputs(self, iid2):
        with pytest.raises(InvalidParameterError):
            solve_zeta_star(iid2, float("nan"))
        with pytest.raises(InvalidParameterError):
            solve_zeta_star(iid2, 0.5, tail="middle")

    def test_unattainable_uses_cycle_mean_not_max_reward(self):
        # the top state cannot repeat itself, so its reward is not sustainable
        P = np.array([[0.5, 0.5], [1.0, 0.0]])
        chain = MarkovChain(P, np.array([0.0, 1.0]))
        assert max_cycle_mean(P, chain.g) == pytest.approx(0.5)
        with pytest.raises(UnattainableThresholdError):
            solve_zeta_star(chain, 0.6)
        assert solve_zeta_star(chain, 0.45) > 0


class TestTiltedKernel:
    def test_zero_tilt(self, chain40):
        assert np.allclose(tilted_kernel(chain40, 0.0), chain40.P, atol=1e-12)

    def test_iid_rows(self, iid2):
        assert np.allclose(tilted_kernel(iid2, math.log(3)), [[0.25, 0.75]] * 2, atol=1e-12)

    def test_zero_pattern_preserved(self):
        P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        K = tilted_kernel(MarkovChain(P, np.array([0.0, 1.0, 2.0])), 1.3)
        assert np.array_equal(K == 0, P == 0)

    @given(small_chains(positive=False), st.floats(-3, 3))
    def test_rows_are_distributions(self, chain, zeta):
        K = tilted_kernel(chain, zeta)
        assert np.max(np.abs(K.sum(axis=1) - 1)) <= 1e-10
        assert np.array_equal(K == 0, chain.P == 0)


class TestAcvarOracle:
    def test_iid_closed_form(self, iid2):
        sol = acvar_oracle(iid2, 0.75)
        assert sol.zeta_star == pytest.approx(math.log(3), abs=1e-9)
        assert sol.rho_star == pytest.approx(2.0, abs=1e-9)
        assert sol.acvar == pytest.approx(0.75, abs=1e-9)
        assert np.allclose(sol.pi_star, [0.25, 0.75], atol=1e-9)
        assert np.allclose(sol.V_star, [1.0, 3.0], atol=1e-8)

    def test_below_mean_branch(self, chain40):
        sol = acvar_oracle(chain40, 1.0)
        assert sol.zeta_star == 0.0
        assert np.allclose(sol.p_star, chain40.P, atol=1e-12)
        assert sol.acvar == pytest.approx(stationary_distribution(chain40.P) @ chain40.g, abs=1e-10)

    def test_frozen_reference_solution(self, chain40):
        sol = acvar_oracle(chain40, 2.5)
        assert sol.log_rho_star == pytest.approx(3.8078636605069724, abs=1e-7)
        assert sol.acvar == pytest.approx(2.5, abs=1e-6)

    def test_translation(self, chain40):
        a = acvar_oracle(chain40, 2.2)
        b = acvar_oracle(chain40.with_rewards(chain40.g + 1.7), 2.2 + 1.7)
        assert b.zeta_star == pytest.approx(a.zeta_star, abs=1e-8)
        assert b.acvar == pytest.approx(a.acvar + 1.7, abs=1e-8)

    def test_json_round_trip(self, iid2):
        sol = acvar_oracle(iid2, 0.75)
        data = json.loads(sol.to_json())
        assert {"zeta_star", "rho_star", "V_star", "p_star", "pi_star", "acvar", "alpha"} <= set(data)
        back = OracleSolution.from_dict(data)
        assert back.zeta_star == sol.zeta_star and np.array_equal(back.p_star, sol.p_star)

    @given(small_chains(positive=False), st.floats(0.05, 0.9))
    def test_interior_identity_and_invariants(self, chain, frac):
        assume(np.ptp(chain.g) > 0.1)
        alpha = interior_alpha(chain, frac)
        try:
            sol = acvar_oracle(chain, alpha)
        except UnattainableThresholdError:
            assume(False)
        assert sol.zeta_star >= 0
        assert np.max(np.abs(sol.p_star.sum(axis=1) - 1)) <= 1e-10
        assert sol.acvar == pytest.approx(sol.pi_star @ chain.g, abs=1e-12)
        if sol.zeta_star > 0:
            assert abs(sol.acvar - alpha) <= 1e-6

    @given(small_chains(), st.floats(0.0, 0.9), st.floats(0.0, 0.9))
    def test_monotone_in_threshold(self, chain, f1, f2):
        assume(np.ptp(chain.g) > 0.1)
        a1, a2 = sorted((interior_alpha(chain, f1), interior_alpha(chain, f2)))
        assert acvar_oracle(chain, a1).acvar <= acvar_oracle(chain, a2).acvar + 1e-9


class TestConditionedExpectation:
    def test_examples(self, iid2):
        sol = acvar_oracle(iid2, 0.75)
        assert conditioned_expectation(sol, np.ones(2)) == pytest.approx(1.0)
        assert conditioned_expectation(sol, iid2.g) == pytest.approx(sol.acvar)
        assert conditioned_expectation(sol, [0.0, 1.0]) == pytest.approx(0.75, abs=1e-9)

    def test_shape_mismatch(self, iid2):
        with pytest.raises(InvalidParameterError):
            conditioned_expectation(acvar_oracle(iid2, 0.75), np.ones(3))


class TestMcOracle:
    def test_vacuous_conditioning_recovers_P(self, chain40):
        chain = chain40
        res = mc_conditioning_oracle(chain, -1.0, 5, 40_000, np.random.default_rng(0))
        assert res.accepted == 40_000 and res.acceptance_rate == 1.0
        assert total_variation(res.kernel[res.defined], chain.P[res.defined]).mean() < 0.1

    def test_impossible_threshold(self, iid2):
        with pytest.raises(NoAcceptanceError):
            mc_conditioning_oracle(iid2, 1.5, 10, 1_000, np.random.default_rng(0))

    def test_undefined_rows_are_flagged(self):
        # from state 0 the chain goes to 1 or 2; conditioning on a high average
        # rules out ever leaving state 1, so its row stays undefined
        P = np.array([[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        chain = MarkovChain(P, np.array([0.0, 0.0, 1.0]))
        res = mc_conditioning_oracle(chain, 0.9, 12, 2_000, np.random.default_rng(0), x0=2)
        assert not res.defined[1] and np.all(np.isnan(res.kernel[1]))
        assert res.defined[2]

    def test_argument_checks(self, iid2):
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidParameterError):
            mc_conditioning_oracle(iid2, 0.5, 1, 10, rng)
        with pytest.raises(InvalidParameterError):
            mc_conditioning_oracle(iid2, 0.5, 5, 0, rng)

    def test_batching_does_not_change_the_answer(self, iid2):
        a = mc_conditioning_oracle(iid2, 0.7, 10, 30_000, np.random.default_rng(5), batch=30_000)
        b = mc_conditioning_oracle(iid2, 0.7, 10, 30_000, np.random.default_rng(5), batch=30_000)
        assert np.array_equal(a.counts, b.counts)

    def test_error_shrinks_with_path_length(self, iid2):
        p_star = acvar_oracle(iid2, 0.75).p_star
        errs = []
        for n, paths in [(4, 20_000), (20, 200_000)]:
            res = mc_conditioning_oracle(iid2, 0.75, n, paths, np.random.default_rng(3))
            errs.append(total_variation(res.kernel[res.defined], p_star[res.defined]).max())
        assert errs[1] < errs[0]

    def test_matches_exact_finite_n_law(self, iid2):
        # On the i.i.d. chain a path conditioned on its number of ones S is
        # exchangeable, so the expected transition counts given S are
        # #(0->1) = S(n-S)/n, #(0->.) = (n-1)(n-S)/n, #(1->1) = S(S-1)/n,
        # #(1->.) = (n-1)S/n. Weighting by Binomial(n, 1/2) on S >= 0.75 n
        # gives the exact finite-n kernel the rejection sampler estimates.
        n, a01, a11 = 20, *exact_iid_rows(20, 15)
        res = mc_conditioning_oracle(iid2, 0.75, n, 200_000, np.random.default_rng(8))
        assert res.kernel[0, 1] == pytest.approx(a01, abs=0.01)
        assert res.kernel[1, 1] == pytest.approx(a11, abs=0.01)

    def test_lower_tail_mirrors_upper(self, iid2):
        a01, a11 = exact_iid_rows(20, 15)
        res = mc_conditioning_oracle(iid2, 0.25, 20, 200_000, np.random.default_rng(1), tail="lower")
        # relabelling 0 <-> 1 maps the lower-tail problem onto the upper one
        assert res.kernel[1, 0] == pytest.approx(a01, abs=0.01)
        assert res.kernel[0, 0] == pytest.approx(a11, abs=0.01)


def exact_iid_rows(n, k_min):
    """Exact P(0->1) and P(1->1) over fair-coin paths with at least ``k_min`` ones."""
    w = {k: math.comb(n, k) for k in range(k_min, n + 1)}
    a01 = sum(w[k] * k * (n - k) for k in w) / sum(w[k] * (n - 1) * (n - k) for k in w)
    a11 = sum(w[k] * k * (k - 1) for k in w) / sum(w[k] * (n - 1) * k for k in w)
    return a01, a11


def test_exact_finite_n_bias_exceeds_five_percent():
    # the n = 20 law differs from the limit (0.25, 0.75) by more than 0.05 in row 0
    a01, _ = exact_iid_rows(20, 15)
    assert a01 - 0.75 == pytest.approx(0.0538, abs=1e-4)


def test_constant_rewards_need_no_tilt():
    P = np.array([[0.2, 0.8], [0.6, 0.4]])
    chain = MarkovChain(P, np.full(2, 0.3))
    sol = acvar_oracle(chain, 0.3)
    assert sol.zeta_star == 0.0
    np.testing.assert_allclose(sol.p_star, P, atol=1e-12)
    assert sol.acvar == pytest.approx(0.3, abs=1e-12)
    assert solve_zeta_star(chain, -1.0) == 0.0
    with pytest.raises(UnattainableThresholdError):
        solve_zeta_star(chain, 0.31)


def test_steep_tilt_with_tiny_perron_entries():
    # one high-reward state with a weak self-loop: at zeta* the Perron vector
    # spans ~8 orders of magnitude and every row must still be exact
    P = np.array([
        [1 / 22, 1 / 22, 20 / 22, 0, 0],
        [0, 0.5, 0.5, 0, 0],
        [0, 0, 0.5, 0.5, 0],
        [0, 0, 0, 0.5, 0.5],
        [0.5, 0, 0, 0, 0.5],
    ])
    chain = MarkovChain(P, np.array([1.75, 0, 0, 0, 0]))
    sol = acvar_oracle(chain, 1.0)
    assert sol.zeta_star > 0
    assert abs(sol.acvar - 1.0) <= 1e-6
    M = tilted_matrix(chain, sol.zeta_star)
    V = sol.V_star
    np.testing.assert_allclose(M @ V, sol.rho_star * V, rtol=1e-9)
