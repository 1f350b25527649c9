import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from pmlkit.design import (
    CustomUtility,
    DesignProblem,
    design,
    design_closed_form,
    design_vertex,
    design_via_fixed_estimate,
    enumerate_vertices,
    eps_prime_transform,
    k_singular_mechanism,
    lccp_constraints,
    membership_check,
    mutual_information,
    optimal_binary_mechanism,
    vertex_search,
    zero_pattern_violations,
)
from pmlkit.errors import InfeasibleError, InputError
from pmlkit.leakage import Mechanism, eps_min, privacy_region
from pmlkit.prob import Distribution


def direct_mi(w, prior):
    total = 0.0
    for j in range(w.shape[1]):
        p_y = sum(prior[i] * w[i, j] for i in range(w.shape[0]))
        for i in range(w.shape[0]):
            if w[i, j] > 0:
                total += prior[i] * w[i, j] * math.log(w[i, j] / p_y)
    return total


def random_estimate(rng, n, floor=0.05):
    p = rng.dirichlet(np.ones(n) * 4) + floor
    return Distribution(p / p.sum())


def interior_point(rng, problem):
    """Random feasible mechanism: largest mix of a random matrix with the uniform one."""
    n = problem.n
    target = rng.dirichlet(np.ones(n), size=n)
    uniform = np.full((n, n), 1 / n)
    lo, hi = 0.0, 1.0
    for _ in range(50):
        t = 0.5 * (lo + hi)
        if membership_check(Mechanism(t * target + (1 - t) * uniform), problem, tol=0.0):
            lo = t
        else:
            hi = t
    return Mechanism(lo * rng.uniform(0.2, 1.0) * (target - uniform) + uniform)


def lp_vertex_oracle(problem, n_objectives, seed, utility=mutual_information):
    """Best utility over vertices reached by random linear objectives on the full constraint matrix."""
    rng = np.random.default_rng(seed)
    cs = lccp_constraints(problem)
    best = -math.inf
    for _ in range(n_objectives):
        res = linprog(rng.normal(size=cs.n**2), A_ub=cs.a_ub, b_ub=cs.b_ub, A_eq=cs.a_eq, b_eq=cs.b_eq,
                      bounds=(0, None), method="highs-ds")
        w = np.clip(res.x.reshape(cs.n, cs.n), 0, None)
        best = max(best, utility(Mechanism(w / w.sum(axis=1, keepdims=True)), problem.estimate))
    return best


class TestBinaryClosedForm:
    def test_frozen_example(self):
        # exact rationals for p1 = 3/5, beta = 1/5, e^eps = 6/5
        expected = [[Fraction(15, 31), Fraction(16, 31)], [Fraction(10, 31), Fraction(21, 31)]]
        mech = optimal_binary_mechanism(0.6, 0.2, math.log(1.2))
        np.testing.assert_allclose(mech.matrix, np.array(expected, dtype=float), rtol=0, atol=1e-12)
        np.testing.assert_allclose(mech.matrix, [[0.48387, 0.51613], [0.32258, 0.67742]], atol=1e-5)

    @pytest.mark.parametrize("eps", [0.1, math.log(2), 1.0, 3.0])
    def test_randomized_response(self, eps):
        e = math.exp(eps)
        np.testing.assert_allclose(
            optimal_binary_mechanism(0.5, 1.0, eps).matrix, np.array([[e, 1], [1, e]]) / (1 + e), rtol=0, atol=1e-12
        )

    def test_no_leakage_gives_equal_rows(self):
        w = optimal_binary_mechanism(0.7, 0.0, 0.0).matrix
        np.testing.assert_allclose(w[0], w[1], atol=1e-15)

    def test_flat_at_both_extremes(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            p1 = rng.uniform(0.5, 0.95)
            beta = rng.uniform(0, 2 * (1 - p1)) * 0.99
            eps = rng.uniform(0, -math.log(p1 - beta / 2))
            mech = optimal_binary_mechanism(p1, beta, eps)
            for q in (p1 + beta / 2, p1 - beta / 2):
                assert eps_min(mech, Distribution([q, 1 - q])) == pytest.approx(eps, abs=1e-12)

    def test_low_p1_is_relabelled(self):
        a = optimal_binary_mechanism(0.3, 0.1, 0.4).matrix
        b = optimal_binary_mechanism(0.7, 0.1, 0.4).matrix
        np.testing.assert_allclose(a, b[::-1, ::-1], atol=1e-15)

    def test_domain(self):
        with pytest.raises(InfeasibleError):
            optimal_binary_mechanism(0.8, 0.5, 0.1)
        with pytest.raises(InfeasibleError):
            optimal_binary_mechanism(0.6, 0.2, -math.log(0.5) + 0.1)
        with pytest.raises(InputError):
            optimal_binary_mechanism(0.6, 0.2, -0.1)


class TestTransform:
    def test_examples(self):
        assert eps_prime_transform(1.3, 0.0) == 1.3
        assert eps_prime_transform(math.log(2), 0.5) == pytest.approx(math.log(4 / 3), rel=1e-15)
        assert eps_prime_transform(1.0, 0.1) < 1.0

    @given(st.floats(0.0, 4.0), st.floats(0.0, 1.99))
    def test_inverse_is_sensitivity_form(self, eps, beta):
        eps_prime = eps_prime_transform(eps, beta)
        assert eps_prime == pytest.approx(math.log(math.exp(eps) / (1 + beta / 2 * math.exp(eps))), abs=1e-12)
        assert eps_prime + math.log(1 / (1 - beta / 2 * math.exp(eps_prime))) == pytest.approx(eps, abs=1e-12)

    def test_domain(self):
        with pytest.raises(InputError):
            eps_prime_transform(1.0, 2.0)


class TestConstraints:
    def test_counts(self):
        cs = lccp_constraints(DesignProblem(Distribution([0.6, 0.4]), 0.2, 0.5))
        assert cs.counts == (8, 2, 4)
        cs = lccp_constraints(DesignProblem(Distribution.uniform(4), 0.1, 0.5))
        assert cs.counts == (64, 4, 16)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0.0, 3.0), st.floats(0.0, 1.0))
    def test_uniform_always_feasible(self, seed, n, eps, frac):
        est = random_estimate(np.random.default_rng(seed), n)
        problem = DesignProblem(est, frac * 2 * est.p_min, eps)
        assert membership_check(Mechanism(np.full((n, n), 1 / n)), problem).ok

    def test_closed_form_is_feasible_and_tight(self):
        problem = DesignProblem(Distribution([0.6, 0.4]), 0.2, math.log(1.2))
        mech = optimal_binary_mechanism(0.6, 0.2, math.log(1.2))
        check = membership_check(mech, problem)
        assert check.ok
        cs = lccp_constraints(problem)
        slack = (cs.a_ub @ mech.matrix.ravel()).reshape(2, 2, 2)
        assert np.all(np.abs(slack).min(axis=(0, 1)) <= 1e-9)

    def test_identity_fails_small_eps(self):
        problem = DesignProblem(Distribution([0.5, 0.5]), 0.1, 0.2)
        check = membership_check(Mechanism(np.eye(2)), problem)
        assert not check.ok and check.max_violation > 0.1

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            membership_check(Mechanism(np.eye(3)), DesignProblem(Distribution([0.5, 0.5]), 0.1, 0.2))

    def test_problem_validation(self):
        with pytest.raises(InfeasibleError):
            DesignProblem(Distribution([0.9, 0.1]), 0.3, 1.0)
        with pytest.raises(InputError):
            DesignProblem(Distribution([1.0, 0.0]), 0.0, 1.0)
        with pytest.raises(InputError):
            DesignProblem(Distribution([0.5, 0.5]), 0.0, -1.0)


class TestVertexSearch:
    def test_binary_fixed_estimate_optimum(self):
        for p1, eps in [(0.6, 0.3), (0.75, 0.2), (0.5, 0.6)]:
            problem = DesignProblem(Distribution([p1, 1 - p1]), 0.0, eps)
            np.testing.assert_allclose(
                design_vertex(problem).matrix, optimal_binary_mechanism(p1, 0.0, eps).matrix, atol=1e-9
            )

    def test_binary_robust_optimum(self):
        problem = DesignProblem(Distribution([0.6, 0.4]), 0.2, math.log(1.2))
        np.testing.assert_allclose(
            design_vertex(problem).matrix, optimal_binary_mechanism(0.6, 0.2, math.log(1.2)).matrix, atol=1e-9
        )

    def test_vertex_set_contains_closed_form(self):
        problem = DesignProblem(Distribution([0.6, 0.4]), 0.2, math.log(1.2))
        closed = optimal_binary_mechanism(0.6, 0.2, math.log(1.2)).matrix
        verts = enumerate_vertices(lccp_constraints(problem))
        assert any(np.abs(v.matrix - closed).max() <= 1e-9 for v in verts)
        assert all(membership_check(v, problem).ok for v in verts)

    @pytest.mark.parametrize("n", [3, 4])
    def test_beats_interior_points(self, n):
        rng = np.random.default_rng(n)
        est = random_estimate(rng, n)
        problem = DesignProblem(est, est.p_min, 1.0)
        best = mutual_information(design_vertex(problem), est)
        for _ in range(100):
            assert mutual_information(interior_point(rng, problem), est) <= best + 1e-12

    @pytest.mark.parametrize("n, seed", [(3, 0), (3, 1), (4, 2)])
    def test_matches_lp_vertex_oracle(self, n, seed):
        est = random_estimate(np.random.default_rng(seed), n)
        problem = DesignProblem(est, 1.5 * est.p_min, 0.8)
        found = mutual_information(design_vertex(problem), est)
        assert found >= lp_vertex_oracle(problem, 200, seed) - 1e-10

    def test_custom_utility(self):
        def mu(col, prior):
            return float(col.max() - prior @ col)

        util = CustomUtility(mu)
        est = Distribution([0.5, 0.3, 0.2])
        problem = DesignProblem(est, 0.1, 0.7)
        mech = design_vertex(problem, util)
        assert membership_check(mech, problem).ok
        assert util(mech, est) >= lp_vertex_oracle(problem, 200, 5, util) - 1e-10

    def test_deterministic(self):
        est = Distribution.uniform(4)
        problem = DesignProblem(est, 0.1, 1.0)
        a, b = design_vertex(problem).matrix, design_vertex(problem).matrix
        np.testing.assert_array_equal(a, b)

    def test_size_limit(self):
        problem = DesignProblem(Distribution.uniform(7), 0.01, 1.0)
        with pytest.raises(InputError, match="exhaustive mode limited to N ≤ 6"):
            design_vertex(problem)
        with pytest.raises(InputError, match="exhaustive mode limited to N ≤ 6"):
            vertex_search(lccp_constraints(problem))

    def test_zero_eps_is_rank_one(self):
        mech = design_vertex(DesignProblem(Distribution([0.3, 0.3, 0.4]), 0.1, 0.0))
        np.testing.assert_allclose(mech.matrix, 1 / 3)

    def test_zero_pattern(self):
        rng = np.random.default_rng(9)
        for n in (3, 4, 5):
            est = random_estimate(rng, n)
            for eps in (0.3, 0.8, 1.5):
                problem = DesignProblem(est, 0.5 * est.p_min, eps)
                mech = design_vertex(problem)
                assert zero_pattern_violations(mech, eps_min(mech, est), est) == 0


class TestFixedEstimate:
    def test_zero_radius_is_fixed_design(self):
        est = Distribution([0.5, 0.3, 0.2])
        problem = DesignProblem(est, 0.0, 0.9)
        np.testing.assert_allclose(design_via_fixed_estimate(problem).matrix, design_vertex(problem).matrix, atol=1e-12)

    def test_k_singular_is_optimal(self):
        uniform = Distribution.uniform(10)
        beta = 0.05
        eps_prime = math.log(5)
        eps = eps_prime - math.log1p(-beta / 2 * math.exp(eps_prime))
        problem = DesignProblem(uniform, beta, eps)
        assert problem.eps > eps_prime
        mech = design_via_fixed_estimate(problem)
        assert mech.meta["eps_prime"] == pytest.approx(eps_prime, abs=1e-12)
        assert mutual_information(mech, uniform) == pytest.approx(math.log(5), abs=1e-9)
        assert mutual_information(k_singular_mechanism(10, 2), uniform) == pytest.approx(math.log(5), abs=1e-12)
        assert membership_check(k_singular_mechanism(10, 2), problem).ok

    def test_not_better_than_full_polytope(self):
        rng = np.random.default_rng(11)
        for n in (2, 3, 4):
            est = random_estimate(rng, n)
            for frac in (0.2, 0.9):
                problem = DesignProblem(est, frac * 2 * est.p_min, 1.0)
                fixed = mutual_information(design_via_fixed_estimate(problem), est)
                assert fixed <= mutual_information(design_vertex(problem), est) + 1e-12

    def test_binary_gap_to_closed_form(self):
        # the two paths agree only without uncertainty
        for beta in (0.0, 0.2):
            problem = DesignProblem(Distribution([0.5, 0.5]), beta, math.log(2))
            fixed = mutual_information(design_via_fixed_estimate(problem), problem.estimate)
            closed = mutual_information(design_closed_form(problem), problem.estimate)
            if beta == 0:
                assert fixed == pytest.approx(closed, abs=1e-12)
            else:
                assert fixed < closed - 1e-3

    def test_utility_nonincreasing_in_beta(self):
        est = Distribution([0.4, 0.35, 0.25])
        values = [
            mutual_information(design_via_fixed_estimate(DesignProblem(est, b, 1.2)), est)
            for b in np.linspace(0, 0.45, 10)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_large_alphabet_passes_membership(self):
        est = random_estimate(np.random.default_rng(4), 9, floor=0.2)
        problem = DesignProblem(est, 0.02, 1.0)
        mech = design_via_fixed_estimate(problem)
        assert membership_check(mech, problem).ok
        assert mech.meta["search"] == "ray_lp"
        assert "subset" in mech.meta["note"]

    def test_negative_eps_prime(self):
        with pytest.raises(InfeasibleError):
            design_via_fixed_estimate(DesignProblem(Distribution([0.5, 0.5]), 0.5, 0.05))

    def test_dispatch(self):
        problem = DesignProblem(Distribution([0.6, 0.4]), 0.2, math.log(1.2))
        for mode in ("closed_form", "vertex", "fixed_estimate"):
            assert design(problem, mode).meta["path"] == mode
        with pytest.raises(InputError):
            design(problem, "magic")
        with pytest.raises(InputError):
            design(DesignProblem(Distribution.uniform(3), 0.1, 1.0), "closed_form")


class TestKSingular:
    def test_examples(self):
        uniform = Distribution.uniform(10)
        assert eps_min(k_singular_mechanism(10, 2), uniform) == pytest.approx(math.log(5), abs=1e-12)
        np.testing.assert_allclose(k_singular_mechanism(10, 10).matrix, 0.1)
        assert eps_min(k_singular_mechanism(10, 10), uniform) == pytest.approx(0.0, abs=1e-12)
        perm = k_singular_mechanism(10, 1)
        assert eps_min(perm, uniform) == pytest.approx(math.log(10), abs=1e-12)

    def test_doubly_stochastic(self):
        w = k_singular_mechanism(12, 3).matrix
        np.testing.assert_allclose(w.sum(axis=0), 1.0)
        assert set(np.unique(w)) == {0.0, 1 / 3}

    def test_region(self):
        assert privacy_region(math.log(5), Distribution.uniform(10)) == 9

    def test_non_divisor(self):
        with pytest.raises(InputError):
            k_singular_mechanism(10, 3)


class TestMutualInformation:
    def test_examples(self):
        assert mutual_information(Mechanism(np.tile([0.3, 0.7], (2, 1))), Distribution([0.4, 0.6])) == 0.0
        assert mutual_information(Mechanism(np.eye(2)), Distribution.uniform(2)) == pytest.approx(math.log(2), abs=1e-15)

    def test_flat_mechanism_double_sum(self):
        w = np.array(
            [
                [0.325, 0.225, 0.225, 0.225],
                [0.45, 0.1, 0.225, 0.225],
                [0.45, 0.225, 0.1, 0.225],
                [0.45, 0.225, 0.225, 0.1],
            ]
        )
        prior = [0.4, 0.2, 0.2, 0.2]
        assert mutual_information(Mechanism(w), Distribution(prior)) == pytest.approx(direct_mi(w, prior), abs=1e-12)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(4), size=4)
        w[rng.random((4, 4)) < 0.3] = 0
        w[:, 0] += 1e-3
        w /= w.sum(axis=1, keepdims=True)
        prior = random_estimate(rng, 4)
        val = mutual_information(Mechanism(w), prior)
        assert val >= -1e-15
        assert val == pytest.approx(direct_mi(w, prior.probs), abs=1e-12)
