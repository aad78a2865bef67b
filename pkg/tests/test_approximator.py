import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flexpi.approximator import (LinearStateBasis, NonConvexActionError, PolynomialBasis,
                                 RegressionSystem, check_rank_condition, eval_phi, eval_q,
                                 knee_basis, min_q_over_action, min_q_values, quadratic_basis,
                                 quadratic_matrix, quadratic_weights, solve_weighted_ls)
from flexpi.types import QApprox

KNEE = knee_basis()


def q_of(weights, basis=KNEE):
    return QApprox(np.asarray(weights, dtype=float), basis)


class TestKneeBasis:
    def test_size(self):
        assert KNEE.size == 15

    def test_zero_input(self):
        assert np.all(eval_phi(KNEE, [0, 0], [0, 0, 0]) == 0)

    def test_x1_only(self):
        phi = eval_phi(KNEE, [1, 0], [0, 0, 0])
        assert phi[0] == 1 and np.all(phi[1:] == 0)

    def test_all_ones(self):
        assert np.all(eval_phi(KNEE, [1, 1], [1, 1, 1]) == 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_phi(KNEE, [1, 0, 0], [0, 0, 0])

    def test_eval_q_examples(self):
        assert eval_q(q_of(np.zeros(15)), [3, 2], [1, 1, 1]) == 0
        e1 = np.eye(15)[0]
        assert eval_q(q_of(e1), [2, 0], [0, 0, 0]) == pytest.approx(4.0)
        assert eval_q(q_of(np.ones(15)), [1, 1], [1, 1, 1]) == pytest.approx(15.0)

    def test_cubic_state_terms(self):
        # last three monomials: x1^2 x2, x1^2 u1, x1^2 u2
        phi = eval_phi(KNEE, [2.0, 3.0], [5.0, 7.0, 0.0])
        assert phi[12] == 12.0 and phi[13] == 20.0 and phi[14] == 28.0

    def test_invalid_monomial(self):
        with pytest.raises(ValueError):
            PolynomialBasis("bad", 1, 1, [(0, 2)])
        with pytest.raises(ValueError):
            PolynomialBasis("empty", 1, 1, [()])

    @given(arrays(float, 15, elements=st.floats(-5, 5)),
           arrays(float, (4, 2), elements=st.floats(-3, 3)),
           arrays(float, (4, 3), elements=st.floats(-3, 3)))
    def test_action_quadratic_decomposition(self, w, xs, us):
        a, b, c = KNEE.action_quadratic(w, xs)
        direct = KNEE.evaluate(xs, us) @ w
        split = np.einsum("pi,pij,pj->p", us, a, us) + np.einsum("pi,pi->p", b, us) + c
        np.testing.assert_allclose(split, direct, rtol=1e-9, atol=1e-9)


class TestQuadraticBasis:
    @given(arrays(float, (3, 3), elements=st.floats(-4, 4)))
    def test_weights_roundtrip(self, m):
        h = 0.5 * (m + m.T)
        np.testing.assert_allclose(quadratic_matrix(quadratic_weights(h), 3), h, atol=1e-12)

    @given(arrays(float, (3, 3), elements=st.floats(-4, 4)), arrays(float, 3, elements=st.floats(-2, 2)))
    def test_reproduces_quadratic_form(self, m, z):
        h = 0.5 * (m + m.T)
        basis = quadratic_basis(2, 1)
        q = eval_q(q_of(quadratic_weights(h), basis), z[:2], z[2:])
        assert q == pytest.approx(float(z @ h @ z), abs=1e-9)


class TestLinearStateBasis:
    def test_scaling(self):
        np.testing.assert_allclose(LinearStateBasis(2, [8.0, 0.25]).evaluate([4.0, 0.5]), [[0.5, 2.0]])

    def test_rejects_non_positive_scale(self):
        with pytest.raises(ValueError):
            LinearStateBasis(2, [1.0, 0.0])


class TestWeightedLeastSquares:
    def test_identity_design(self):
        y = np.array([3.0, -1.0, 2.5])
        res = solve_weighted_ls(RegressionSystem(np.eye(3), y, np.ones(3)))
        np.testing.assert_allclose(res.weights, y)
        assert res.rank_status.satisfied and res.residual == pytest.approx(0, abs=1e-12)

    def test_scalar_mean(self):
        res = solve_weighted_ls(RegressionSystem([[1.0], [1.0]], [1.0, 3.0], [1.0, 1.0]))
        assert res.weights[0] == pytest.approx(2.0)

    def test_zero_weight_row_ignored(self):
        res = solve_weighted_ls(RegressionSystem([[1.0], [1.0]], [1.0, 3.0], [1.0, 0.0]))
        assert res.weights[0] == pytest.approx(1.0)

    def test_zero_targets(self):
        x = np.random.default_rng(1).normal(size=(20, 15))
        assert np.all(solve_weighted_ls(RegressionSystem(x, np.zeros(20), np.ones(20))).weights == 0)

    def test_rank_deficient_minimum_norm(self):
        x = np.array([[1.0, 1.0], [2.0, 2.0]])
        res = solve_weighted_ls(RegressionSystem(x, [2.0, 4.0], [1.0, 1.0]))
        np.testing.assert_allclose(res.weights, [1.0, 1.0])
        assert str(res.rank_status) == "deficient(1)"

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            RegressionSystem(np.eye(2), [1.0], [1.0, 1.0])

    def test_weights_bounded(self):
        with pytest.raises(ValueError):
            RegressionSystem(np.eye(2), [1.0, 1.0], [1.0, 2.0])

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_matches_normal_equations(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(25, 6))
        y = rng.normal(size=25)
        lam = rng.uniform(0.05, 1.0, size=25)
        w = solve_weighted_ls(RegressionSystem(x, y, lam)).weights
        # independent oracle: lstsq on the row-scaled system
        ref = np.linalg.lstsq(x * np.sqrt(lam)[:, None], y * np.sqrt(lam), rcond=None)[0]
        np.testing.assert_allclose(w, ref, rtol=1e-8, atol=1e-10)


class TestRankCondition:
    def test_identity(self):
        assert check_rank_condition(np.eye(15)).satisfied

    def test_duplicated_row(self):
        st_ = check_rank_condition(np.array([[1.0, 2.0], [1.0, 2.0]]))
        assert not st_.satisfied and st_.rank == 1 and str(st_) == "deficient(1)"

    def test_random_full_rank(self):
        x = np.random.default_rng(7).normal(size=(20, 15))
        assert check_rank_condition(x).satisfied
        assert np.linalg.matrix_rank(x) == 15

    def test_zero_matrix(self):
        assert check_rank_condition(np.zeros((4, 3))).rank == 0


class TestMinOverAction:
    def test_centered_quadratic(self):
        w = np.zeros(15)
        w[9:12] = [1.0, 2.0, 0.5]
        u, v = min_q_over_action(q_of(w), [1.0, 0.5])
        np.testing.assert_allclose(u, 0.0)
        assert v == pytest.approx(0.0)

    def test_complete_the_square(self):
        basis = PolynomialBasis("x-u", 1, 1, [(0, 0), (0, 1), (1, 1)])
        u, v = min_q_over_action(q_of([0.0, 2.0, 1.0], basis), [1.0])
        assert u[0] == pytest.approx(-1.0) and v == pytest.approx(-1.0)

    def test_separable(self):
        basis = PolynomialBasis("sep", 1, 1, [(0, 0), (1, 1)])
        u, v = min_q_over_action(q_of([1.0, 1.0], basis), [1.0])
        assert u[0] == pytest.approx(0.0) and v == pytest.approx(1.0)

    def test_non_convex(self):
        w = np.zeros(15)
        w[9:12] = [1.0, -1.0, 1.0]
        with pytest.raises(NonConvexActionError) as exc:
            min_q_over_action(q_of(w), [2.0, 0.0])
        np.testing.assert_allclose(exc.value.state, [2.0, 0.0])
        assert min_q_values(q_of(w), [[2.0, 0.0]])[0] == -np.inf

    @given(arrays(float, 15, elements=st.floats(-3, 3)), arrays(float, 2, elements=st.floats(-2, 2)))
    def test_minimizer_beats_perturbations(self, w, x):
        w = w.copy()
        w[9:12] = np.abs(w[9:12]) + 0.5  # convex in u
        q = q_of(w)
        u, v = min_q_over_action(q, x)
        assert eval_q(q, x, u) == pytest.approx(v, abs=1e-9)
        for du in np.eye(3) * 0.1:
            assert eval_q(q, x, u + du) >= v - 1e-9
            assert eval_q(q, x, u - du) >= v - 1e-9
