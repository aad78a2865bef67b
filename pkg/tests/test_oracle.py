import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from flexpi.bench.oracle import (LQInstance, OracleError, policy_cost_matrix, riccati_oracle,
                                 scalar_instance, two_state_instance)

GOLDEN = (1 + 5**0.5) / 2


def test_scalar_golden_ratio():
    gain, p = riccati_oracle([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert p[0, 0] == pytest.approx(GOLDEN, rel=1e-10)
    assert gain[0, 0] == pytest.approx(GOLDEN / (1 + GOLDEN), rel=1e-10)


def test_no_input_reduces_to_lyapunov():
    a = np.array([[0.5, 0.1], [0.0, 0.8]])
    _, p = riccati_oracle(a, np.zeros((2, 1)), np.eye(2), [[1.0]])
    np.testing.assert_allclose(p, scipy.linalg.solve_discrete_lyapunov(a.T, np.eye(2)), rtol=1e-9)


def test_zero_state_cost():
    gain, p = riccati_oracle([[0.9]], [[1.0]], [[0.0]], [[1.0]])
    assert p[0, 0] == 0.0 and gain[0, 0] == 0.0


def test_unstable_uncontrollable_reports_radius():
    with pytest.raises(OracleError, match="spectral radius 1.2"):
        riccati_oracle([[1.2]], [[0.0]], [[1.0]], [[1.0]], max_iters=500)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3)) * 0.6
    b = rng.normal(size=(3, 2))
    q = np.diag(rng.uniform(0.2, 2.0, 3))
    r = np.diag(rng.uniform(0.2, 2.0, 2))
    gain, p = riccati_oracle(a, b, q, r)
    ref = scipy.linalg.solve_discrete_are(a, b, q, r)
    np.testing.assert_allclose(p, ref, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(gain, np.linalg.solve(r + b.T @ ref @ b, b.T @ ref @ a),
                               rtol=1e-7, atol=1e-10)


def test_policy_cost_of_optimal_feedback_is_riccati():
    inst = two_state_instance()
    np.testing.assert_allclose(policy_cost_matrix(inst.a, inst.b, inst.q, inst.r, inst.optimal_feedback),
                               inst.p, rtol=1e-9)


def test_policy_cost_rejects_unstable_feedback():
    inst = two_state_instance()
    with pytest.raises(OracleError, match="not stabilizing"):
        policy_cost_matrix(inst.a, inst.b, inst.q, inst.r, [[0.0, 0.0]])


def test_q_star_minimum_is_value():
    inst = scalar_instance()
    h = inst.q_star()
    u_star = -h[1, 0] / h[1, 1]
    assert u_star == pytest.approx(inst.optimal_feedback[0, 0])
    assert h[0, 0] + 2 * h[0, 1] * u_star + h[1, 1] * u_star**2 == pytest.approx(GOLDEN)


def test_instance_caches_solution():
    inst = LQInstance("x", [[0.5]], [[1.0]], [[1.0]], [[1.0]], [[0.0]])
    assert inst.state_dim == 1 and inst.action_dim == 1
    ref = scipy.linalg.solve_discrete_are(inst.a, inst.b, inst.q, inst.r)
    np.testing.assert_allclose(inst.p, ref, rtol=1e-9)
