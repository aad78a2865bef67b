"""Linear-quadratic ground truth: Riccati and Lyapunov solutions."""

from __future__ import annotations

import numpy as np


class OracleError(RuntimeError):
    pass


def _as2d(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=float))


def spectral_radius(m) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(_as2d(m)))))


def riccati_oracle(a, b, q, r, tol: float = 1e-12, max_iters: int = 100_000):
    """Fixed-point iteration of the discrete algebraic Riccati equation.

    Returns ``(gain, p)`` with the optimal control u = -gain @ x.
    """
    a, q, r = _as2d(a), _as2d(q), _as2d(r)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    p = q.copy()
    for _ in range(max_iters):
        s = r + b.T @ p @ b
        gain = np.linalg.solve(s, b.T @ p @ a)
        p_next = q + a.T @ p @ (a - b @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            break
        done = np.max(np.abs(p_next - p)) <= tol * max(1.0, np.max(np.abs(p_next)))
        p = p_next
        if done:
            return np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a), p
    gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a) if np.all(np.isfinite(p)) else None
    rho = spectral_radius(a - b @ gain) if gain is not None else float("inf")
    raise OracleError(
        f"Riccati iteration did not converge in {max_iters} steps "
        f"(closed-loop spectral radius {rho:.6g})")


def policy_cost_matrix(a, b, q, r, feedback) -> np.ndarray:
    """P with x'Px the cost of u = feedback @ x (a discrete Lyapunov solve)."""
    a, q, r = _as2d(a), _as2d(q), _as2d(r)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    g = np.asarray(feedback, dtype=float).reshape(b.shape[1], a.shape[0])
    closed = a + b @ g
    if spectral_radius(closed) >= 1.0:
        raise OracleError(f"policy is not stabilizing (spectral radius {spectral_radius(closed):.6g})")
    n = a.shape[0]
    rhs = q + g.T @ r @ g
    vec = np.linalg.solve(np.eye(n * n) - np.kron(closed.T, closed.T), rhs.reshape(-1))
    p = vec.reshape(n, n)
    return 0.5 * (p + p.T)


def q_matrix(a, b, q, r, p) -> np.ndarray:
    """H with Q(x, u) = [x; u]' H [x; u] = U(x, u) + (Ax + Bu)' P (Ax + Bu)."""
    a, q, r, p = _as2d(a), _as2d(q), _as2d(r), _as2d(p)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    return np.block([[q + a.T @ p @ a, a.T @ p @ b], [b.T @ p @ a, r + b.T @ p @ b]])


class LQInstance:
    """A named linear-quadratic problem with its oracle solution cached."""

    def __init__(self, name, a, b, q, r, initial_feedback):
        self.name = name
        self.a, self.q, self.r = _as2d(a), _as2d(q), _as2d(r)
        self.b = np.asarray(b, dtype=float).reshape(self.a.shape[0], -1)
        self.initial_feedback = np.asarray(initial_feedback, dtype=float).reshape(
            self.b.shape[1], self.a.shape[0])
        self.gain, self.p = riccati_oracle(self.a, self.b, self.q, self.r)

    @property
    def state_dim(self):
        return self.a.shape[0]

    @property
    def action_dim(self):
        return self.b.shape[1]

    @property
    def optimal_feedback(self) -> np.ndarray:
        """u = F x with F = -gain."""
        return -self.gain

    def q_star(self) -> np.ndarray:
        return q_matrix(self.a, self.b, self.q, self.r, self.p)

    def q_policy(self, feedback) -> np.ndarray:
        p = policy_cost_matrix(self.a, self.b, self.q, self.r, feedback)
        return q_matrix(self.a, self.b, self.q, self.r, p)


def scalar_instance() -> LQInstance:
    """x+ = x + u, cost x^2 + u^2; optimal p = golden ratio."""
    return LQInstance("scalar", [[1.0]], [[1.0]], [[1.0]], [[1.0]], [[-0.5]])


def two_state_instance() -> LQInstance:
    """Open-loop unstable, controllable single-input plant."""
    return LQInstance(
        "two_state",
        a=[[1.1, 0.3], [0.0, 0.9]],
        b=[[0.2], [1.0]],
        q=np.eye(2), r=np.eye(1),
        initial_feedback=[[-0.5, -0.5]],
    )
