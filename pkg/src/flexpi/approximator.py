"""Polynomial critic/actor bases and weighted least-squares policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from flexpi.types import PolicyApprox, QApprox

# Knee basis over z = (x1, x2, u1, u2, u3); indices 0-1 are state, 2-4 action.
_KNEE_MONOMIALS = (
    (0, 0), (0, 1), (0, 2), (0, 3), (0, 4),
    (1, 1), (1, 2), (1, 3), (1, 4),
    (2, 2), (3, 3), (4, 4),
    (0, 0, 1), (0, 0, 2), (0, 0, 3),
)


class NonConvexActionError(ValueError):
    """Q is not strictly convex in the action at ``state``."""

    def __init__(self, state):
        self.state = np.asarray(state, dtype=float)
        super().__init__(f"Q is not convex in the action at state {self.state.tolist()}")


class PolynomialBasis:
    """Monomial basis phi(x, u) over the stacked vector z = (x, u).

    Each monomial is a tuple of indices into z, repeated for powers, so
    ``(0, 0, 1)`` is x1^2 x2. Every monomial must contain at least one
    factor, which gives phi(0, 0) = 0.
    """

    def __init__(self, name: str, state_dim: int, action_dim: int,
                 monomials: Sequence[Sequence[int]]):
        self.name = name
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.monomials = tuple(tuple(sorted(m)) for m in monomials)
        d = state_dim + action_dim
        if any(len(m) == 0 or min(m) < 0 or max(m) >= d for m in self.monomials):
            raise ValueError(f"monomial indices must lie in [0, {d})")
        self.size = len(self.monomials)
        deg = max(len(m) for m in self.monomials)
        # pad with index d, which points at a column of ones
        self._idx = np.full((self.size, deg), d, dtype=np.intp)
        for j, m in enumerate(self.monomials):
            self._idx[j, : len(m)] = m

        n, mdim = state_dim, action_dim
        xdeg = max(sum(1 for i in m if i < n) for m in self.monomials)
        self._x_idx = np.full((self.size, max(xdeg, 1)), n, dtype=np.intp)
        self._e0 = np.zeros(self.size)
        self._e1 = np.zeros((self.size, mdim))
        self._e2 = np.zeros((self.size, mdim, mdim))
        self.max_action_degree = 0
        for j, m in enumerate(self.monomials):
            xs = [i for i in m if i < n]
            us = [i - n for i in m if i >= n]
            self._x_idx[j, : len(xs)] = xs
            self.max_action_degree = max(self.max_action_degree, len(us))
            if len(us) == 0:
                self._e0[j] = 1.0
            elif len(us) == 1:
                self._e1[j, us[0]] = 1.0
            elif len(us) == 2:
                a, b = us
                if a == b:
                    self._e2[j, a, a] = 1.0
                else:
                    self._e2[j, a, b] = self._e2[j, b, a] = 0.5

    def __repr__(self):
        return f"PolynomialBasis({self.name!r}, L={self.size})"

    def evaluate(self, states, actions) -> np.ndarray:
        """phi for a batch: (N, n) states and (N, m) actions -> (N, L)."""
        x = np.atleast_2d(np.asarray(states, dtype=float))
        u = np.atleast_2d(np.asarray(actions, dtype=float))
        if x.shape[1] != self.state_dim or u.shape[1] != self.action_dim:
            raise ValueError(
                f"basis {self.name!r} expects state dim {self.state_dim} and action dim "
                f"{self.action_dim}, got {x.shape[1]} and {u.shape[1]}"
            )
        z = np.concatenate([x, u, np.ones((x.shape[0], 1))], axis=1)
        return z[:, self._idx].prod(axis=2)

    def action_quadratic(self, weights, states):
        """Split W'phi(x, u) into u'A(x)u + b(x)'u + c(x) for each state.

        Returns arrays A (P, m, m), b (P, m), c (P,). Only valid when every
        monomial has action degree <= 2.
        """
        if self.max_action_degree > 2:
            raise ValueError(f"basis {self.name!r} is not quadratic in the action")
        x = np.atleast_2d(np.asarray(states, dtype=float))
        xp = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)[:, self._x_idx].prod(axis=2)
        wx = xp * np.asarray(weights, dtype=float)
        m = self.action_dim
        a = (wx @ self._e2.reshape(self.size, m * m)).reshape(-1, m, m)
        return a, wx @ self._e1, wx @ self._e0


def knee_basis() -> PolynomialBasis:
    """The 15-term critic basis for the 2-state, 3-action knee controller."""
    return PolynomialBasis("knee15", 2, 3, _KNEE_MONOMIALS)


def quadratic_basis(state_dim: int, action_dim: int) -> PolynomialBasis:
    """All products z_i z_j (i <= j) of z = (x, u): an exact basis for LQ Q-functions."""
    d = state_dim + action_dim
    return PolynomialBasis(
        f"quad{state_dim}x{action_dim}", state_dim, action_dim,
        list(combinations_with_replacement(range(d), 2)),
    )


def quadratic_weights(h) -> np.ndarray:
    """Weights reproducing z'Hz in ``quadratic_basis`` ordering."""
    h = np.asarray(h, dtype=float)
    h = 0.5 * (h + h.T)
    return np.array([h[i, j] if i == j else 2.0 * h[i, j]
                     for i, j in combinations_with_replacement(range(h.shape[0]), 2)])


def quadratic_matrix(weights, dim: int) -> np.ndarray:
    """Inverse of ``quadratic_weights``."""
    h = np.zeros((dim, dim))
    for w, (i, j) in zip(weights, combinations_with_replacement(range(dim), 2)):
        if i == j:
            h[i, i] = w
        else:
            h[i, j] = h[j, i] = 0.5 * w
    return h


class LinearStateBasis:
    """sigma(x) = x / scale; scale conditions the actor gradient."""

    def __init__(self, dim: int, scale=None):
        self.dim = self.size = dim
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float).reshape(dim)
        if np.any(self.scale <= 0):
            raise ValueError("sigma scale must be positive")
        self.name = f"linear{dim}"

    def __repr__(self):
        return f"LinearStateBasis(dim={self.dim}, scale={self.scale.tolist()})"

    def evaluate(self, states) -> np.ndarray:
        return np.atleast_2d(np.asarray(states, dtype=float)) / self.scale


def eval_phi(basis: PolynomialBasis, state, action) -> np.ndarray:
    return basis.evaluate(np.asarray(state, dtype=float)[None],
                          np.asarray(action, dtype=float)[None])[0]


def eval_q(q: QApprox, state, action) -> float:
    return float(eval_phi(q.basis, state, action) @ q.weights)


def eval_q_batch(q: QApprox, states, actions) -> np.ndarray:
    return q.basis.evaluate(states, actions) @ q.weights


def policy_actions(policy: PolicyApprox, states) -> np.ndarray:
    """h(x) for a batch of states, shape (N, m)."""
    return policy.basis.evaluate(states) @ policy.gains


def eval_policy(policy: PolicyApprox, state) -> np.ndarray:
    return policy_actions(policy, np.asarray(state, dtype=float)[None])[0]


@dataclass(frozen=True, eq=False)
class RegressionSystem:
    """Rows phi(x_k,u_k) - phi(x_{k+1}, h(x_{k+1})) with targets U and weights lambda."""

    design: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (x.shape[0] == y.shape[0] == w.shape[0]):
            raise ValueError(
                f"row mismatch: design {x.shape[0]}, targets {y.shape[0]}, weights {w.shape[0]}"
            )
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("sample weights must lie in [0, 1]")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class RankStatus:
    rank: int
    required: int

    @property
    def satisfied(self) -> bool:
        return self.rank >= self.required

    def __str__(self):
        return "satisfied" if self.satisfied else f"deficient({self.rank})"


@dataclass(frozen=True, eq=False)
class LeastSquaresResult:
    weights: np.ndarray
    rank_status: RankStatus
    residual: float  # ||X W - Y||_2, unweighted


def check_rank_condition(design, rank_tol: float = 1e-10) -> RankStatus:
    """Numerical column rank of the design matrix against its width L."""
    x = np.atleast_2d(np.asarray(design, dtype=float))
    s = np.linalg.svd(x, compute_uv=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return RankStatus(rank, x.shape[1])


def solve_weighted_ls(system: RegressionSystem, rank_tol: float = 1e-10) -> LeastSquaresResult:
    """W = (X' Lambda X)^+ (X' Lambda Y) with an SVD pseudoinverse.

    Computed as (Lambda^1/2 X)^+ Lambda^1/2 Y, the same minimum-norm
    solution without squaring the condition number. Singular values below
    ``rank_tol * sigma_max`` are dropped.
    """
    x, y, lam = system.design, system.targets, system.weights
    root = np.sqrt(lam)
    u, s, vt = np.linalg.svd(x * root[:, None], full_matrices=False)
    keep = s > rank_tol * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    w = vt[keep].T @ ((u[:, keep].T @ (root * y)) / s[keep])
    if w.shape[0] == 0:
        w = np.zeros(x.shape[1])
    return LeastSquaresResult(
        weights=w,
        rank_status=check_rank_condition(x, rank_tol),
        residual=float(np.linalg.norm(x @ w - y)),
    )


def min_q_over_action(q: QApprox, state):
    """Analytic minimizer of Q(x, .) for a basis quadratic in u.

    Returns ``(action, value)``; raises NonConvexActionError when A(x) is
    not positive definite.
    """
    a, b, c = q.basis.action_quadratic(q.weights, np.asarray(state, dtype=float)[None])
    a, b, c = a[0], b[0], c[0]
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NonConvexActionError(state) from None
    u = -0.5 * np.linalg.solve(a, b)
    return u, float(c + 0.5 * b @ u)


def min_q_values(q: QApprox, states) -> np.ndarray:
    """min_u Q(x, u) for a batch of states; -inf where Q is not convex in u."""
    a, b, c = q.basis.action_quadratic(q.weights, states)
    out = np.full(c.shape, -np.inf)
    for p in range(c.shape[0]):
        try:
            np.linalg.cholesky(a[p])
        except np.linalg.LinAlgError:
            continue
        u = -0.5 * np.linalg.solve(a[p], b[p])
        out[p] = c[p] + 0.5 * b[p] @ u
    return out
