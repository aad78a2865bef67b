"""Flexible policy iteration: evaluation, actor improvement and the main loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from flexpi.approximator import (
    LeastSquaresResult,
    LinearStateBasis,
    PolynomialBasis,
    RankStatus,
    RegressionSystem,
    min_q_values,
    policy_actions,
    quadratic_basis,
    solve_weighted_ls,
)
from flexpi.replay import (
    IterationData,
    NeedMoreData,
    ReplayBuffer,
    assign_priorities,
    prepare_iteration_data,
    td_errors,
)
from flexpi.types import FpiConfig, GaitSample, PolicyApprox, QApprox, stage_cost

log = logging.getLogger(__name__)

RANK_ABORT_STREAK = 3


class FpiAborted(RuntimeError):
    """The iteration cannot continue (persistent rank deficiency or bad residual)."""


class SafetyViolation(RuntimeError):
    """The plant left its safety box."""


class ActorDivergence(RuntimeError):
    """Actor gradient descent blew up; ``last_stable`` holds the warm-start gains."""

    def __init__(self, last_stable: PolicyApprox, grad_norm: float):
        super().__init__(f"actor gradient diverged (|grad|_inf = {grad_norm:.3g})")
        self.last_stable = last_stable


class SupplementalValue:
    """Prior-knowledge state value V(x) = max(0, min_u Q_f(x,u) - min_u Q_f(0,u)).

    The shift pins V(0) = 0 and the clamp keeps V non-negative even when the
    source critic is not positive definite.
    """

    def __init__(self, source_q: QApprox, alpha_base: float = 0.9):
        if not 0.0 < alpha_base < 1.0:
            raise ValueError("alpha_base must lie in (0, 1)")
        self.source_q = source_q
        self.alpha_base = alpha_base
        zero = np.zeros((1, source_q.basis.state_dim))
        self._offset = float(min_q_values(source_q, zero)[0])
        if not np.isfinite(self._offset):
            log.warning("supplemental source critic is not convex in u at x=0; V is identically 0")

    def alpha(self, iteration: int) -> float:
        return self.alpha_base**iteration

    def values(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if not np.isfinite(self._offset):
            return np.zeros(states.shape[0])
        v = min_q_values(self.source_q, states) - self._offset
        return np.maximum(v, 0.0)  # -inf (non-convex) clamps to 0 as well

    def __call__(self, state) -> float:
        return float(self.values(np.asarray(state, dtype=float)[None])[0])


def extract_supplemental(q_final: QApprox, alpha_base: float = 0.9) -> SupplementalValue:
    return SupplementalValue(q_final, alpha_base)


def augmented_stage_cost(sample: GaitSample, supp: Optional[SupplementalValue],
                         iteration: int) -> float:
    """U_i = U + alpha_i V(x_k); plain stage cost without a supplemental value."""
    if supp is None:
        return sample.stage_cost
    return sample.stage_cost + supp.alpha(iteration) * supp(sample.state)


def build_regression(data: IterationData, policy: PolicyApprox, basis: PolynomialBasis,
                     targets, weights) -> RegressionSystem:
    """Rows phi(x_k, u_k) - phi(x_{k+1}, h(x_{k+1})) under the current policy."""
    next_u = policy_actions(policy, data.next_states)
    design = basis.evaluate(data.states, data.actions) - basis.evaluate(data.next_states, next_u)
    return RegressionSystem(design, targets, weights)


def evaluate_policy(system: RegressionSystem, basis: PolynomialBasis,
                    config: FpiConfig) -> tuple[QApprox, LeastSquaresResult]:
    ls = solve_weighted_ls(system, config.rank_tol)
    return QApprox(ls.weights, basis), ls


def improve_policy(q: QApprox, states, config: FpiConfig,
                   warm_start: PolicyApprox) -> PolicyApprox:
    """Gradient descent on the actor gains, averaged over ``states``.

    K <- K - l * mean_x d Q(x, K' sigma(x)) / dK, stopping when the gradient
    inf-norm drops below ``config.convergence_tol`` or after
    ``config.actor_inner_iters`` steps. Requires a critic quadratic in u.
    """
    sig = warm_start.basis.evaluate(states)
    a, b, _ = q.basis.action_quadratic(q.weights, states)
    p, d = sig.shape
    m = warm_start.action_dim
    # grad_ij = sum_lk H[ij, lk] K_lk + g0_ij, exactly linear in K
    hess = (2.0 / p) * np.einsum("pi,pl,pjk->ijlk", sig, sig, a).reshape(d * m, d * m)
    g0 = (sig.T @ b / p).reshape(-1)
    k = warm_start.gains.reshape(-1).copy()
    lr, tol = config.learning_rate, config.convergence_tol

    grad = hess @ k + g0
    start_norm = float(np.abs(grad).max())
    # the objective is quadratic in K: descent with step lr diverges whenever
    # an eigenvalue of the Hessian falls outside (0, 2/lr), so detect it up front
    eig = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    if start_norm > tol and (eig[0] < -1e-12 * max(1.0, abs(eig[-1])) or lr * eig[-1] >= 2.0):
        raise ActorDivergence(warm_start, float("inf"))
    for _ in range(config.actor_inner_iters):
        norm = float(np.abs(grad).max())
        if not np.isfinite(norm) or norm > 10.0 * max(start_norm, tol):
            raise ActorDivergence(warm_start, norm)
        if norm < tol:
            break
        k -= lr * grad
        grad = hess @ k + g0
    return PolicyApprox(k.reshape(d, m), warm_start.basis)


def probe_grid(box, points: int = 10) -> np.ndarray:
    """Uniform grid over a box given as (n, 2) [low, high] rows."""
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(lo, hi, points) for lo, hi in box]
    return np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)


@dataclass(frozen=True, eq=False)
class IterationDiagnostics:
    iteration: int
    critic: QApprox
    actor_gains: np.ndarray  # gains of the policy evaluated at this iteration
    weight_delta: float
    bellman_residual: float
    rank_status: RankStatus
    value_on_probe_grid: np.ndarray
    monotonicity_violation: float
    n_samples: int
    batch_size: int
    alpha: float
    actor_diverged: bool = False


class FpiController:
    """One FPI learner: acts, stores transitions and runs policy iterations.

    Batch mode evaluates after ``n_b`` fresh on-policy samples; incremental
    mode evaluates on every new sample once the buffer holds at least L.
    """

    def __init__(self, config: FpiConfig, critic_basis: PolynomialBasis,
                 actor_basis: LinearStateBasis, initial_gains, probe_states,
                 action_noise_scale, rng: np.random.Generator,
                 supplemental: Optional[SupplementalValue] = None):
        config.check_basis_size(critic_basis.size)
        if config.supplemental and supplemental is None:
            raise ValueError("supplemental setting is on but no supplemental value was given")
        self.config = config
        self.critic_basis = critic_basis
        self.policy = PolicyApprox(initial_gains, actor_basis)
        self.critic = QApprox.zeros(critic_basis)
        self.probe_states = np.asarray(probe_states, dtype=float)
        self.noise_std = config.exploration_noise_fraction * np.abs(
            np.asarray(action_noise_scale, dtype=float))
        self.rng = rng
        self.supplemental = supplemental if config.supplemental else None
        self.buffer = ReplayBuffer(config.buffer_max)
        self.iteration = 0
        self.policy_version = 0
        self.n_b = config.n_b_initial
        self.trace: List[IterationDiagnostics] = []
        self.converged = False
        self._prev_values: Optional[np.ndarray] = None
        self._rank_streak = 0
        self._pending_test: Optional[float] = None

    @property
    def learning(self) -> bool:
        return not self.converged and self.iteration < self.config.i_max

    def act(self, state, explore: bool = True) -> np.ndarray:
        u = policy_actions(self.policy, np.asarray(state, dtype=float)[None])[0]
        if explore and self.learning and np.any(self.noise_std > 0):
            u = u + self.noise_std * self.rng.standard_normal(u.shape[0])
        return u

    def observe(self, state, action, next_state) -> Optional[IterationDiagnostics]:
        """Store a transition; returns diagnostics if it completed an iteration."""
        cost = stage_cost(state, action, self.config.r_x, self.config.r_u)
        self.buffer.push(GaitSample(state, action, next_state, cost), self.policy_version)
        if not self.learning:
            return None
        if self._pending_test is not None:
            # one-cycle test of the new policy for the adaptive batch size
            if cost >= self._pending_test:
                self.n_b = min(self.n_b + self.config.n_b_increment, self.config.n_b_max)
            self._pending_test = None
        try:
            data = prepare_iteration_data(self.buffer, self.config, self.n_b,
                                          self.policy_version, self.critic_basis.size)
        except NeedMoreData:
            return None
        return self.iterate(data)

    def iterate(self, data: IterationData) -> IterationDiagnostics:
        cfg, i = self.config, self.iteration
        alpha = cfg.alpha(i) if self.supplemental is not None else 0.0
        targets = data.stage_costs
        if alpha > 0:
            targets = targets + alpha * self.supplemental.values(data.states)
        if cfg.prioritization and i > 0:
            td = td_errors(data.states, data.actions, data.next_states, targets,
                           self.critic, self.policy)
            weights = assign_priorities(td)
        else:
            weights = np.ones(len(data))

        system = build_regression(data, self.policy, self.critic_basis, targets, weights)
        q_new, ls = evaluate_policy(system, self.critic_basis, cfg)
        if not ls.rank_status.satisfied:
            self._rank_streak += 1
            log.warning("iteration %d: rank condition %s (L=%d)", i, ls.rank_status,
                        self.critic_basis.size)
            if ls.residual > cfg.max_bellman_residual:
                raise FpiAborted(f"iteration {i}: rank deficient with residual {ls.residual:.3g}")
            if self._rank_streak >= RANK_ABORT_STREAK:
                raise FpiAborted(
                    f"rank condition failed {self._rank_streak} iterations in a row "
                    f"(rank {ls.rank_status.rank} < {ls.rank_status.required})")
        else:
            self._rank_streak = 0

        probe_u = policy_actions(self.policy, self.probe_states)
        values = self.critic_basis.evaluate(self.probe_states, probe_u) @ q_new.weights
        violation = 0.0 if self._prev_values is None else float(np.max(values - self._prev_values))
        delta = float(np.max(np.abs(q_new.weights - self.critic.weights)))

        diverged = False
        try:
            new_policy = improve_policy(q_new, self.probe_states, cfg, self.policy)
        except ActorDivergence as exc:
            log.info("iteration %d: %s; keeping last stable gains", i, exc)
            new_policy, diverged = exc.last_stable, True

        diag = IterationDiagnostics(
            iteration=i, critic=q_new, actor_gains=self.policy.gains,
            weight_delta=delta, bellman_residual=ls.residual, rank_status=ls.rank_status,
            value_on_probe_grid=values, monotonicity_violation=violation,
            n_samples=len(data), batch_size=self.n_b, alpha=alpha, actor_diverged=diverged,
        )
        self.trace.append(diag)
        self._prev_values = values
        self.critic = q_new
        self.policy = new_policy
        self.policy_version += 1
        self.iteration += 1
        if i >= 1 and delta < cfg.convergence_tol:
            self.converged = True
        if cfg.batch_size_mode == "adaptive":
            self._pending_test = float(np.mean(data.stage_costs))
        return diag


def run_fpi(plant, config: FpiConfig, supp: Optional[SupplementalValue] = None, *,
            initial_gains, critic_basis: Optional[PolynomialBasis] = None,
            actor_basis: Optional[LinearStateBasis] = None,
            max_samples: Optional[int] = None):
    """Run FPI on a single-controller plant until convergence or ``i_max``.

    ``plant`` needs ``state_dim``, ``action_dim``, ``state_box``,
    ``action_scale``, ``reset(rng)``, ``step(x, u, rng)`` and
    ``is_safe(x)``. Returns ``(policy, critic, trace)``.
    """
    critic_basis = critic_basis or quadratic_basis(plant.state_dim, plant.action_dim)
    actor_basis = actor_basis or LinearStateBasis(plant.state_dim)
    seeds = np.random.SeedSequence(config.rng_seed).spawn(2)
    plant_rng, ctrl_rng = (np.random.default_rng(s) for s in seeds)
    ctrl = FpiController(config, critic_basis, actor_basis, initial_gains,
                         probe_grid(plant.state_box), plant.action_scale, ctrl_rng, supp)
    if max_samples is None:
        max_samples = (config.i_max + 1) * (2 * config.n_b_max + 1)
    x = plant.reset(plant_rng)
    for _ in range(max_samples):
        if not ctrl.learning:
            break
        u = ctrl.act(x)
        x_next = plant.step(x, u, plant_rng)
        if not plant.is_safe(x_next):
            raise SafetyViolation(f"state {np.asarray(x_next).tolist()} left the safety box")
        ctrl.observe(x, u, x_next)
        x = x_next
    return ctrl.policy, ctrl.critic, ctrl.trace


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a property check; ``margin`` is the worst violation (<= 0 passes)."""

    passed: bool
    margin: float
    detail: str = ""


def check_monotonicity(trace: Sequence[IterationDiagnostics], tol: float = 1e-6) -> CheckResult:
    """V^(i+1) <= V^(i) + tol on the probe grid for every consecutive pair."""
    if len(trace) < 2:
        raise ValueError("monotonicity needs at least two iterations")
    worst, at = -np.inf, 0
    for prev, cur in zip(trace, trace[1:]):
        v = float(np.max(cur.value_on_probe_grid - prev.value_on_probe_grid))
        if v > worst:
            worst, at = v, cur.iteration
    return CheckResult(worst <= tol, worst, f"max increase {worst:.3g} at iteration {at}")


@dataclass(frozen=True)
class ErrorBoundProbe:
    """Approximation constants: xi Q <= Q_hat <= eta Q, Q^(0) <= beta Q*, and gamma.

    The upper envelope stays finite only when eta < (gamma + 1) / gamma.
    """

    xi: float
    eta: float
    gamma: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        if self.eta < 1.0:
            raise ValueError(f"eta must be >= 1, got {self.eta}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.beta < 1.0:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.eta >= (self.gamma + 1.0) / self.gamma:
            raise ValueError(
                f"eta = {self.eta:.6g} must be below (gamma + 1) / gamma = "
                f"{(self.gamma + 1.0) / self.gamma:.6g}")

    @property
    def ratio(self) -> float:
        return self.eta * self.gamma / (1.0 + self.gamma)

    def upper_coefficient(self, iteration: int) -> float:
        r = self.ratio**iteration
        limit = self.eta / (1.0 + self.gamma - self.eta * self.gamma)
        return self.eta * self.beta * r + (1.0 - r) * limit


def check_error_bound(trace: Sequence[IterationDiagnostics], probe: ErrorBoundProbe,
                      q_star: QApprox, points, rtol: float = 1e-9) -> CheckResult:
    """xi Q* <= Q_hat^(i) <= P_i Q* at every iteration on the (x, u) ``points``.

    ``points`` stacks states and actions column-wise; rows where Q* vanishes
    are skipped. ``rtol`` absorbs floating-point round-off only.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = q_star.basis.state_dim
    xs, us = pts[:, :n], pts[:, n:]
    qs = q_star.basis.evaluate(xs, us) @ q_star.weights
    keep = qs > 1e-12 * max(1.0, float(np.max(np.abs(qs))))
    xs, us, qs = xs[keep], us[keep], qs[keep]
    worst, at = -np.inf, 0
    for d in trace:
        qh = d.critic.basis.evaluate(xs, us) @ d.critic.weights
        slack = np.maximum(probe.xi * qs - qh, qh - probe.upper_coefficient(d.iteration) * qs)
        v = float(np.max(slack / qs))
        if v > worst:
            worst, at = v, d.iteration
    return CheckResult(worst <= rtol, worst,
                       f"worst relative violation {worst:.3g} at iteration {at}")
