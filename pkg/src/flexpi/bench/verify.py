"""Property suites on the built-in linear-quadratic instances."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from flexpi.approximator import LinearStateBasis, QApprox, quadratic_basis, quadratic_weights
from flexpi.bench.oracle import (LQInstance, riccati_oracle,
                                 scalar_instance, spectral_radius, two_state_instance)
from flexpi.engine import (ErrorBoundProbe, IterationDiagnostics, check_error_bound,
                           check_monotonicity, extract_supplemental, probe_grid, run_fpi)
from flexpi.plant import LinearQuadraticPlant
from flexpi.replay import assign_priorities
from flexpi.types import FpiConfig


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    diagnostic: bool = False  # reported but never fails the suite

    def line(self) -> str:
        tag = "DIAG" if self.diagnostic else ("PASS" if self.passed else "FAIL")
        return f"[{tag}] {self.name}: {self.detail}"


class _NoisyPlant(LinearQuadraticPlant):
    """LQ plant with uniform relative sensor noise on the next state."""

    def __init__(self, a, b, fraction: float, **kw):
        super().__init__(a, b, **kw)
        self.fraction = fraction

    def step(self, x, u, rng=None):
        nxt = super().step(x, u)
        return nxt + self.fraction * np.abs(nxt) * rng.uniform(-1.0, 1.0, nxt.shape)


@dataclass
class LQRun:
    instance: LQInstance
    gains: np.ndarray  # feedback F with u = F x
    critic: QApprox
    trace: List[IterationDiagnostics]
    seconds: float = 0.0

    @property
    def gain_error(self) -> float:
        return float(np.max(np.abs(self.gains - self.instance.optimal_feedback)))

    @property
    def critic_error(self) -> float:
        return float(np.max(np.abs(self.critic.weights - quadratic_weights(self.instance.q_star()))))


def lq_config(instance: LQInstance, n_b: int = 40, **changes) -> FpiConfig:
    """Noise-free, exact-capacity settings used by every LQ check."""
    base = dict(n_b_initial=n_b, buffer_max=n_b, r_x=instance.q, r_u=instance.r,
                exploration_noise_fraction=0.1, learning_rate=0.3, actor_inner_iters=2000,
                convergence_tol=1e-9, i_max=25, rng_seed=0)
    base.update(changes)
    return FpiConfig(**base)


def run_lq(instance: LQInstance, config: Optional[FpiConfig] = None, supplemental=None,
           sensor_noise: float = 0.0) -> LQRun:
    config = config or lq_config(instance)
    if sensor_noise > 0:
        plant = _NoisyPlant(instance.a, instance.b, sensor_noise)
    else:
        plant = LinearQuadraticPlant(instance.a, instance.b)
    t0 = time.perf_counter()
    policy, critic, trace = run_fpi(plant, config, supplemental,
                                    initial_gains=instance.initial_feedback.T,
                                    critic_basis=quadratic_basis(instance.state_dim, instance.action_dim),
                                    actor_basis=LinearStateBasis(instance.state_dim))
    return LQRun(instance, policy.gains.T, critic, trace, time.perf_counter() - t0)


def pair_grid(instance: LQInstance, points: int = 10) -> np.ndarray:
    """Uniform (x, u) grid over [-1, 1]^(n+m)."""
    d = instance.state_dim + instance.action_dim
    return probe_grid(np.tile([-1.0, 1.0], (d, 1)), points)


def measure_error_probe(run: LQRun, points: Optional[np.ndarray] = None) -> ErrorBoundProbe:
    """Measure (xi, eta, gamma, beta) from a finished LQ run.

    xi and eta bracket Q_hat^(i) / Q^(i) against each iterate's exact Q,
    beta bounds Q^(0) / Q*, and gamma is the largest
    min_u Q*(x+, u) / U(x, u) over the grid.
    """
    inst = run.instance
    pts = pair_grid(inst) if points is None else np.asarray(points, dtype=float)
    n = inst.state_dim
    xs, us = pts[:, :n], pts[:, n:]
    z = pts
    q_star = np.einsum("pi,ij,pj->p", z, inst.q_star(), z)
    keep = q_star > 1e-12
    z, xs, us, q_star = z[keep], xs[keep], us[keep], q_star[keep]
    lo, hi, beta = math.inf, -math.inf, 1.0
    for d in run.trace:
        h = inst.q_policy(d.actor_gains.T)
        exact = np.einsum("pi,ij,pj->p", z, h, z)
        approx = d.critic.basis.evaluate(xs, us) @ d.critic.weights
        lo, hi = min(lo, float(np.min(approx / exact))), max(hi, float(np.max(approx / exact)))
        if d.iteration == 0:
            beta = max(1.0, float(np.max(exact / q_star)))
    nxt = xs @ inst.a.T + us @ inst.b.T
    v_next = np.einsum("pi,ij,pj->p", nxt, inst.p, nxt)
    u_cost = np.einsum("pi,ij,pj->p", xs, inst.q, xs) + np.einsum("pi,ij,pj->p", us, inst.r, us)
    gamma = float(np.max(v_next / u_cost))
    return ErrorBoundProbe(xi=min(1.0, lo), eta=max(1.0, hi), gamma=gamma, beta=beta)


def q_star_approx(instance: LQInstance) -> QApprox:
    basis = quadratic_basis(instance.state_dim, instance.action_dim)
    return QApprox(quadratic_weights(instance.q_star()), basis)


# suites -------------------------------------------------------------------

def suite_riccati(**_) -> List[Check]:
    out = []
    gain, p = riccati_oracle(1.0, 1.0, 1.0, 1.0)
    golden = (1 + math.sqrt(5)) / 2
    err = max(abs(p[0, 0] - golden), abs(gain[0, 0] - golden / (1 + golden)))
    out.append(Check("riccati scalar", err < 1e-9, f"p={p[0, 0]:.9f} gain={gain[0, 0]:.9f} err={err:.2e}"))
    inst = two_state_instance()
    a, b, q, r = inst.a, inst.b, inst.q, inst.r
    resid = q + a.T @ inst.p @ a - a.T @ inst.p @ b @ np.linalg.solve(r + b.T @ inst.p @ b, b.T @ inst.p @ a) - inst.p
    res = float(np.max(np.abs(resid)))
    rho = spectral_radius(a - b @ inst.gain)
    out.append(Check("riccati two-state", res < 1e-9 and rho < 1,
                     f"DARE residual {res:.2e}, closed-loop radius {rho:.4f}"))
    return out


def suite_lq(**_) -> List[Check]:
    s = run_lq(scalar_instance())
    t = run_lq(two_state_instance())
    return [
        Check("lq scalar gain", s.gain_error < 1e-3 and s.critic_error < 1e-3,
              f"gain {-s.gains[0, 0]:.6f} (err {s.gain_error:.2e}), critic err {s.critic_error:.2e}"),
        Check("lq two-state gain", t.gain_error < 1e-4 and len(t.trace) <= 25,
              f"max-abs gain err {t.gain_error:.2e} in {len(t.trace)} iterations"),
    ]


def suite_monotonicity(noise: float = 0.0, **_) -> List[Check]:
    run = run_lq(two_state_instance())
    res = check_monotonicity(run.trace, 1e-6)
    out = [Check("monotonicity two-state", res.passed, res.detail)]
    if noise > 0:
        noisy = run_lq(two_state_instance(), sensor_noise=noise)
        nres = check_monotonicity(noisy.trace, 1e-6)
        out.append(Check(f"monotonicity with {noise:.0%} sensor noise",
                         nres.passed, f"{nres.detail} (outside the exact regime)", diagnostic=True))
    return out


def suite_stability(**_) -> List[Check]:
    inst = two_state_instance()
    run = run_lq(inst)
    radii = [spectral_radius(inst.a + inst.b @ d.actor_gains.T) for d in run.trace]
    radii.append(spectral_radius(inst.a + inst.b @ run.gains))
    worst = max(radii)
    return [Check("stability two-state", worst < 1.0,
                  f"max spectral radius {worst:.6f} over {len(radii)} policies")]


def suite_supplemental(**_) -> List[Check]:
    inst = scalar_instance()
    prior = run_lq(inst)
    supp = extract_supplemental(prior.critic, 0.9)
    # alpha_i = 0.9^i needs ~200 iterations to fall below 1e-9
    run = run_lq(inst, lq_config(inst, supplemental=True, i_max=250), supplemental=supp)
    diff = float(np.max(np.abs(run.gains - prior.gains)))
    wdiff = float(np.max(np.abs(run.critic.weights - prior.critic.weights)))
    return [Check("supplemental invariance scalar", diff < 1e-3 and wdiff < 1e-3,
                  f"gain diff {diff:.2e}, critic diff {wdiff:.2e}")]


def suite_error_bound(**_) -> List[Check]:
    inst = scalar_instance()
    run = run_lq(inst)
    try:
        probe = measure_error_probe(run)
    except ValueError as exc:
        return [Check("error bound scalar", False, f"probe rejected: {exc}")]
    res = check_error_bound(run.trace, probe, q_star_approx(inst), pair_grid(inst))
    return [Check("error bound scalar", res.passed,
                  f"xi={probe.xi:.6f} eta={probe.eta:.6f} gamma={probe.gamma:.4f} "
                  f"beta={probe.beta:.4f}; {res.detail}")]


def suite_per(**_) -> List[Check]:
    lam = assign_priorities([3.0, 1.0, 2.0])
    exact = np.array([6, 2, 3]) / 11
    err = float(np.max(np.abs(lam - exact)))
    rng = np.random.default_rng(0)
    worst = max(abs(assign_priorities(rng.normal(size=rng.integers(1, 200))).sum() - 1.0)
                for _ in range(1000))
    return [Check("per weights [3,1,2]", err < 1e-15, f"lambda={np.round(lam, 6).tolist()}"),
            Check("per normalization", worst < 1e-12, f"max |sum - 1| = {worst:.2e} over 1000 vectors")]


SUITES: Dict[str, Callable[..., List[Check]]] = {
    "riccati": suite_riccati,
    "lq": suite_lq,
    "monotonicity": suite_monotonicity,
    "stability": suite_stability,
    "supplemental": suite_supplemental,
    "error-bound": suite_error_bound,
    "per": suite_per,
}


@dataclass
class VerifyReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed or c.diagnostic for c in self.checks)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append("verify: " + ("all checks passed" if self.passed else "FAILURES"))
        return "\n".join(lines)


def verify(suite: str = "all", noise: float = 0.0) -> VerifyReport:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    names = list(SUITES) if suite == "all" else [suite]
    report = VerifyReport()
    for name in names:
        report.checks.extend(SUITES[name](noise=noise))
    return report
