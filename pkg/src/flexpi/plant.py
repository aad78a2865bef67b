"""Plants: a surrogate 4-phase knee gait model and a linear-quadratic reference.

The surrogate replaces a musculoskeletal simulation with a per-phase
sensitivity model. For phase m and impedance I,

    r_m = C_m dI + kappa * C_m (dI * dI),   dI = I - I*_m
    x_m = r_m + c * x_{m-1}                 (m >= 2)

so x = 0 exactly when every phase sits at its optimal impedance.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from flexpi.approximator import LinearStateBasis, knee_basis
from flexpi.engine import (FpiAborted, FpiController, SupplementalValue, extract_supplemental,
                           probe_grid)
from flexpi.types import FpiConfig, ImpedanceSetting

log = logging.getLogger(__name__)

N_PHASES = 4
SIGMA_FACTOR = 1.0
PHASE_NAMES = ("STF", "STE", "SWF", "SWE")
TRACE_HEADER = ("cycle", "phase", "dpeak_offset", "dduration_offset")


def torque(impedance: ImpedanceSetting, angle: float, velocity: float) -> float:
    """Joint torque T = K (theta - theta_e) + B omega."""
    return impedance.stiffness * (angle - impedance.equilibrium_angle) + impedance.damping * velocity


def apply_impedance_update(current: ImpedanceSetting, action) -> tuple[ImpedanceSetting, bool]:
    """I_{k+1} = I_k + u_k with stiffness and damping clamped at zero.

    Returns the new setting and whether a clamp happened.
    """
    new, clamped = _update_array(np.asarray(current, dtype=float), np.asarray(action, dtype=float))
    if clamped:
        log.info("impedance clamped at zero: %s + %s", current, np.asarray(action).tolist())
    return ImpedanceSetting.from_array(new), clamped


def _update_array(current: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, bool]:
    new = current + action
    clamped = bool(new[0] < 0 or new[1] < 0)
    new[:2] = np.maximum(new[:2], 0.0)
    return new, clamped


@dataclass(frozen=True)
class NoiseModel:
    """Noise injected into the surrogate.

    ``uniform_actuator`` perturbs each impedance deviation by up to
    ``fraction`` of its magnitude before the response; ``uniform_sensor``
    does the same to each returned state component. ``recorded_trace``
    adds per-cycle, per-phase state offsets (cycled when exhausted).
    """

    kind: str = "none"
    fraction: float = 0.0
    trace: Optional[np.ndarray] = None  # (cycles, phases, 2)

    def __post_init__(self):
        if self.kind not in ("none", "uniform_actuator", "uniform_sensor", "recorded_trace"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.fraction < 0:
            raise ValueError("noise fraction must be >= 0")
        if self.kind == "recorded_trace" and self.trace is None:
            raise ValueError("recorded_trace noise needs a trace")

    @classmethod
    def from_trace_file(cls, path) -> NoiseModel:
        return cls("recorded_trace", trace=load_trace(path))


@dataclass(frozen=True)
class TrialProtocol:
    peak_upper: float = 8.0
    peak_lower: float = 1.0
    duration_upper: float = 0.25
    duration_lower: float = 0.03
    success_streak: int = 10
    max_cycles: int = 500

    def __post_init__(self):
        if not 0 < self.peak_lower < self.peak_upper:
            raise ValueError("need 0 < peak_lower < peak_upper")
        if not 0 < self.duration_lower < self.duration_upper:
            raise ValueError("need 0 < duration_lower < duration_upper")
        if self.success_streak <= 0 or self.max_cycles < self.success_streak:
            raise ValueError("need 0 < success_streak <= max_cycles")

    @property
    def state_box(self) -> np.ndarray:
        return np.array([[-self.peak_upper, self.peak_upper],
                         [-self.duration_upper, self.duration_upper]])

    def is_safe(self, states) -> bool:
        s = np.atleast_2d(states)
        return bool(np.all(np.abs(s[:, 0]) <= self.peak_upper)
                    and np.all(np.abs(s[:, 1]) <= self.duration_upper))

    def in_target(self, states) -> bool:
        s = np.atleast_2d(states)
        return bool(np.all(np.abs(s[:, 0]) < self.peak_lower)
                    and np.all(np.abs(s[:, 1]) < self.duration_lower))


@dataclass(frozen=True, eq=False)
class PhaseModel:
    target_peak: float
    target_duration: float
    optimal_impedance: np.ndarray
    sensitivity: np.ndarray

    def __post_init__(self):
        opt = np.asarray(self.optimal_impedance, dtype=float).reshape(3)
        c = np.asarray(self.sensitivity, dtype=float)
        if c.shape != (2, 3):
            raise ValueError(f"sensitivity must be 2x3, got {c.shape}")
        if np.linalg.matrix_rank(c) < 2:
            raise ValueError("sensitivity must have full row rank")
        ImpedanceSetting.from_array(opt)
        object.__setattr__(self, "optimal_impedance", opt)
        object.__setattr__(self, "sensitivity", c)


@dataclass(frozen=True, eq=False)
class SurrogateGaitPlant:
    phases: Sequence[PhaseModel]
    curvature_coeff: float = 0.05
    cross_phase_coupling: float = 0.1
    noise: NoiseModel = field(default_factory=NoiseModel)
    impedance_low: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -10.0]))
    impedance_high: np.ndarray = field(default_factory=lambda: np.array([10.0, 2.0, 70.0]))

    def __post_init__(self):
        if len(self.phases) != N_PHASES:
            raise ValueError(f"need {N_PHASES} phases, got {len(self.phases)}")
        if self.curvature_coeff < 0:
            raise ValueError("curvature_coeff must be >= 0")
        if not 0 <= self.cross_phase_coupling < 1:
            raise ValueError("cross_phase_coupling must lie in [0, 1)")
        object.__setattr__(self, "impedance_low", np.asarray(self.impedance_low, dtype=float))
        object.__setattr__(self, "impedance_high", np.asarray(self.impedance_high, dtype=float))

    @property
    def optimal(self) -> np.ndarray:
        return np.array([p.optimal_impedance for p in self.phases])

    def in_impedance_box(self, impedances) -> bool:
        imp = np.asarray(impedances, dtype=float)
        return bool(np.all(imp >= self.impedance_low) and np.all(imp <= self.impedance_high))

    def response(self, impedances, rng: Optional[np.random.Generator] = None,
                 cycle: int = 0) -> np.ndarray:
        """Per-phase states (4, 2) for impedances (4, 3); noise needs ``rng``."""
        imp = np.asarray(impedances, dtype=float).reshape(N_PHASES, 3)
        noise = self.noise
        out = np.empty((N_PHASES, 2))
        prev = np.zeros(2)
        for m, ph in enumerate(self.phases):
            d = imp[m] - ph.optimal_impedance
            if noise.kind == "uniform_actuator" and noise.fraction > 0:
                d = d + noise.fraction * np.abs(d) * rng.uniform(-1.0, 1.0, 3)
            x = ph.sensitivity @ d + self.curvature_coeff * (ph.sensitivity @ (d * d))
            if m > 0:
                x = x + self.cross_phase_coupling * prev
            prev = x
            out[m] = x
        if noise.kind == "uniform_sensor" and noise.fraction > 0:
            out = out + noise.fraction * np.abs(out) * rng.uniform(-1.0, 1.0, out.shape)
        elif noise.kind == "recorded_trace":
            out = out + noise.trace[cycle % noise.trace.shape[0]]
        return out


def gait_step(plant: SurrogateGaitPlant, impedances, rng: np.random.Generator,
              cycle: int = 0) -> List:
    """One gait cycle: the per-phase (peak error, duration error) states."""
    from flexpi.types import State

    imp = np.array([np.asarray(i, dtype=float) for i in impedances])
    if not plant.in_impedance_box(imp):
        raise ValueError("impedance outside the configured box")
    return [State.from_array(x) for x in plant.response(imp, rng, cycle)]


def default_phases() -> List[PhaseModel]:
    """Shipped sensitivities: distinct full-row-rank 2x3 matrices per phase."""
    return [
        PhaseModel(15.0, 0.15, [3.0, 1.0, 12.0], [[-1.2, -1.5, 0.4], [0.15, -0.10, 0.02]]),
        PhaseModel(5.0, 0.35, [4.0, 1.2, 5.0], [[-0.9, -1.8, 0.8], [-0.12, 0.10, 0.04]]),
        PhaseModel(60.0, 0.25, [2.5, 0.8, 55.0], [[-1.4, -1.2, 0.1], [0.10, -0.12, -0.01]]),
        PhaseModel(5.0, 0.20, [2.0, 1.0, 2.0], [[-1.0, -1.6, 0.9], [0.14, -0.08, 0.05]]),
    ]


def linear_initial_gains(phase: PhaseModel, scale: float, sigma_scale) -> np.ndarray:
    """Weak admissible actor u = -scale * pinv(C) x, as actor gains over sigma."""
    return -scale * (np.asarray(sigma_scale, dtype=float)[:, None]
                     * np.linalg.pinv(phase.sensitivity).T)


class LinearQuadraticPlant:
    """x+ = A x + B u, the exactly solvable reference plant."""

    def __init__(self, a, b, state_box=None, action_scale=None, initial_state=None,
                 safety_limit: float = 1e6):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(self.a.shape[0], -1)
        self.state_dim, self.action_dim = self.b.shape
        self.state_box = (np.tile([-1.0, 1.0], (self.state_dim, 1)) if state_box is None
                          else np.asarray(state_box, dtype=float))
        self.action_scale = (np.ones(self.action_dim) if action_scale is None
                             else np.asarray(action_scale, dtype=float))
        self.initial_state = None if initial_state is None else np.asarray(initial_state, dtype=float)
        self.safety_limit = safety_limit

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        if self.initial_state is not None:
            return self.initial_state.copy()
        return rng.uniform(self.state_box[:, 0], self.state_box[:, 1])

    def step(self, x, u, rng=None) -> np.ndarray:
        return self.a @ np.asarray(x, dtype=float) + self.b @ np.asarray(u, dtype=float)

    def is_safe(self, x) -> bool:
        return bool(np.all(np.abs(x) <= self.safety_limit))


@dataclass(eq=False)
class TrialResult:
    success: bool
    cycles_used: int
    rmse_before: float
    rmse_after: float
    final_impedance: np.ndarray  # (4, 3)
    reason: str
    controllers: List[FpiController] = field(default_factory=list, repr=False)
    states: Optional[np.ndarray] = field(default=None, repr=False)  # (cycles, 4, 2)

    @property
    def final_critics(self):
        return [c.critic for c in self.controllers]


def _rmse(states) -> float:
    return float(np.sqrt(np.mean(np.asarray(states)[:, 0] ** 2)))


def trial_streams(rng_seed: int, trial: int):
    """Independent RNG streams: plant noise, then one per phase controller."""
    seeds = np.random.SeedSequence([rng_seed, trial]).spawn(1 + N_PHASES)
    return [np.random.default_rng(s) for s in seeds]


def run_trial(plant: SurrogateGaitPlant, config: FpiConfig, protocol: TrialProtocol,
              initial_impedance, rng_seed: int, *, trial: int = 0,
              supplemental: Optional[Sequence[SupplementalValue]] = None,
              initial_gain_scale: float = 0.05, initial_gains=None,
              record_states: bool = False) -> TrialResult:
    """Tune all four phases with FPI in the loop until success or failure.

    Success: every phase inside the lower bounds for ``success_streak``
    consecutive cycles. Failure: a safety-bound breach, an aborted
    controller, or running out of cycles.
    """
    imp = np.array([np.asarray(i, dtype=float) for i in initial_impedance]).reshape(N_PHASES, 3)
    if not plant.in_impedance_box(imp):
        raise ValueError("initial impedance outside the configured box")
    streams = trial_streams(rng_seed, trial)
    plant_rng = streams[0]
    sigma = LinearStateBasis(2, SIGMA_FACTOR * np.array([protocol.peak_upper, protocol.duration_upper]))
    probes = probe_grid(protocol.state_box)
    critic = knee_basis()
    controllers = []
    for m in range(N_PHASES):
        gains = (initial_gains[m] if initial_gains is not None
                 else linear_initial_gains(plant.phases[m], initial_gain_scale, sigma.scale))
        supp = supplemental[m] if supplemental is not None else None
        controllers.append(FpiController(config, critic, sigma, gains, probes, imp[m],
                                         streams[1 + m], supp))

    history = []
    first = prev_x = prev_u = None
    streak, reason = 0, "cycle limit"
    success, cycles = False, protocol.max_cycles
    for k in range(1, protocol.max_cycles + 1):
        x = plant.response(imp, plant_rng, cycle=k - 1)
        history.append(x)
        if first is None:
            first = x
        if not protocol.is_safe(x):
            cycles, reason = k, "safety bound"
            break
        streak = streak + 1 if protocol.in_target(x) else 0
        if streak >= protocol.success_streak:
            success, cycles, reason = True, k, "success"
            break
        try:
            if prev_x is not None:
                for m, ctrl in enumerate(controllers):
                    ctrl.observe(prev_x[m], prev_u[m], x[m])
        except FpiAborted as exc:
            cycles, reason = k, f"aborted: {exc}"
            break
        u = np.array([ctrl.act(x[m]) for m, ctrl in enumerate(controllers)])
        applied = np.empty_like(u)
        for m in range(N_PHASES):
            new, _ = _update_array(imp[m], u[m])
            new = np.clip(new, plant.impedance_low, plant.impedance_high)
            applied[m] = new - imp[m]
            imp[m] = new
        prev_x, prev_u = x, applied

    return TrialResult(
        success=success, cycles_used=cycles, rmse_before=_rmse(first),
        rmse_after=_rmse(history[-1]), final_impedance=imp.copy(), reason=reason,
        controllers=controllers, states=np.array(history) if record_states else None,
    )


def pretrain_supplemental(plant: SurrogateGaitPlant, config: FpiConfig, protocol: TrialProtocol,
                          initial_impedance, rng_seed: int, cycles: int, *, trial: int = 0,
                          initial_gain_scale: float = 0.05) -> List[SupplementalValue]:
    """Supplemental values from a prior naive FPI session.

    The session runs fixed-size batch FPI without prioritization for
    ``cycles`` gait cycles (ending early only on a safety breach or abort);
    each phase's final critic becomes that phase's V.
    """
    naive = config.replace(batch_size_mode="fixed", data_mode="batch",
                           prioritization=False, supplemental=False)
    budget = TrialProtocol(protocol.peak_upper, protocol.peak_lower, protocol.duration_upper,
                           protocol.duration_lower, success_streak=cycles, max_cycles=cycles)
    prior = run_trial(plant, naive, budget, initial_impedance, rng_seed, trial=trial,
                      initial_gain_scale=initial_gain_scale)
    log.info("supplemental pretraining ended after %d cycles: %s", prior.cycles_used, prior.reason)
    return [extract_supplemental(q, config.alpha_base) for q in prior.final_critics]


def sample_initial_impedance(plant: SurrogateGaitPlant, protocol: TrialProtocol,
                             rng: np.random.Generator, spread, max_tries: int = 1000) -> np.ndarray:
    """Random start around the optimum whose noise-free response is safe."""
    spread = np.asarray(spread, dtype=float)
    opt = plant.optimal
    for _ in range(max_tries):
        imp = opt + spread * rng.uniform(-1.0, 1.0, opt.shape)
        imp = np.clip(imp, plant.impedance_low, plant.impedance_high)
        quiet = SurrogateGaitPlant(plant.phases, plant.curvature_coeff, plant.cross_phase_coupling,
                                   NoiseModel(), plant.impedance_low, plant.impedance_high)
        if protocol.is_safe(quiet.response(imp)):
            return imp
    raise RuntimeError("could not sample a safe initial impedance")


def load_trace(path) -> np.ndarray:
    """Read a recorded-trace CSV into an array (cycles, 4, 2)."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise ValueError(f"trace header must be {','.join(TRACE_HEADER)}")
        for row in reader:
            rows[(int(row["cycle"]), int(row["phase"]))] = (
                float(row["dpeak_offset"]), float(row["dduration_offset"]))
    if not rows:
        raise ValueError(f"empty trace file {path}")
    n = max(c for c, _ in rows) + 1
    out = np.zeros((n, N_PHASES, 2))
    for (c, p), v in rows.items():
        if not 0 <= p < N_PHASES:
            raise ValueError(f"phase index {p} out of range")
        out[c, p] = v
    return out


def synthetic_trace(cycles: int, rng: np.random.Generator, peak_sd: float = 0.3,
                    duration_sd: float = 0.008, smoothing: float = 0.8) -> np.ndarray:
    """Smoothed random walk standing in for gait-to-gait human variance."""
    out = np.zeros((cycles, N_PHASES, 2))
    level = np.zeros((N_PHASES, 2))
    sd = np.array([peak_sd, duration_sd])
    for c in range(cycles):
        level = smoothing * level + (1 - smoothing) * rng.normal(0.0, 1.0, level.shape) * sd * 3
        out[c] = level
    return out


def write_trace(path, trace: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for c in range(trace.shape[0]):
            for p in range(trace.shape[1]):
                w.writerow([c, p, f"{trace[c, p, 0]:.9g}", f"{trace[c, p, 1]:.9g}"])
