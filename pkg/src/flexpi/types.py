"""Value types shared across the package.

Units follow the robotic-knee convention: angles in degrees, durations in
seconds. Stiffness and damping are treated as dimensionless reals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Any, Optional

import numpy as np

if TYPE_CHECKING:
    from flexpi.approximator import LinearStateBasis, PolynomialBasis

DEFAULT_R_X = ((1.0, 0.0), (0.0, 1.0))
DEFAULT_R_U = ((0.1, 0.0, 0.0), (0.0, 0.2, 0.0), (0.0, 0.0, 0.1))


class ConfigError(ValueError):
    """Invalid configuration. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check_finite(name: str, values) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{name} must be finite, got {tuple(values)}")


@dataclass(frozen=True)
class State:
    """Per-phase observation: peak error (deg) and duration error (s)."""

    peak_error: float
    duration_error: float

    def __post_init__(self):
        _check_finite("State", (self.peak_error, self.duration_error))

    def __array__(self, dtype=None, copy=None):
        return np.array([self.peak_error, self.duration_error], dtype=dtype or float)

    @classmethod
    def from_array(cls, x) -> State:
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]))


@dataclass(frozen=True)
class Action:
    """Increment applied to an impedance setting."""

    d_stiffness: float
    d_damping: float
    d_equilibrium: float

    def __post_init__(self):
        _check_finite("Action", (self.d_stiffness, self.d_damping, self.d_equilibrium))

    def __array__(self, dtype=None, copy=None):
        return np.array(
            [self.d_stiffness, self.d_damping, self.d_equilibrium], dtype=dtype or float
        )

    @classmethod
    def from_array(cls, u) -> Action:
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass(frozen=True)
class ImpedanceSetting:
    """Stiffness K, damping B and equilibrium angle theta_e (deg)."""

    stiffness: float
    damping: float
    equilibrium_angle: float

    def __post_init__(self):
        _check_finite(
            "ImpedanceSetting", (self.stiffness, self.damping, self.equilibrium_angle)
        )
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError(
                f"stiffness and damping must be >= 0, got {self.stiffness}, {self.damping}"
            )

    def __array__(self, dtype=None, copy=None):
        return np.array(
            [self.stiffness, self.damping, self.equilibrium_angle], dtype=dtype or float
        )

    @classmethod
    def from_array(cls, v) -> ImpedanceSetting:
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True, eq=False)
class GaitSample:
    """One transition (x_k, u_k, x_{k+1}) plus replay bookkeeping.

    State and action are stored as float arrays so the same type serves the
    2-state knee controller and generic linear-quadratic test plants.
    """

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    stage_cost: float
    td_error: Optional[float] = None
    rank: Optional[int] = None
    weight: float = 1.0

    def __post_init__(self):
        for name in ("state", "action", "next_state"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.stage_cost >= 0:
            raise ValueError(f"stage_cost must be >= 0, got {self.stage_cost}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")


@dataclass(frozen=True, eq=False)
class QApprox:
    """Critic: weights over a polynomial basis in (x, u)."""

    weights: np.ndarray
    basis: PolynomialBasis

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.basis.size:
            raise ValueError(
                f"weights has length {w.shape[0]}, basis {self.basis.name!r} needs {self.basis.size}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, basis: PolynomialBasis) -> QApprox:
        return cls(np.zeros(basis.size), basis)


@dataclass(frozen=True, eq=False)
class PolicyApprox:
    """Actor: u = gains^T sigma(x), gains shaped (dim sigma, dim u)."""

    gains: np.ndarray
    basis: LinearStateBasis

    def __post_init__(self):
        g = np.array(self.gains, dtype=float)
        if g.ndim != 2 or g.shape[0] != self.basis.size:
            raise ValueError(
                f"gains must be ({self.basis.size}, m), got shape {g.shape}"
            )
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def action_dim(self) -> int:
        return self.gains.shape[1]


def check_positive_definite(matrix, path: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ConfigError(path, f"must be square, got shape {m.shape}")
    if not np.allclose(m, m.T):
        raise ConfigError(path, "must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise ConfigError(path, "must be positive definite")
    return m


def stage_cost(state, action, r_x, r_u) -> float:
    """Quadratic stage cost x'R_x x + u'R_u u."""
    x = np.asarray(state, dtype=float).reshape(-1)
    u = np.asarray(action, dtype=float).reshape(-1)
    return float(x @ np.asarray(r_x) @ x + u @ np.asarray(r_u) @ u)


_MODES = {
    "batch_size_mode": ("fixed", "adaptive"),
    "data_mode": ("batch", "incremental"),
}


@dataclass(frozen=True, eq=False)
class FpiConfig:
    """Data-preparation settings and hyperparameters for one FPI controller.

    The four switches mirror the setting matrix: batch-size mode (fixed or
    adaptive), data mode (batch or incremental), rank-based prioritization,
    and supplemental value.
    """

    batch_size_mode: str = "fixed"
    data_mode: str = "batch"
    prioritization: bool = False
    supplemental: bool = False
    n_b_initial: int = 20
    n_b_increment: int = 5
    n_b_max: Optional[int] = None  # adaptive cap, defaults to buffer_max
    buffer_max: int = 100
    alpha_base: float = 0.9
    exploration_noise_fraction: float = 0.01
    learning_rate: float = 0.1
    actor_inner_iters: int = 200
    convergence_tol: float = 1e-6
    i_max: int = 50
    rng_seed: int = 0
    rank_tol: float = 1e-10
    max_bellman_residual: float = math.inf
    r_x: Any = DEFAULT_R_X
    r_u: Any = DEFAULT_R_U

    def __post_init__(self):
        for name, allowed in _MODES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {allowed}, got {getattr(self, name)!r}")
        for name in ("n_b_initial", "n_b_increment", "buffer_max", "actor_inner_iters", "i_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.n_b_max is None:
            object.__setattr__(self, "n_b_max", self.buffer_max)
        if self.n_b_max < self.n_b_initial:
            raise ConfigError("n_b_max", "must be >= n_b_initial")
        if self.buffer_max < self.n_b_initial or self.buffer_max < self.n_b_max:
            raise ConfigError("buffer_max", "must be >= n_b_initial and n_b_max")
        if self.batch_size_mode == "adaptive" and self.data_mode != "batch":
            raise ConfigError(
                "batch_size_mode", "adaptive batch size only applies in batch data mode"
            )
        if not 0.0 < self.alpha_base < 1.0:
            raise ConfigError("alpha_base", "must lie in (0, 1)")
        if not 0.0 < self.learning_rate < 1.0:
            raise ConfigError("learning_rate", "must lie in (0, 1)")
        if self.exploration_noise_fraction < 0:
            raise ConfigError("exploration_noise_fraction", "must be >= 0")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol", "must be > 0")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed", "must be unsigned")
        if not self.rank_tol > 0:
            raise ConfigError("rank_tol", "must be > 0")
        object.__setattr__(self, "r_x", check_positive_definite(self.r_x, "r_x"))
        object.__setattr__(self, "r_u", check_positive_definite(self.r_u, "r_u"))

    def check_basis_size(self, size: int) -> None:
        """Condition 1 needs at least as many rows as critic weights."""
        if self.n_b_initial < size:
            raise ConfigError(
                "n_b_initial", f"must be >= basis size {size} for a full-rank design"
            )

    def alpha(self, iteration: int) -> float:
        """Supplemental coefficient alpha_i (zero when supplemental is off)."""
        return self.alpha_base**iteration if self.supplemental else 0.0

    def replace(self, **changes) -> FpiConfig:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        if "buffer_max" in changes and "n_b_max" not in changes and values["n_b_max"] == values["buffer_max"]:
            values["n_b_max"] = None
        values.update(changes)
        return FpiConfig(**values)

    def setting_code(self) -> str:
        """Four-letter code, e.g. ``(A)(B)(B)(A)``."""
        flags = (
            self.batch_size_mode == "adaptive",
            self.data_mode == "incremental",
            self.prioritization,
            self.supplemental,
        )
        return "".join("(B)" if f else "(A)" for f in flags)
