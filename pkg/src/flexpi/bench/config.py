"""Experiment configuration: YAML loading and validation with field paths."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from flexpi.plant import NoiseModel, PhaseModel, SurrogateGaitPlant, TrialProtocol, load_trace
from flexpi.types import ConfigError, FpiConfig

_FPI_FIELDS = {f.name for f in dataclasses.fields(FpiConfig)}
_NOISE_KINDS = ("none", "uniform_sensor", "uniform_actuator", "recorded_trace")


def default_config_path() -> Path:
    return Path(str(resources.files("flexpi.bench").joinpath("default.yaml")))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    fraction: float = 0.0
    path: Optional[str] = None

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "recorded_trace":
            return f"trace:{Path(self.path).name}"
        return f"{self.kind}:{self.fraction:g}"

    def build(self) -> NoiseModel:
        if self.kind == "recorded_trace":
            return NoiseModel("recorded_trace", trace=load_trace(self.path))
        return NoiseModel(self.kind, self.fraction)


@dataclass(frozen=True, eq=False)
class Cell:
    cell_id: str
    fpi: FpiConfig


@dataclass(frozen=True, eq=False)
class SurrogateSpec:
    phases: List[PhaseModel]
    curvature_coeff: float = 0.05
    cross_phase_coupling: float = 0.1
    impedance_low: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -10.0]))
    impedance_high: np.ndarray = field(default_factory=lambda: np.array([10.0, 2.0, 70.0]))
    initial_spread: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.4, 3.0]))
    initial_gain_scale: float = 0.05
    supplemental_pretrain_cycles: int = 200

    kind = "surrogate"

    def build(self, noise: Optional[NoiseModel] = None) -> SurrogateGaitPlant:
        return SurrogateGaitPlant(self.phases, self.curvature_coeff, self.cross_phase_coupling,
                                  noise or NoiseModel(), self.impedance_low, self.impedance_high)


@dataclass(frozen=True, eq=False)
class LinearQuadraticSpec:
    a: np.ndarray
    b: np.ndarray
    initial_gains: np.ndarray  # (n, m): u = gains' x
    state_box: Optional[np.ndarray] = None

    kind = "linear_quadratic"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    plant: Any  # SurrogateSpec | LinearQuadraticSpec
    fpi: FpiConfig
    protocol: TrialProtocol
    cells: List[Cell]
    noise: List[NoiseSpec]
    trials: int = 30
    output: str = "results"
    rng_seed: int = 0
    source: Optional[Path] = None


def _section(raw: Dict, key: str, path: str, required: bool = True) -> Dict:
    if key not in raw:
        if required:
            raise ConfigError(f"{path}{key}", "missing section")
        return {}
    val = raw[key]
    if not isinstance(val, dict):
        raise ConfigError(f"{path}{key}", "must be a mapping")
    return val


def _reject_unknown(raw: Dict, allowed, path: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def _array(value, path: str, shape=None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, f"must be numeric, got {value!r}") from None
    if shape is not None and arr.shape != shape:
        raise ConfigError(path, f"must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "must be finite")
    return arr


def _build_fpi(values: Dict, path: str) -> FpiConfig:
    _reject_unknown(values, _FPI_FIELDS, path)
    try:
        return FpiConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc.path}", str(exc).split(": ", 1)[1]) from None
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_protocol(raw: Dict) -> TrialProtocol:
    names = ("peak_upper", "peak_lower", "duration_upper", "duration_lower")
    _reject_unknown(raw, names + ("success_streak", "max_cycles"), "protocol")
    for name in names:
        if name not in raw:
            raise ConfigError(f"protocol.{name}", "missing (all four bounds are mandatory)")
    v = {k: float(raw[k]) for k in names}
    if not 0 < v["peak_lower"]:
        raise ConfigError("protocol.peak_lower", "must be > 0")
    if not v["peak_lower"] < v["peak_upper"]:
        raise ConfigError("protocol.peak_lower", "must be below protocol.peak_upper")
    if not 0 < v["duration_lower"]:
        raise ConfigError("protocol.duration_lower", "must be > 0")
    if not v["duration_lower"] < v["duration_upper"]:
        raise ConfigError("protocol.duration_lower", "must be below protocol.duration_upper")
    streak = int(raw.get("success_streak", 10))
    max_cycles = int(raw.get("max_cycles", 500))
    if streak <= 0:
        raise ConfigError("protocol.success_streak", "must be positive")
    if max_cycles < streak:
        raise ConfigError("protocol.max_cycles", "must be >= success_streak")
    return TrialProtocol(success_streak=streak, max_cycles=max_cycles, **v)


def _parse_surrogate(raw: Dict) -> SurrogateSpec:
    allowed = ("kind", "curvature_coeff", "cross_phase_coupling", "impedance_low",
               "impedance_high", "initial_spread", "initial_gain_scale",
               "supplemental_pretrain_cycles", "phases")
    _reject_unknown(raw, allowed, "plant")
    phases_raw = raw.get("phases")
    if not isinstance(phases_raw, list) or len(phases_raw) != 4:
        raise ConfigError("plant.phases", "must list exactly 4 phases")
    phases = []
    for i, ph in enumerate(phases_raw):
        path = f"plant.phases[{i}]"
        if not isinstance(ph, dict):
            raise ConfigError(path, "must be a mapping")
        _reject_unknown(ph, ("target_peak", "target_duration", "optimal_impedance", "sensitivity"), path)
        for key in ("target_peak", "target_duration", "optimal_impedance", "sensitivity"):
            if key not in ph:
                raise ConfigError(f"{path}.{key}", "missing")
        opt = _array(ph["optimal_impedance"], f"{path}.optimal_impedance", (3,))
        if opt[0] < 0 or opt[1] < 0:
            raise ConfigError(f"{path}.optimal_impedance", "stiffness and damping must be >= 0")
        c = _array(ph["sensitivity"], f"{path}.sensitivity", (2, 3))
        if np.linalg.matrix_rank(c) < 2:
            raise ConfigError(f"{path}.sensitivity", "must have full row rank")
        phases.append(PhaseModel(float(ph["target_peak"]), float(ph["target_duration"]), opt, c))

    spec = SurrogateSpec(phases)
    kw: Dict[str, Any] = {}
    if "curvature_coeff" in raw:
        kw["curvature_coeff"] = float(raw["curvature_coeff"])
        if kw["curvature_coeff"] < 0:
            raise ConfigError("plant.curvature_coeff", "must be >= 0")
    if "cross_phase_coupling" in raw:
        kw["cross_phase_coupling"] = float(raw["cross_phase_coupling"])
        if not 0 <= kw["cross_phase_coupling"] < 1:
            raise ConfigError("plant.cross_phase_coupling", "must lie in [0, 1)")
    for key in ("impedance_low", "impedance_high", "initial_spread"):
        if key in raw:
            kw[key] = _array(raw[key], f"plant.{key}", (3,))
    low = kw.get("impedance_low", spec.impedance_low)
    high = kw.get("impedance_high", spec.impedance_high)
    if np.any(low >= high):
        raise ConfigError("plant.impedance_low", "must be below plant.impedance_high")
    if low[0] < 0 or low[1] < 0:
        raise ConfigError("plant.impedance_low", "stiffness and damping bounds must be >= 0")
    for i, ph in enumerate(phases):
        if np.any(ph.optimal_impedance < low) or np.any(ph.optimal_impedance > high):
            raise ConfigError(f"plant.phases[{i}].optimal_impedance", "outside the impedance box")
    if np.any(kw.get("initial_spread", spec.initial_spread) < 0):
        raise ConfigError("plant.initial_spread", "must be >= 0")
    if "initial_gain_scale" in raw:
        kw["initial_gain_scale"] = float(raw["initial_gain_scale"])
        if kw["initial_gain_scale"] < 0:
            raise ConfigError("plant.initial_gain_scale", "must be >= 0")
    if "supplemental_pretrain_cycles" in raw:
        kw["supplemental_pretrain_cycles"] = int(raw["supplemental_pretrain_cycles"])
        if kw["supplemental_pretrain_cycles"] <= 0:
            raise ConfigError("plant.supplemental_pretrain_cycles", "must be positive")
    return dataclasses.replace(spec, **kw)


def _parse_lq(raw: Dict) -> LinearQuadraticSpec:
    _reject_unknown(raw, ("kind", "a", "b", "initial_gains", "state_box"), "plant")
    for key in ("a", "b", "initial_gains"):
        if key not in raw:
            raise ConfigError(f"plant.{key}", "missing")
    a = np.atleast_2d(_array(raw["a"], "plant.a"))
    n = a.shape[0]
    if a.shape != (n, n):
        raise ConfigError("plant.a", "must be square")
    b = _array(raw["b"], "plant.b")
    if b.size % n:
        raise ConfigError("plant.b", f"must have {n} rows")
    b = b.reshape(n, -1)
    g = _array(raw["initial_gains"], "plant.initial_gains").reshape(n, b.shape[1])
    if np.max(np.abs(np.linalg.eigvals(a + b @ g.T))) >= 1.0:
        raise ConfigError("plant.initial_gains", "must be stabilizing (spectral radius < 1)")
    box = None
    if "state_box" in raw:
        box = _array(raw["state_box"], "plant.state_box", (n, 2))
        if np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError("plant.state_box", "each row must be [low, high] with low < high")
    return LinearQuadraticSpec(a, b, g, box)


def _parse_noise(raw, base: Path) -> List[NoiseSpec]:
    if raw is None:
        return [NoiseSpec()]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("noise", "must be a non-empty list")
    out = []
    for i, item in enumerate(raw):
        path = f"noise[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(path, "must be a mapping")
        _reject_unknown(item, ("kind", "fraction", "path"), path)
        kind = item.get("kind", "none")
        if kind not in _NOISE_KINDS:
            raise ConfigError(f"{path}.kind", f"must be one of {_NOISE_KINDS}")
        frac = float(item.get("fraction", 0.0))
        if frac < 0:
            raise ConfigError(f"{path}.fraction", "must be >= 0")
        trace = None
        if kind == "recorded_trace":
            if "path" not in item:
                raise ConfigError(f"{path}.path", "recorded_trace noise needs a trace file")
            trace = Path(item["path"])
            if not trace.is_absolute():
                trace = base / trace
            if not trace.is_file():
                raise ConfigError(f"{path}.path", f"file not found: {trace}")
            trace = str(trace)
        out.append(NoiseSpec(kind, frac, trace))
    return out


def parse_config(raw: Dict, base_dir: Path = Path("."), source: Optional[Path] = None) -> ExperimentConfig:
    """Validate a parsed YAML mapping into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _reject_unknown(raw, ("rng_seed", "trials", "output", "plant", "protocol", "fpi", "cells",
                          "noise"), "")
    plant_raw = _section(raw, "plant", "")
    kind = plant_raw.get("kind", "surrogate")
    if kind == "surrogate":
        plant = _parse_surrogate(plant_raw)
    elif kind == "linear_quadratic":
        plant = _parse_lq(plant_raw)
    else:
        raise ConfigError("plant.kind", "must be surrogate or linear_quadratic")

    protocol = _parse_protocol(_section(raw, "protocol", ""))
    fpi_raw = _section(raw, "fpi", "", required=False)
    fpi = _build_fpi(fpi_raw, "fpi")

    cells_raw = raw.get("cells") or [{"id": "base"}]
    if not isinstance(cells_raw, list):
        raise ConfigError("cells", "must be a list")
    cells, seen = [], set()
    for i, c in enumerate(cells_raw):
        path = f"cells[{i}]"
        if not isinstance(c, dict) or "id" not in c:
            raise ConfigError(path, "each cell needs an id")
        _reject_unknown(c, ("id", "fpi"), path)
        cid = str(c["id"])
        if cid in seen:
            raise ConfigError(f"{path}.id", f"duplicate cell id {cid!r}")
        seen.add(cid)
        merged = {**fpi_raw, **(c.get("fpi") or {})}
        cells.append(Cell(cid, _build_fpi(merged, f"{path}.fpi")))

    trials = raw.get("trials", 30)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials", "must be an integer >= 1")
    seed = raw.get("rng_seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("rng_seed", "must be an unsigned integer")
    return ExperimentConfig(plant=plant, fpi=fpi, protocol=protocol, cells=cells,
                            noise=_parse_noise(raw.get("noise"), base_dir), trials=trials,
                            output=str(raw.get("output", "results")), rng_seed=seed,
                            source=source)


def load_config(path=None) -> ExperimentConfig:
    """Read and validate a YAML config; ``None`` loads the shipped default."""
    path = default_config_path() if path is None else Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open() as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"invalid YAML: {exc}") from None
    return parse_config(raw, path.parent, path)
