"""Seeded trial sweeps over setting cells and noise scenarios."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from flexpi.bench.config import Cell, ExperimentConfig, NoiseSpec, SurrogateSpec
from flexpi.plant import (N_PHASES, TrialResult, pretrain_supplemental, run_trial,
                          sample_initial_impedance)
from flexpi.types import ConfigError

log = logging.getLogger(__name__)

TRIAL_HEADER = (
    ["cell_id", "trial", "seed", "success", "cycles", "rmse_before", "rmse_after"]
    + [f"final_K{m}" for m in range(1, N_PHASES + 1)]
    + [f"final_B{m}" for m in range(1, N_PHASES + 1)]
    + [f"final_theta{m}" for m in range(1, N_PHASES + 1)]
)
AGGREGATE_HEADER = [
    "cell_id", "setting", "noise", "trials", "successes", "success_rate",
    "tuning_time_mean", "tuning_time_std", "rmse_before_mean", "rmse_before_std",
    "rmse_after_mean", "rmse_after_std",
]
# pretraining uses a trial index no real trial reaches
PRETRAIN_TRIAL = 1_000_000


def fmt(x) -> str:
    """Fixed 9-significant-digit formatting used for every float in the CSVs."""
    return f"{float(x):.9g}"


@dataclass(frozen=True)
class TrialRow:
    cell_id: str
    trial: int
    seed: int
    success: bool
    cycles: int
    rmse_before: float
    rmse_after: float
    final_impedance: np.ndarray  # (4, 3)

    def as_csv(self) -> List[str]:
        imp = self.final_impedance
        return ([self.cell_id, str(self.trial), str(self.seed), str(int(self.success)),
                 str(self.cycles), fmt(self.rmse_before), fmt(self.rmse_after)]
                + [fmt(v) for v in imp[:, 0]] + [fmt(v) for v in imp[:, 1]]
                + [fmt(v) for v in imp[:, 2]])


@dataclass(frozen=True)
class AggregateMetrics:
    """Per-cell summary; tuning statistics cover successful trials only."""

    cell_id: str
    setting: str
    noise: str
    trials: int
    successes: int
    tuning_time_mean: float
    tuning_time_std: float
    rmse_before_mean: float
    rmse_before_std: float
    rmse_after_mean: float
    rmse_after_std: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    def as_csv(self) -> List[str]:
        return [self.cell_id, self.setting, self.noise, str(self.trials), str(self.successes),
                fmt(self.success_rate), fmt(self.tuning_time_mean), fmt(self.tuning_time_std),
                fmt(self.rmse_before_mean), fmt(self.rmse_before_std),
                fmt(self.rmse_after_mean), fmt(self.rmse_after_std)]


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def aggregate(cell_id: str, setting: str, noise: str, rows: Iterable[Dict[str, str]]) -> AggregateMetrics:
    """Summarize per-trial CSV rows (string fields as written to disk)."""
    rows = list(rows)
    if not rows:
        raise ValueError(f"no trials for cell {cell_id!r}")
    ok = [r for r in rows if r["success"] == "1"]
    tt = _mean_std([int(r["cycles"]) for r in ok])
    rb = _mean_std([float(r["rmse_before"]) for r in rows])
    ra = _mean_std([float(r["rmse_after"]) for r in rows])
    return AggregateMetrics(cell_id, setting, noise, len(rows), len(ok), *tt, *rb, *ra)


def _row_dict(row: TrialRow) -> Dict[str, str]:
    return dict(zip(TRIAL_HEADER, row.as_csv()))


def initial_impedances(config: ExperimentConfig) -> List[np.ndarray]:
    """One safe start per trial index, shared by every cell."""
    spec = config.plant
    quiet = spec.build()
    return [sample_initial_impedance(quiet, config.protocol,
                                     np.random.default_rng([config.rng_seed, t]),
                                     spec.initial_spread)
            for t in range(config.trials)]


def cell_id(cell: Cell, noise: NoiseSpec) -> str:
    return f"{cell.cell_id}|{noise.label}"


def run_cell(config: ExperimentConfig, cell: Cell, noise: NoiseSpec,
             starts: Optional[List[np.ndarray]] = None) -> List[TrialRow]:
    """All trials of one (cell, noise) pair, in trial order."""
    spec = config.plant
    if not isinstance(spec, SurrogateSpec):
        raise ConfigError("plant.kind", "sweeps need the surrogate plant")
    starts = starts if starts is not None else initial_impedances(config)
    plant = spec.build(noise.build())
    supp = None
    if cell.fpi.supplemental:
        # prior session on the noise-free plant from its own start
        quiet = spec.build()
        start = sample_initial_impedance(
            quiet, config.protocol, np.random.default_rng([config.rng_seed, PRETRAIN_TRIAL]),
            spec.initial_spread)
        supp = pretrain_supplemental(quiet, cell.fpi, config.protocol, start, config.rng_seed,
                                     spec.supplemental_pretrain_cycles, trial=PRETRAIN_TRIAL,
                                     initial_gain_scale=spec.initial_gain_scale)
    cid = cell_id(cell, noise)
    rows = []
    for t in range(config.trials):
        res: TrialResult = run_trial(plant, cell.fpi, config.protocol, starts[t], config.rng_seed,
                                     trial=t, supplemental=supp,
                                     initial_gain_scale=spec.initial_gain_scale)
        rows.append(TrialRow(cid, t, config.rng_seed, res.success, res.cycles_used,
                             res.rmse_before, res.rmse_after, res.final_impedance))
        log.debug("%s trial %d: %s after %d cycles", cid, t, res.reason, res.cycles_used)
    return rows


@dataclass
class SweepResult:
    rows: List[TrialRow]
    aggregates: List[AggregateMetrics]

    def trials_csv(self) -> str:
        return _csv_text(TRIAL_HEADER, (r.as_csv() for r in self.rows))

    def aggregate_csv(self) -> str:
        return _csv_text(AGGREGATE_HEADER, (a.as_csv() for a in self.aggregates))

    def by_cell(self) -> Dict[str, AggregateMetrics]:
        return {a.cell_id: a for a in self.aggregates}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_sweep(config: ExperimentConfig, cells: Optional[List[Cell]] = None,
              noises: Optional[List[NoiseSpec]] = None) -> SweepResult:
    """Run every (cell, noise) pair; output order is (cell, noise, trial)."""
    cells = config.cells if cells is None else cells
    noises = config.noise if noises is None else noises
    starts = initial_impedances(config)
    rows, aggs = [], []
    for cell in cells:
        for noise in noises:
            cell_rows = run_cell(config, cell, noise, starts)
            rows.extend(cell_rows)
            aggs.append(aggregate(cell_id(cell, noise), cell.fpi.setting_code(), noise.label,
                                  (_row_dict(r) for r in cell_rows)))
    return SweepResult(rows, aggs)


def write_sweep(result: SweepResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials, aggs = out / "trials.csv", out / "aggregate.csv"
    trials.write_text(result.trials_csv())
    aggs.write_text(result.aggregate_csv())
    return trials, aggs


def read_trials_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
