"""Experience memory, TD errors and rank-based sample weights."""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from typing import List

import numpy as np

from flexpi.approximator import eval_q_batch, policy_actions
from flexpi.types import FpiConfig, GaitSample, PolicyApprox, QApprox


class NeedMoreData(Exception):
    """Not enough samples yet; keep collecting before evaluating."""


class ReplayBuffer:
    """FIFO memory of transitions, capped at ``capacity``.

    Each sample is tagged with the version of the policy that generated it so
    batch mode can select on-policy data only.
    """

    def __init__(self, capacity: int = 100):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._samples: deque = deque(maxlen=capacity)
        self._versions: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    def __getitem__(self, i) -> GaitSample:
        return self._samples[i]

    @property
    def samples(self) -> List[GaitSample]:
        return list(self._samples)

    @property
    def policy_versions(self) -> List[int]:
        return list(self._versions)

    def push(self, sample: GaitSample, policy_version: int = 0) -> None:
        self._samples.append(sample)
        self._versions.append(policy_version)

    def assign_priorities(self, td_errors) -> np.ndarray:
        """Rank-weight the stored samples and cache delta, rank and lambda on them."""
        td = np.asarray(td_errors, dtype=float)
        if td.shape != (len(self),):
            raise ValueError(f"expected {len(self)} TD errors, got shape {td.shape}")
        ranks = rank_by_td(td)
        lam = assign_priorities(td)
        for k in range(len(self)):
            self._samples[k] = dataclasses.replace(
                self._samples[k], td_error=float(td[k]), rank=int(ranks[k]), weight=float(lam[k])
            )
        return lam

    def to_rows(self):
        """Rows for the CSV sample log."""
        for s, v in zip(self._samples, self._versions):
            yield {
                "policy_version": v,
                "state": s.state.tolist(),
                "action": s.action.tolist(),
                "next_state": s.next_state.tolist(),
                "stage_cost": s.stage_cost,
                "td_error": s.td_error,
                "rank": s.rank,
                "weight": s.weight,
            }


def td_errors(states, actions, next_states, costs, q_prev: QApprox,
              policy: PolicyApprox) -> np.ndarray:
    """delta = U + Q_prev(x', h(x')) - Q_prev(x, u) for a batch."""
    next_actions = policy_actions(policy, next_states)
    return (np.asarray(costs, dtype=float)
            + eval_q_batch(q_prev, next_states, next_actions)
            - eval_q_batch(q_prev, states, actions))


def td_error(sample: GaitSample, q_prev: QApprox, policy: PolicyApprox,
             stage_cost_aug: float) -> float:
    return float(td_errors(sample.state[None], sample.action[None], sample.next_state[None],
                           [stage_cost_aug], q_prev, policy)[0])


def rank_by_td(td_errors) -> np.ndarray:
    """Rank 1 for the largest |delta|; ties go to the earlier sample."""
    mag = np.abs(np.asarray(td_errors, dtype=float))
    order = np.argsort(-mag, kind="stable")
    ranks = np.empty(mag.shape[0], dtype=int)
    ranks[order] = np.arange(1, mag.shape[0] + 1)
    return ranks


def assign_priorities(td_errors) -> np.ndarray:
    """Normalized weights lambda_k = (1/rank_k) / sum_j (1/rank_j)."""
    inv = 1.0 / rank_by_td(td_errors)
    return inv / inv.sum()


@dataclass(frozen=True, eq=False)
class IterationData:
    """Samples selected for one policy evaluation, stacked as arrays."""

    samples: List[GaitSample]
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    stage_costs: np.ndarray

    def __len__(self):
        return len(self.samples)


def _stack(samples: List[GaitSample]) -> IterationData:
    return IterationData(
        samples=samples,
        states=np.array([s.state for s in samples]),
        actions=np.array([s.action for s in samples]),
        next_states=np.array([s.next_state for s in samples]),
        stage_costs=np.array([s.stage_cost for s in samples]),
    )


def prepare_iteration_data(buffer: ReplayBuffer, config: FpiConfig, n_b: int,
                           policy_version: int, basis_size: int) -> IterationData:
    """Pick the samples for the next policy evaluation.

    Batch mode takes exactly the ``n_b`` newest samples generated by the
    current policy version. Incremental mode takes the whole buffer once it
    holds at least ``basis_size`` samples. Raises NeedMoreData otherwise.
    """
    if config.data_mode == "batch":
        fresh = [s for s, v in zip(buffer, buffer.policy_versions) if v == policy_version]
        if len(fresh) < n_b:
            raise NeedMoreData(f"{len(fresh)} of {n_b} on-policy samples")
        return _stack(fresh[-n_b:])
    if len(buffer) < basis_size:
        raise NeedMoreData(f"{len(buffer)} of {basis_size} buffered samples")
    return _stack(buffer.samples)
