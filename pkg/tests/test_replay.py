import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flexpi.approximator import LinearStateBasis, knee_basis
from flexpi.replay import (NeedMoreData, ReplayBuffer, assign_priorities, prepare_iteration_data,
                           rank_by_td, td_error)
from flexpi.types import FpiConfig, GaitSample, PolicyApprox, QApprox

td_vectors = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200)


def sample(k=0.0, cost=1.0):
    return GaitSample([k, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0], cost)


def zero_policy():
    return PolicyApprox(np.zeros((2, 3)), LinearStateBasis(2))


class TestBuffer:
    def test_push(self):
        buf = ReplayBuffer(100)
        buf.push(sample())
        assert len(buf) == 1

    def test_fifo_capacity(self):
        buf = ReplayBuffer(100)
        for k in range(101):
            buf.push(sample(float(k)))
        assert len(buf) == 100
        assert buf[0].state[0] == 1.0 and buf[-1].state[0] == 100.0

    def test_capacity_positive(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)

    def test_assign_priorities_annotates_samples(self):
        buf = ReplayBuffer(10)
        for k in range(3):
            buf.push(sample(float(k)))
        buf.assign_priorities([3.0, 1.0, 2.0])
        assert [s.rank for s in buf] == [1, 3, 2]
        assert [s.td_error for s in buf] == [3.0, 1.0, 2.0]
        assert sum(s.weight for s in buf) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            buf.assign_priorities([1.0])


class TestTdError:
    def test_zero_critic(self):
        q = QApprox.zeros(knee_basis())
        assert td_error(sample(1.0), q, zero_policy(), 2.5) == pytest.approx(2.5)

    def test_direct_evaluation(self):
        w = np.zeros(15)
        w[0] = 1.0  # x1^2
        q = QApprox(w, knee_basis())
        s = GaitSample([1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0], 2.0)
        assert td_error(s, q, zero_policy(), 2.0) == pytest.approx(1.0)

    def test_bellman_consistent_sample(self):
        w = np.zeros(15)
        w[0] = 2.0
        q = QApprox(w, knee_basis())
        # Q(x, u) = 2 x1^2: with x1 = 1 -> x1' = 0.5, U = 2 - 0.5 = 1.5 balances it
        s = GaitSample([1.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.0], 1.5)
        assert td_error(s, q, zero_policy(), 1.5) == pytest.approx(0.0)


class TestPriorities:
    def test_example(self):
        np.testing.assert_array_equal(rank_by_td([3, 1, 2]), [1, 3, 2])
        np.testing.assert_allclose(assign_priorities([3.0, 1.0, 2.0]), [6 / 11, 2 / 11, 3 / 11],
                                   rtol=0, atol=1e-15)

    def test_single(self):
        np.testing.assert_array_equal(assign_priorities([0.3]), [1.0])

    def test_ties_harmonic(self):
        lam = assign_priorities([2.0, 2.0, 2.0, 2.0])
        harmonic = 1.0 / np.arange(1, 5)
        np.testing.assert_allclose(lam, harmonic / harmonic.sum())

    def test_magnitude_not_sign(self):
        np.testing.assert_array_equal(rank_by_td([-5.0, 1.0, 3.0]), [1, 3, 2])

    @given(td_vectors)
    def test_normalized(self, td):
        lam = assign_priorities(td)
        assert abs(lam.sum() - 1.0) < 1e-12
        assert np.all((lam > 0) & (lam <= 1))

    @given(td_vectors)
    def test_ranks_are_permutation(self, td):
        assert sorted(rank_by_td(td)) == list(range(1, len(td) + 1))

    @given(td_vectors)
    def test_larger_error_never_lighter(self, td):
        lam = assign_priorities(td)
        mag = np.abs(td)
        i, j = np.argmax(mag), np.argmin(mag)
        assert lam[i] >= lam[j]


class TestPrepareIterationData:
    def test_batch_takes_fresh_only(self):
        buf = ReplayBuffer(100)
        for k in range(25):
            buf.push(sample(float(k)), policy_version=0)
        for k in range(20):
            buf.push(sample(100.0 + k), policy_version=1)
        data = prepare_iteration_data(buf, FpiConfig(n_b_initial=20), 20, 1, 15)
        assert len(data) == 20
        assert data.states[:, 0].min() == 100.0

    def test_batch_needs_enough_fresh(self):
        buf = ReplayBuffer(100)
        for k in range(30):
            buf.push(sample(), policy_version=0)
        with pytest.raises(NeedMoreData):
            prepare_iteration_data(buf, FpiConfig(n_b_initial=20), 20, 1, 15)

    def test_incremental_whole_buffer(self):
        buf = ReplayBuffer(100)
        for k in range(37):
            buf.push(sample(float(k)), policy_version=k % 3)
        data = prepare_iteration_data(buf, FpiConfig(data_mode="incremental"), 20, 5, 15)
        assert len(data) == 37

    def test_incremental_waits_for_basis_size(self):
        buf = ReplayBuffer(100)
        for k in range(14):
            buf.push(sample())
        with pytest.raises(NeedMoreData):
            prepare_iteration_data(buf, FpiConfig(data_mode="incremental"), 20, 0, 15)
