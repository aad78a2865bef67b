import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flexpi.approximator import LinearStateBasis, knee_basis, policy_actions
from flexpi.types import (DEFAULT_R_U, DEFAULT_R_X, Action, ConfigError, FpiConfig, GaitSample,
                          ImpedanceSetting, PolicyApprox, QApprox, State, stage_cost)

finite = st.floats(-1e3, 1e3, allow_nan=False)
# squares of tiny magnitudes underflow to exactly zero
unsquashed = finite.filter(lambda v: v == 0 or abs(v) > 1e-100)
R_X, R_U = np.array(DEFAULT_R_X), np.array(DEFAULT_R_U)


class TestStageCost:
    def test_zero(self):
        assert stage_cost([0, 0], [0, 0, 0], R_X, R_U) == 0.0

    def test_state_only(self):
        assert stage_cost([1, 1], [0, 0, 0], np.eye(2), R_U) == pytest.approx(2.0)

    def test_action_only(self):
        assert stage_cost([0, 0], [1, 1, 1], R_X, np.diag([0.1, 0.2, 0.1])) == pytest.approx(0.4)

    def test_accepts_value_types(self):
        assert stage_cost(State(1.0, 0.0), Action(0.0, 1.0, 0.0), R_X, R_U) == pytest.approx(1.2)

    @given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=3, max_size=3))
    def test_symmetric(self, x, u):
        a = stage_cost(x, u, R_X, R_U)
        b = stage_cost(-np.array(x), -np.array(u), R_X, R_U)
        assert a == pytest.approx(b, rel=1e-12, abs=0)

    @given(st.lists(unsquashed, min_size=2, max_size=2), st.lists(unsquashed, min_size=3, max_size=3))
    def test_positive_definite(self, x, u):
        c = stage_cost(x, u, R_X, R_U)
        if np.any(np.array(x) != 0) or np.any(np.array(u) != 0):
            assert c > 0
        else:
            assert c == 0


class TestValueTypes:
    def test_state_roundtrip(self):
        s = State(2.5, -0.1)
        assert State.from_array(np.asarray(s)) == s

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_state_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            State(bad, 0.0)

    def test_action_rejects_nan(self):
        with pytest.raises(ValueError):
            Action(0.0, math.nan, 0.0)

    def test_impedance_negative_rejected(self):
        with pytest.raises(ValueError):
            ImpedanceSetting(-1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            ImpedanceSetting(0.0, -0.1, 0.0)

    def test_negative_equilibrium_allowed(self):
        assert ImpedanceSetting(1.0, 0.5, -12.0).equilibrium_angle == -12.0

    def test_sample_validation(self):
        GaitSample([0, 0], [0, 0, 0], [0, 0], 0.0)
        with pytest.raises(ValueError):
            GaitSample([0, 0], [0, 0, 0], [0, 0], -1.0)
        with pytest.raises(ValueError):
            GaitSample([0, 0], [0, 0, 0], [0, 0], 1.0, weight=1.5)

    def test_sample_arrays_read_only(self):
        s = GaitSample([1, 2], [0, 0, 0], [0, 0], 5.0)
        with pytest.raises(ValueError):
            s.state[0] = 3.0

    def test_qapprox_length(self):
        QApprox(np.zeros(15), knee_basis())
        with pytest.raises(ValueError):
            QApprox(np.zeros(14), knee_basis())

    def test_policy_shape(self):
        with pytest.raises(ValueError):
            PolicyApprox(np.zeros((3, 3)), LinearStateBasis(2))

    @given(st.lists(finite, min_size=6, max_size=6))
    def test_policy_zero_state_gives_zero_action(self, g):
        pol = PolicyApprox(np.array(g).reshape(2, 3), LinearStateBasis(2, [8.0, 0.25]))
        assert np.all(policy_actions(pol, np.zeros((1, 2))) == 0.0)


class TestFpiConfig:
    def test_defaults(self):
        cfg = FpiConfig()
        assert cfg.n_b_max == cfg.buffer_max == 100
        assert cfg.setting_code() == "(A)(A)(A)(A)"

    def test_adaptive_needs_batch_mode(self):
        with pytest.raises(ConfigError) as exc:
            FpiConfig(batch_size_mode="adaptive", data_mode="incremental")
        assert exc.value.path == "batch_size_mode"

    def test_buffer_at_least_batch(self):
        with pytest.raises(ConfigError) as exc:
            FpiConfig(n_b_initial=120, n_b_max=120)
        assert exc.value.path == "buffer_max"

    def test_basis_size_check(self):
        FpiConfig(n_b_initial=15).check_basis_size(15)
        with pytest.raises(ConfigError):
            FpiConfig(n_b_initial=10).check_basis_size(15)

    @pytest.mark.parametrize("field,value", [("alpha_base", 1.0), ("alpha_base", 0.0),
                                             ("learning_rate", 1.0), ("convergence_tol", 0.0),
                                             ("i_max", 0), ("exploration_noise_fraction", -0.1),
                                             ("data_mode", "online")])
    def test_invalid_fields(self, field, value):
        with pytest.raises(ConfigError) as exc:
            FpiConfig(**{field: value})
        assert exc.value.path == field

    def test_r_matrices_must_be_pd(self):
        with pytest.raises(ConfigError) as exc:
            FpiConfig(r_u=np.diag([0.1, 0.0, 0.1]))
        assert exc.value.path == "r_u"

    @given(st.floats(0.01, 0.99), st.integers(0, 200))
    def test_alpha_schedule_decreasing(self, base, i):
        cfg = FpiConfig(supplemental=True, alpha_base=base)
        assert cfg.alpha(i + 1) < cfg.alpha(i) or cfg.alpha(i) == 0.0
        assert FpiConfig(alpha_base=base).alpha(i) == 0.0

    def test_replace_keeps_validation(self):
        cfg = FpiConfig().replace(data_mode="incremental", prioritization=True)
        assert cfg.setting_code() == "(A)(B)(B)(A)"
        with pytest.raises(ConfigError):
            cfg.replace(batch_size_mode="adaptive")
