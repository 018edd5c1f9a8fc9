"""Point oracles for the backstepping baselines."""

import numpy as np
import pytest

from finform.comparators import (BacksteppingState, backstepping_classic_rhs,
                                 backstepping_tuning_rhs)
from finform.errors import DimensionMismatch


def classic_state(values=(0.0, 0.0, 0.0, 0.0)):
    return BacksteppingState(np.array(values, dtype=float), "classic")


def tuning_state(values=(0.0, 0.0, 0.0)):
    return BacksteppingState(np.array(values, dtype=float),
                             "tuning_functions")


def test_classic_rest_point_gives_zero_control_and_rates():
    u, rates = backstepping_classic_rhs(np.array([1.0, 0.0]), classic_state())
    assert u == 0.0
    assert np.all(rates == 0.0)


def test_tuning_rest_point_gives_zero_control_and_rates():
    u, rates = backstepping_tuning_rhs(np.array([1.0, 0.0]), tuning_state())
    assert u == 0.0
    assert np.all(rates == 0.0)


def test_classic_first_stage_rate_reads_only_x1():
    # (x1 - 1) x1^2 = 4 at x1 = 2 regardless of x2 and the estimates
    for x2, est in [(0.0, (0.0,) * 4), (-3.0, (1.0, -2.0, 0.3, 0.9)),
                    (7.5, (5.0, 5.0, 5.0, 5.0))]:
        _, rates = backstepping_classic_rhs(np.array([2.0, x2]),
                                            classic_state(est))
        assert rates[3] == pytest.approx(4.0)


def test_tuning_signal_value_at_probe_point():
    _, rates = backstepping_tuning_rhs(np.array([2.0, 0.0]),
                                       tuning_state((0.0, 5.0, -5.0)))
    assert rates[0] == pytest.approx(8.0)


def test_zero_tracking_error_freezes_error_driven_rates():
    # x2 chosen so e = x2 + x1 - 1 + th3 x1^2 vanishes at x1 = 2
    x = np.array([2.0, 1.0 - 2.0 - 0.5 * 4.0])
    _, rates = backstepping_classic_rhs(x,
                                        classic_state((0.7, 1.1, -0.2, 0.5)))
    assert rates[0] == 0.0 and rates[1] == 0.0 and rates[2] == 0.0
    assert rates[3] == pytest.approx(4.0)


def test_tuning_zero_error_leaves_only_the_x1_drive():
    th = 0.25
    x = np.array([2.0, 1.0 - 2.0 - th * 4.0])
    _, rates = backstepping_tuning_rhs(x, tuning_state((th, 3.0, -1.0)))
    assert rates[1] == 0.0 and rates[2] == 0.0
    assert rates[0] == pytest.approx((2.0 - 1.0) * 4.0)


def test_state_rejects_unknown_variant():
    with pytest.raises(DimensionMismatch):
        BacksteppingState(np.zeros(4), "modular")


@pytest.mark.parametrize("variant,dim", [("classic", 4),
                                         ("tuning_functions", 3)])
def test_state_rejects_wrong_estimate_count(variant, dim):
    with pytest.raises(DimensionMismatch):
        BacksteppingState(np.zeros(dim + 1), variant)


def test_rhs_rejects_mismatched_variant():
    with pytest.raises(DimensionMismatch):
        backstepping_classic_rhs(np.array([1.0, 0.0]), tuning_state())
    with pytest.raises(DimensionMismatch):
        backstepping_tuning_rhs(np.array([1.0, 0.0]), classic_state())
