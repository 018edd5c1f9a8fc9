"""Adaptive backstepping baselines for the two-stage benchmark plant.

Both controllers target dx1 = theta0 x1^2 + x2, dx2 = theta1 x1 +
theta2 x2 + u with the goal x1 -> 1.  Both are written out term by term
for this one plant and are not generalized: they exist to give the
benchmark an established point of comparison, including the classic
overparameterized form (four estimates for three parameters) and the
tuning-functions form (three estimates, shared tuning signal tau).
"""

import numpy as np

from .errors import DimensionMismatch

_VARIANTS = ("classic", "tuning_functions")
_DIMS = {"classic": 4, "tuning_functions": 3}


class BacksteppingState:
    """Adaptation state of one baseline controller.

    theta_hat holds (theta, theta1, theta2) for tuning_functions and
    (theta, theta1, theta2, theta3) for classic, in that order.
    """

    def __init__(self, theta_hat, variant):
        if variant not in _VARIANTS:
            raise DimensionMismatch(
                "unknown variant %r, expected one of %s"
                % (variant, ", ".join(_VARIANTS)))
        self.variant = variant
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        if self.theta_hat.shape != (_DIMS[variant],):
            raise DimensionMismatch(
                "%s controller carries %d estimates, got shape %s"
                % (variant, _DIMS[variant], self.theta_hat.shape))


def backstepping_classic_rhs(x, state):
    """Control and adaptation rates of the overparameterized baseline.

    Returns (u, theta_hat_dot) with rates ordered like the state.
    """
    if state.variant != "classic":
        raise DimensionMismatch("state carries the %s variant"
                                % state.variant)
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    th, th1, th2, th3 = state.theta_hat
    e = x2 + x1 - 1.0 + th3 * x1 ** 2
    u = (-2.0 * x2 - (x1 - 1.0) - th3 * x1 ** 2
         - x1 ** 4 * (x1 - 1.0) - 2.0 * th3 * x1 * x2
         - (x1 ** 2 + 2.0 * th3 * x1 ** 3) * th
         - x1 * th1 - x2 * th2)
    rates = np.array([
        e * x1 ** 2 * (1.0 + 2.0 * th3 * x1),
        e * x1,
        e * x2,
        (x1 - 1.0) * x1 ** 2,
    ])
    return u, rates


def backstepping_tuning_rhs(x, state):
    """Control and adaptation rates of the tuning-functions baseline.

    The shared tuning signal tau doubles as the single theta rate.
    Returns (u, theta_hat_dot).
    """
    if state.variant != "tuning_functions":
        raise DimensionMismatch("state carries the %s variant"
                                % state.variant)
    x = np.asarray(x, dtype=float)
    x1, x2 = x[0], x[1]
    th, th1, th2 = state.theta_hat
    e = x2 + x1 - 1.0 + x1 ** 2 * th
    tau = (x1 - 1.0) * x1 ** 2 + e * x1 ** 2 * (1.0 + 2.0 * x1 * th)
    u = (-e - (x1 - 1.0) - (1.0 + 2.0 * x1 * th) * (x2 + th * x1 ** 2)
         - x1 ** 2 * tau - x1 * th1 - x2 * th2)
    rates = np.array([tau, e * x1, e * x2])
    return u, rates
