"""Assemble the scalar closed loop by hand and grade its bounds.

The loop is dx = theta x^2 + u with goal x -> 1.  The estimator is in
finite form: theta_hat(t) = Gamma (psi(x) alpha(x) - Psi(x) + a(t)),
where Psi is a closed-form antiderivative of psi alpha and a(t) is one
integral channel.  No gradient of an error functional is integrated;
the estimate is reconstructed from the state.  Afterwards the trace is
graded against the energy and sup bounds the design guarantees.
"""

import numpy as np

from finform.finite_form import (FiniteFormEstimator, psi_provider_closed,
                                 robust_theta_I_rhs, theta_hat)
from finform.goal import (GoalSpec, Parameterization,
                          certainty_equiv_control, phi_linear)
from finform.metrics import l2_bounds_check, linf_bound_check
from finform.numeric import OdeSystem, simulate
from finform.plant import PartitionedPlant, eval_dynamics

THETA_TRUE = 1.0
THETA_HAT0 = 3.0
X0 = 2.0
GAMMA = 1.0


def build_loop():
    plant = PartitionedPlant(
        n=1, m=0,
        f=lambda x: np.zeros(1),
        g=lambda x: np.ones(1),
        nu=lambda x, th: np.array([th[0] * x[0] ** 2]),
        theta_dim=1, theta_true=(THETA_TRUE,))
    phi, Q = phi_linear(1.0)
    goal = GoalSpec(psi=lambda x, t: x[0] - 1.0,
                    grad_x_psi=lambda x, t: np.array([1.0]),
                    dpsi_dt=lambda x, t: 0.0, phi=phi, Q=Q)
    par = Parameterization(alpha=lambda x, t: np.array([x[0] ** 2]),
                           z=lambda x, th, t: th[0] * x[0] ** 2,
                           D=1.0, D1=1.0)
    provider = psi_provider_closed(
        Psi=lambda x, t: np.array([2.0 / 3.0 * x[0] ** 3 - x[0] ** 2]),
        grad_x_Psi=lambda x, t: np.array([[2.0 * x[0] ** 2 - 2.0 * x[0]]]),
        dPsi_dt=lambda x, t: np.zeros(1))
    return plant, goal, par, provider


def main():
    plant, goal, par, provider = build_loop()
    est = FiniteFormEstimator(GAMMA, np.zeros(1), provider)
    view = plant.controller_view()

    def estimate(t, s):
        return theta_hat(est, goal, par, s[:1], t, theta_I=s[1:])

    def rhs(t, s):
        u = certainty_equiv_control(view, goal, par, s[:1],
                                    estimate(t, s), t)
        dx = eval_dynamics(plant, s[:1], u, t)
        da = robust_theta_I_rhs(est, goal, par, plant, s[:1], t, u,
                                theta_I=s[1:])
        return np.concatenate([dx, da])

    # start the channel so the initial estimate equals THETA_HAT0
    x0 = np.array([X0])
    prop = float(goal.psi(x0, 0.0)) * par.alpha(x0, 0.0) \
        - provider.Psi(x0, 0.0)
    a0 = THETA_HAT0 / GAMMA - prop[0]

    probes = [
        ("u", lambda t, s: certainty_equiv_control(
            view, goal, par, s[:1], estimate(t, s), t)),
        ("psi", lambda t, s: s[0] - 1.0),
        ("theta_hat_1", lambda t, s: float(estimate(t, s)[0])),
    ]
    trace = simulate(OdeSystem(2, rhs), [X0, a0], 10.0, h=1e-3,
                     probes=probes, state_names=("x1", "ac1"))

    print("x1(10) = %.9f   theta_hat(10) = %.6f (true %.1f)"
          % (trace.states[-1, 0], trace.output("theta_hat_1")[-1],
             THETA_TRUE))
    reports = l2_bounds_check(trace, goal, par, GAMMA,
                              np.array([THETA_HAT0]),
                              np.array([THETA_TRUE]))
    reports.append(linf_bound_check(trace, goal, par, GAMMA,
                                    np.array([THETA_HAT0]),
                                    np.array([THETA_TRUE])))
    for r in reports:
        print("%-12s %-6s measured %-12.6g bound %-12.6g margin %.6g"
              % (r.name, r.status, r.lhs, r.rhs, r.margin))


if __name__ == "__main__":
    main()
