import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finform.errors import (NoSolution, SingularControlDirection,
                            ValidationError)
from finform.goal import (GoalSpec, Parameterization, certainty_equiv_control,
                          check_gradients, error_residual, lambda_of,
                          phi_cubic, phi_linear, phi_saturating,
                          sector_worst_product)
from finform.numeric import OdeSystem, simulate
from finform.plant import PartitionedPlant, eval_dynamics, example_plant_tanh


def scalar_plant(theta=1.0):
    # dx = theta x^2 + u
    return PartitionedPlant(
        n=1, m=0,
        f=lambda x: np.zeros(1),
        g=lambda x: np.ones(1),
        nu=lambda x, th: np.array([th[0] * x[0] ** 2]),
        theta_dim=1, theta_true=(theta,))


def scalar_goal(K=1.0):
    phi, Q = phi_linear(K)
    return GoalSpec(psi=lambda x, t: x[0] - 1.0,
                    grad_x_psi=lambda x, t: np.array([1.0]),
                    dpsi_dt=lambda x, t: 0.0,
                    phi=phi, Q=Q)


def scalar_par():
    return Parameterization(alpha=lambda x, t: np.array([x[0] ** 2]),
                            z=lambda x, th, t: th[0] * x[0] ** 2,
                            D=1.0, D1=1.0)


def test_control_direct_formula():
    p, g = scalar_plant(), scalar_goal()
    u = certainty_equiv_control(p.controller_view(), g, scalar_par(),
                                np.array([2.0]), np.array([0.0]), 0.0)
    assert u == pytest.approx(-1.0)
    u = certainty_equiv_control(p.controller_view(), g, scalar_par(),
                                np.array([2.0]), np.array([3.0]), 0.0)
    assert u == pytest.approx(-13.0)


def test_control_holds_manifold_when_matched():
    p, g = scalar_plant(), scalar_goal()
    x = np.array([1.0])  # psi = 0
    u = certainty_equiv_control(p.controller_view(), g, scalar_par(),
                                x, p.true_theta(), 0.0)
    dx = eval_dynamics(p, x, u)
    assert float(np.asarray(g.grad_x_psi(x, 0.0)) @ dx) == pytest.approx(0.0, abs=1e-14)


def test_singular_direction_raises():
    p = PartitionedPlant(n=1, m=0,
                         f=lambda x: np.zeros(1),
                         g=lambda x: np.zeros(1),
                         nu=lambda x, th: np.zeros(1),
                         theta_dim=1, theta_true=(0.0,))
    with pytest.raises(SingularControlDirection):
        certainty_equiv_control(p.controller_view(), scalar_goal(),
                                scalar_par(), np.array([2.0]),
                                np.array([0.0]), 0.0)


def test_lambda_of_linear_and_cubic():
    assert lambda_of(scalar_goal(K=1.0), 0.0) == 0.0
    for K in (0.5, 1.0, 10.0):
        for d in (0.01, 1.0, 7.5):
            got = lambda_of(scalar_goal(K=K), d)
            assert got == pytest.approx(math.sqrt(2.0 * d / K), abs=1e-9)
    phi, Q = phi_cubic()
    g3 = GoalSpec(lambda x, t: x[0], lambda x, t: np.ones(1),
                  lambda x, t: 0.0, phi, Q)
    assert lambda_of(g3, 0.25) == pytest.approx(1.0, abs=1e-9)


def test_lambda_of_no_solution():
    with pytest.raises(NoSolution):
        lambda_of(scalar_goal(), 1e9, psi_max=10.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-30.0, 30.0))
def test_lambda_inverts_q_for_builtin_phis(psi0):
    candidates = [phi_linear(1.0), phi_linear(5.0), phi_cubic(),
                  phi_saturating(2.0)]
    for phi, Q in candidates:
        g = GoalSpec(lambda x, t: x[0], lambda x, t: np.ones(1),
                     lambda x, t: 0.0, phi, Q)
        assert lambda_of(g, Q(abs(psi0))) == pytest.approx(abs(psi0), abs=1e-8)


def closed_loop_trace(theta_hat_const, h, t_end=5.0, u_override=None):
    p, g, par = scalar_plant(), scalar_goal(), scalar_par()
    view = p.controller_view()

    def u_of(t, x):
        if u_override is not None:
            return u_override
        return certainty_equiv_control(view, g, par, x, theta_hat_const, t)

    sys1 = OdeSystem(1, lambda t, x: eval_dynamics(p, x, u_of(t, x), t))
    probes = [("psi", lambda t, x: g.psi(x, t)),
              ("z_mismatch", lambda t, x: par.z(x, p.true_theta(), t)
               - par.z(x, theta_hat_const, t))]
    return simulate(sys1, [2.0], t_end, h, probes=probes), g, par


def test_matched_loop_follows_target_dynamics():
    tr, g, _ = closed_loop_trace(np.array([1.0]), 1e-3)
    psi = tr.output("psi")
    expect = psi[0] * np.exp(-tr.times)
    assert np.max(np.abs(psi - expect)) < 1e-8


def test_error_residual_order():
    # the residual is a finite-difference defect, so halving h quarters it
    sups = []
    for h in (2e-3, 1e-3):
        tr, g, par = closed_loop_trace(np.array([1.0]), h)
        res = error_residual(tr, g, par)
        sups.append(np.max(np.abs(res)))
    assert 3.5 < sups[0] / sups[1] < 4.5


def test_error_residual_mismatched_estimate_still_small():
    # constant over-estimate keeps the loop bounded and the z_mismatch
    # output keeps the residual model closed
    tr, g, par = closed_loop_trace(np.array([1.6]), 1e-3)
    res = error_residual(tr, g, par)
    assert np.max(np.abs(res)) < 1e-4


def test_error_residual_open_loop_departs():
    # horizon short of the finite escape of dx = x^2 from x0 = 2
    tr, g, par = closed_loop_trace(np.array([1.0]), 1e-3, t_end=0.3,
                                   u_override=0.0)
    res = error_residual(tr, g, par)
    assert np.max(np.abs(res)) > 1e-1


def test_check_gradients_accepts_and_rejects():
    g = scalar_goal()
    check_gradients(g, [np.array([0.3]), np.array([2.0])], [0.0, 1.0])
    bad = GoalSpec(g.psi, lambda x, t: np.array([1.1]), g.dpsi_dt, g.phi, g.Q)
    with pytest.raises(ValidationError):
        check_gradients(bad, [np.array([0.3])], [0.0])
    bad_t = GoalSpec(g.psi, g.grad_x_psi, lambda x, t: 0.5, g.phi, g.Q)
    with pytest.raises(ValidationError):
        check_gradients(bad_t, [np.array([0.3])], [0.0])


def test_monotone_sector_sampling():
    rng = np.random.default_rng(1)
    # linear parameterization over the benchmark operating box
    par2 = Parameterization(
        alpha=lambda x, t: np.array([x[0], x[1]]),
        z=lambda x, th, t: th[0] * x[0] + th[1] * x[1],
        D=1.0, D1=1.0)
    worst = sector_worst_product(par2, rng, (-3, -3), (3, 3), (-5, -5), (5, 5),
                                 n=10_000)
    assert worst > 0.0

    # saturating variant keeps the sector sign as well
    p = example_plant_tanh()
    par_t = Parameterization(
        alpha=lambda x, t: np.array([x[0], x[1]]),
        z=lambda x, th, t: 5.0 * math.tanh(th[0] * x[0] + th[1] * x[1]),
        D=5.0)
    worst = sector_worst_product(par_t, rng, (-3, -3), (3, 3), (-5, -5), (5, 5),
                                 n=10_000)
    assert worst > 0.0


def test_sector_sampling_flags_nonmonotone():
    rng = np.random.default_rng(2)
    par_bad = Parameterization(
        alpha=lambda x, t: np.array([x[0]]),
        z=lambda x, th, t: math.sin(th[0] * x[0]),
        D=1.0)
    worst = sector_worst_product(par_bad, rng, (2.0,), (3.0,), (-4, ), (4,),
                                 n=5_000)
    assert worst < 0.0


def test_d1_cannot_exceed_d():
    with pytest.raises(ValidationError):
        Parameterization(alpha=lambda x, t: np.ones(1),
                         z=lambda x, th, t: th[0], D=1.0, D1=2.0)
