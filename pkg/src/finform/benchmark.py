"""Closed-loop runners for the two-stage benchmark comparison.

The comparison integrates four controllers over five hundred seconds at a
millisecond step, so the inner loops here are hand-inlined float
arithmetic instead of the generic assemblies.  The inlined laws are
pinned by tests: the chain loop agrees with the cascade_design system to
rounding, and the baselines agree with the comparators module.

The plant under test is dx1 = theta0 x1^2 + x2, dx2 = z(theta, x) + u
with z linear or squashed through 5 tanh, true parameters (1, 1, 0.5),
and the goal x1 -> 1.
"""

import math

import numpy as np

from .embedding import CascadeStage, cascade_design
from .errors import NonFiniteState, ValidationError
from .goal import GoalSpec, phi_linear
from .metrics import control_energy
from .numeric import DEFAULT_STEP, SimTrace
from .plant import CascadePlant

THETA_TRUE = (1.0, 1.0, 0.5)
CASES = ("finform", "finform_tanh", "classic", "tuning")
GAIN_MODES = ("constant", "pointwise")

CHAIN_STATE_NAMES = ("x1", "x2", "xi1", "ac1", "ao1", "ac2_1", "ac2_2")
CLASSIC_STATE_NAMES = ("x1", "x2", "theta_hat", "theta_hat_1",
                       "theta_hat_2", "theta_hat_3")
TUNING_STATE_NAMES = ("x1", "x2", "theta_hat", "theta_hat_1", "theta_hat_2")


def chain_start():
    """Benchmark initial point: x = (2, 0.2), observer at zero, channels
    chosen so the initial estimates are (3, 0, -2, -2)."""
    return np.array([2.0, 0.2, 0.0, 1.0 / 3.0, -8.0 / 3.0, -2.0, -2.02])


def classic_start():
    return np.array([2.0, 0.2, 3.0, -2.0, -2.0, 3.0])


def tuning_start():
    return np.array([2.0, 0.2, 3.0, -2.0, -2.0])


def stage_control_value(w, a0):
    """First-stage intermediate control at coordinate value w."""
    return -(w - 1.0) - (w ** 3 / 3.0 + a0) * w ** 2


def pointwise_gain_value(x1, xi, a0):
    """State-dependent observer gain: squared growth factor of the scalar
    uncertainty between the coordinate and its observer, plus one."""
    F = 1.0 + (x1 + xi) * a0 + (x1 ** 4 + x1 ** 3 * xi + x1 ** 2 * xi ** 2
                                + x1 * xi ** 3 + xi ** 4) / 3.0
    return F * F + 1.0


# -- generic assembly of the same loop --------------------------------------


def chain_plant(tanh_inner=False):
    def f0(q, th):
        return th[0] * q[0] ** 2

    if tanh_inner:
        def f1(q, th):
            return 5.0 * math.tanh(th[0] * q[0] + th[1] * q[1])
    else:
        def f1(q, th):
            return th[0] * q[0] + th[1] * q[1]

    return CascadePlant(2, [f0, f1], [THETA_TRUE[:1], THETA_TRUE[1:]])


def chain_goal():
    phi, Q = phi_linear(1.0)
    return GoalSpec(psi=lambda x, t: x[0] - 1.0,
                    grad_x_psi=lambda x, t: np.array([1.0, 0.0]),
                    dpsi_dt=lambda x, t: 0.0, phi=phi, Q=Q)


def chain_stages(tanh_inner=False):
    first = CascadeStage(
        1,
        alpha=lambda q, t: np.array([q[0] ** 2]),
        z_hat=lambda th, q, t: float(th[0]) * q[0] ** 2,
        phi=lambda s: s,
        alpha_antideriv=lambda q, t: np.array([q[0] ** 3 / 3.0]),
        dalpha_dq=lambda q, t: np.array([[2.0 * q[0], 0.0]]),
        dA_dq=lambda q, t: np.array([[q[0] ** 2, 0.0]]),
        dz_dtheta=lambda th, q, t: np.array([q[0] ** 2]),
        dz_dq=lambda th, q, t: np.array([2.0 * float(th[0]) * q[0], 0.0]),
        dphi=lambda s: 1.0)

    if tanh_inner:
        def z_hat(th, q, t):
            return 5.0 * math.tanh(float(th[0]) * q[0] + float(th[1]) * q[1])

        def dz_dtheta(th, q, t):
            w = float(th[0]) * q[0] + float(th[1]) * q[1]
            s = 5.0 * (1.0 - math.tanh(w) ** 2)
            return np.array([s * q[0], s * q[1]])

        def dz_dq(th, q, t):
            w = float(th[0]) * q[0] + float(th[1]) * q[1]
            s = 5.0 * (1.0 - math.tanh(w) ** 2)
            return np.array([s * float(th[0]), s * float(th[1])])
    else:
        def z_hat(th, q, t):
            return float(th[0]) * q[0] + float(th[1]) * q[1]

        def dz_dtheta(th, q, t):
            return np.array([q[0], q[1]])

        def dz_dq(th, q, t):
            return np.array([float(th[0]), float(th[1])])

    second = CascadeStage(
        2,
        alpha=lambda q, t: np.array([q[0], q[1]]),
        z_hat=z_hat, phi=lambda s: s,
        alpha_antideriv=lambda q, t: np.array([q[0] * q[1],
                                               q[1] ** 2 / 2.0]),
        dalpha_dq=lambda q, t: np.array([[1.0, 0.0], [0.0, 1.0]]),
        dA_dq=lambda q, t: np.array([[q[1], q[0]], [0.0, q[1]]]),
        dz_dtheta=dz_dtheta, dz_dq=dz_dq, dphi=lambda s: 1.0)
    return [first, second]


def chain_damping(gain_mode):
    if gain_mode == "constant":
        return 10.0
    if gain_mode == "pointwise":
        return lambda i, state, z, t: pointwise_gain_value(
            state[0], state[2], state[3])
    raise ValidationError("gain_mode must be one of %s"
                          % (GAIN_MODES,), key="gain_mode")


def chain_system(tanh_inner=False, gain_mode="constant"):
    """The benchmark loop assembled through cascade_design."""
    return cascade_design(chain_plant(tanh_inner), chain_goal(),
                          chain_stages(tanh_inner),
                          damping=chain_damping(gain_mode))


# -- inlined loops -----------------------------------------------------------


def _make_chain_rhs(tanh_inner, gain_mode):
    if gain_mode not in GAIN_MODES:
        raise ValidationError("gain_mode must be one of %s"
                              % (GAIN_MODES,), key="gain_mode")
    pointwise = gain_mode == "pointwise"
    tanh = math.tanh

    def rhs(t, s):
        x1, x2, xi, a0, axi, a1, a2 = s
        if pointwise:
            g = pointwise_gain_value(x1, xi, a0)
        else:
            g = 10.0
        x1sq = x1 * x1
        xi_dot = g * (x1 - xi) + (x1 * x1sq / 3.0 + axi) * x1sq + x2
        a0_dot = (x1 - 1.0) * x1sq
        axi_dot = (x1 - xi) * x1sq - x1sq * xi_dot
        xisq = xi * xi
        u0 = -(xi - 1.0) - (xi * xisq / 3.0 + a0) * xisq
        psi2 = x2 - u0
        th1 = psi2 * xi + a1
        th2 = 0.5 * x2 * x2 + a2
        w = xi * th1 + x2 * th2
        z2 = 5.0 * tanh(w) if tanh_inner else w
        sp = 1.0 + 5.0 * xisq * xisq / 3.0 + 2.0 * a0 * xi
        a1_dot = psi2 * (xi - xi_dot)
        a2_dot = psi2 * x2 + sp * x2 * xi_dot + xisq * x2 * a0_dot
        u = -z2 - xisq * a0_dot - psi2 - sp * xi_dot
        inner = x1 + 0.5 * x2
        dx2 = (5.0 * tanh(inner) if tanh_inner else inner) + u
        return (x1sq + x2, dx2, xi_dot, a0_dot, axi_dot, a1_dot, a2_dot)

    return rhs


def _make_chain_outputs(tanh_inner, gain_mode):
    pointwise = gain_mode == "pointwise"

    def outputs(t, s):
        x1, x2, xi, a0, axi, a1, a2 = s
        g = pointwise_gain_value(x1, xi, a0) if pointwise else 10.0
        x1sq = x1 * x1
        xi_dot = g * (x1 - xi) + (x1 * x1sq / 3.0 + axi) * x1sq + x2
        a0_dot = (x1 - 1.0) * x1sq
        xisq = xi * xi
        u0 = -(xi - 1.0) - (xi * xisq / 3.0 + a0) * xisq
        psi2 = x2 - u0
        th0 = x1 * x1sq / 3.0 + a0
        th1 = psi2 * xi + a1
        th2 = 0.5 * x2 * x2 + a2
        w = xi * th1 + x2 * th2
        z2 = 5.0 * math.tanh(w) if tanh_inner else w
        sp = 1.0 + 5.0 * xisq * xisq / 3.0 + 2.0 * a0 * xi
        u = -z2 - xisq * a0_dot - psi2 - sp * xi_dot
        delta = math.sqrt((th0 - 1.0) ** 2 + (th1 - 1.0) ** 2
                          + (th2 - 0.5) ** 2)
        return (u, x1 - 1.0, delta, th0, th1, th2, x1 - xi,
                stage_control_value(xi, a0) - stage_control_value(x1, a0))

    names = ("u", "psi", "delta_theta", "theta_hat_1", "theta_hat_2",
             "theta_hat_3", "obs_gap", "control_gap")
    return outputs, names


def _classic_rhs(t, s):
    x1, x2, th, th1, th2, th3 = s
    x1sq = x1 * x1
    e = x2 + x1 - 1.0 + th3 * x1sq
    u = (-2.0 * x2 - (x1 - 1.0) - th3 * x1sq - x1sq * x1sq * (x1 - 1.0)
         - 2.0 * th3 * x1 * x2 - (x1sq + 2.0 * th3 * x1sq * x1) * th
         - x1 * th1 - x2 * th2)
    return (x1sq + x2, x1 + 0.5 * x2 + u,
            e * x1sq * (1.0 + 2.0 * th3 * x1), e * x1, e * x2,
            (x1 - 1.0) * x1sq)


def _classic_outputs(t, s):
    x1, x2, th, th1, th2, th3 = s
    x1sq = x1 * x1
    e = x2 + x1 - 1.0 + th3 * x1sq
    u = (-2.0 * x2 - (x1 - 1.0) - th3 * x1sq - x1sq * x1sq * (x1 - 1.0)
         - 2.0 * th3 * x1 * x2 - (x1sq + 2.0 * th3 * x1sq * x1) * th
         - x1 * th1 - x2 * th2)
    delta = math.sqrt((th3 - 1.0) ** 2 + (th1 - 1.0) ** 2
                      + (th2 - 0.5) ** 2)
    return (u, x1 - 1.0, delta, th3, th1, th2)


def _tuning_rhs(t, s):
    x1, x2, th, th1, th2 = s
    x1sq = x1 * x1
    e = x2 + x1 - 1.0 + x1sq * th
    tau = (x1 - 1.0) * x1sq + e * x1sq * (1.0 + 2.0 * x1 * th)
    u = (-e - (x1 - 1.0) - (1.0 + 2.0 * x1 * th) * (x2 + th * x1sq)
         - x1sq * tau - x1 * th1 - x2 * th2)
    return (x1sq + x2, x1 + 0.5 * x2 + u, tau, e * x1, e * x2)


def _tuning_outputs(t, s):
    x1, x2, th, th1, th2 = s
    x1sq = x1 * x1
    e = x2 + x1 - 1.0 + x1sq * th
    tau = (x1 - 1.0) * x1sq + e * x1sq * (1.0 + 2.0 * x1 * th)
    u = (-e - (x1 - 1.0) - (1.0 + 2.0 * x1 * th) * (x2 + th * x1sq)
         - x1sq * tau - x1 * th1 - x2 * th2)
    delta = math.sqrt((th - 1.0) ** 2 + (th1 - 1.0) ** 2 + (th2 - 0.5) ** 2)
    return (u, x1 - 1.0, delta, th, th1, th2)


_BASE_OUT_NAMES = ("u", "psi", "delta_theta", "theta_hat_1", "theta_hat_2",
                   "theta_hat_3")


def _integrate(rhs, outputs, out_names, s0, t_end, h, state_names):
    """Fixed-step fourth-order loop over plain float tuples."""
    n_steps = int(round(t_end / h))
    if n_steps < 1 or t_end <= 0 or h <= 0:
        raise ValidationError("need t_end > 0, h > 0, t_end >= h",
                              key="horizon")
    dim = len(s0)
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, dim))
    outs = {name: np.empty(n_steps + 1) for name in out_names}
    s = tuple(float(v) for v in s0)
    half = 0.5 * h
    sixth = h / 6.0
    isfinite = math.isfinite
    filled = 0
    blown = None
    for k in range(n_steps + 1):
        t = k * h
        if not all(map(isfinite, s)):
            blown = t
            break
        try:
            vals = outputs(t, s)
        except (OverflowError, ValueError):
            blown = t
            break
        times[k] = t
        states[k] = s
        for name, val in zip(out_names, vals):
            outs[name][k] = val
        filled = k + 1
        if k == n_steps:
            break
        try:
            k1 = rhs(t, s)
            s2 = tuple(a + half * b for a, b in zip(s, k1))
            k2 = rhs(t + half, s2)
            s3 = tuple(a + half * b for a, b in zip(s, k2))
            k3 = rhs(t + half, s3)
            s4 = tuple(a + h * b for a, b in zip(s, k3))
            k4 = rhs(t + h, s4)
            s = tuple(a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
                      for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4))
        except (OverflowError, ValueError):
            blown = t
            break
    trace = _build_trace(times[:filled], states[:filled],
                         {n: v[:filled] for n, v in outs.items()},
                         state_names, h)
    if blown is not None:
        raise NonFiniteState("loop left the finite range at t=%.6g" % blown,
                             trace=trace, t=blown)
    return trace


def _build_trace(times, states, outs, state_names, h):
    acc = {}
    for name, vals in outs.items():
        running = np.empty_like(vals)
        if len(vals):
            running[0] = 0.0
            np.cumsum((vals[1:] + vals[:-1]) * (0.5 * h), out=running[1:])
        acc[name] = running
    return SimTrace(times, states, outs, acc, list(state_names))


def run_benchmark_case(case, t_end=500.0, h=DEFAULT_STEP,
                       gain_mode="constant", start=None):
    """Integrate one benchmark controller and return its trace.

    case: one of CASES.  Outputs always include u, psi = x1 - 1,
    delta_theta, and the three parameter estimates; the chain cases also
    record the observer gap and the gap between the intermediate control
    at the observer and at the coordinate it stands in for.  start
    overrides the case's frozen initial state.
    """
    if case == "finform" or case == "finform_tanh":
        tanh_inner = case == "finform_tanh"
        outputs, names = _make_chain_outputs(tanh_inner, gain_mode)
        s0 = chain_start() if start is None else start
        return _integrate(_make_chain_rhs(tanh_inner, gain_mode), outputs,
                          names, s0, t_end, h, CHAIN_STATE_NAMES)
    if case == "classic":
        s0 = classic_start() if start is None else start
        return _integrate(_classic_rhs, _classic_outputs, _BASE_OUT_NAMES,
                          s0, t_end, h, CLASSIC_STATE_NAMES)
    if case == "tuning":
        s0 = tuning_start() if start is None else start
        return _integrate(_tuning_rhs, _tuning_outputs, _BASE_OUT_NAMES,
                          s0, t_end, h, TUNING_STATE_NAMES)
    raise ValidationError("unknown benchmark case %r, expected one of %s"
                          % (case, CASES), key="case")


def benchmark_energies(t_end=500.0, h=DEFAULT_STEP, cases=CASES):
    """Control energy of each benchmark case, keyed by case name."""
    out = {}
    for case in cases:
        trace = run_benchmark_case(case, t_end=t_end, h=h)
        out[case] = control_energy(trace)
    return out
