"""Goal functions, target dynamics, and the certainty-equivalence control law.

The control objective is always "drive psi(x, t) to zero with prescribed
transient psi_dot = -phi(psi)". Gradients are user-supplied closures; a
finite-difference cross-check validates them at scenario start instead of
pulling in automatic differentiation.
"""

import numpy as np

from .errors import NoSolution, SingularControlDirection, ValidationError
from .numeric import fd_derivative

DELTA_1_DEFAULT = 1e-6


class GoalSpec:
    """psi, its gradients, the target map phi, and Q(s) = int_0^s phi."""

    def __init__(self, psi, grad_x_psi, dpsi_dt, phi, Q):
        self.psi = psi
        self.grad_x_psi = grad_x_psi
        self.dpsi_dt = dpsi_dt
        self.phi = phi
        self.Q = Q


class Parameterization:
    """Regressor alpha(x,t), uncertainty z(x,theta,t), sector constants.

    D bounds |z(x,a,t) - z(x,b,t)| <= D |alpha(x,t)^T (a-b)|; D1 (optional)
    is the matching lower sector constant, D1 <= D.

    grad_x_alpha (x,t) -> matrix[d x n] and dalpha_dt (x,t) -> vector[d]
    are optional exact regressor derivatives; consumers fall back to
    finite differences when they are absent.
    """

    def __init__(self, alpha, z, D, D1=None, grad_x_alpha=None,
                 dalpha_dt=None):
        self.alpha = alpha
        self.z = z
        self.D = float(D)
        self.D1 = None if D1 is None else float(D1)
        self.grad_x_alpha = grad_x_alpha
        self.dalpha_dt = dalpha_dt
        if self.D1 is not None and self.D1 > self.D:
            raise ValidationError("D1 must not exceed D", key="D1")


# ---------------------------------------------------------------------------
# target-dynamics catalog: the choice of phi is up to the designer

def phi_linear(K):
    """phi(s) = K s with Q(s) = K s^2 / 2."""
    K = float(K)
    return (lambda s: K * s), (lambda s: 0.5 * K * s * s)


def phi_cubic():
    """phi(s) = s^3 with Q(s) = s^4 / 4."""
    return (lambda s: s ** 3), (lambda s: 0.25 * s ** 4)


def phi_saturating(K):
    """phi(s) = K tanh(s) with Q(s) = K log cosh(s)."""
    K = float(K)
    # log(cosh(s)) written overflow-safe for |s| beyond ~700
    def Q(s):
        a = abs(s)
        return K * (a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0))
    return (lambda s: K * np.tanh(s)), Q


def certainty_equiv_control(plant, goal, par, x, theta_hat, t,
                            delta_1=DELTA_1_DEFAULT):
    """Feedback computed as if theta_hat were the truth.

    u = (L_g psi)^(-1) (-phi(psi) - L_f psi - L_nu(x,theta_hat) psi - dpsi/dt).
    Substituted into the plant this yields the error model
    psi_dot = -phi(psi) + z(x, theta, t) - z(x, theta_hat, t).

    `plant` may be a PartitionedPlant or its controller_view(); only the
    structural fields f, g, nu, m are touched, never the true parameters.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(goal.grad_x_psi(x, t), dtype=float)
    lg = float(grad @ np.asarray(plant.g(x), dtype=float))
    if abs(lg) <= delta_1:
        raise SingularControlDirection(
            "|L_g psi| = %.3e at or below floor %.3e" % (abs(lg), delta_1),
            value=lg, floor=delta_1)
    lf = float(grad @ np.asarray(plant.f(x), dtype=float))
    nu_hat = np.asarray(plant.nu(x, np.asarray(theta_hat, dtype=float)),
                        dtype=float)
    l_nu = float(grad[plant.m:] @ nu_hat)
    return (-goal.phi(goal.psi(x, t)) - lf - l_nu
            - float(goal.dpsi_dt(x, t))) / lg


def error_residual(trace, goal, par):
    """Per-sample defect of the error model along a finished run.

    residual = fd(psi) + phi(psi) - (z(x,theta,t) - z(x,theta_hat,t)).
    The mismatch term is read from the trace output "z_mismatch" when the
    scenario recorded it, and taken as zero otherwise (matched-parameter
    runs). A correctly closed loop leaves an O(h^2) residual.
    """
    psi = trace.output("psi")
    psi_dot = fd_derivative(trace.times, psi)
    mismatch = trace.outputs.get("z_mismatch")
    if mismatch is None:
        mismatch = np.zeros_like(psi)
    return psi_dot + np.array([goal.phi(s) for s in psi]) - mismatch


def lambda_of(goal, d, psi_max=1e6, tol=1e-10):
    """Inverse of Q on the nonnegative axis, by bisection.

    Returns the |psi| with Q(|psi|) = d. Raises NoSolution when Q never
    reaches d below psi_max.
    """
    d = float(d)
    if d < 0:
        raise NoSolution("negative level %r" % (d,))
    if d == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while goal.Q(hi) < d:
        hi *= 2.0
        if hi > psi_max:
            raise NoSolution("Q does not reach %.6g below psi_max=%.3g"
                             % (d, psi_max))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if goal.Q(mid) < d:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def check_gradients(goal, xs, ts, rel_tol=1e-5, step=1e-6):
    """Finite-difference validation of the supplied psi gradients.

    Raises ValidationError naming the failing closure. Run once at scenario
    start; closures are trusted afterwards.
    """
    for x in xs:
        x = np.asarray(x, dtype=float)
        for t in ts:
            grad = np.asarray(goal.grad_x_psi(x, t), dtype=float)
            for j in range(len(x)):
                e = np.zeros_like(x)
                e[j] = step * (1.0 + abs(x[j]))
                fd = (goal.psi(x + e, t) - goal.psi(x - e, t)) / (2.0 * e[j])
                scale = max(abs(fd), abs(grad[j]), 1.0)
                if abs(fd - grad[j]) > rel_tol * scale:
                    raise ValidationError(
                        "grad_x_psi[%d] disagrees with finite difference "
                        "at x=%s t=%s (%.3e vs %.3e)" % (j, x, t, grad[j], fd),
                        key="grad_x_psi")
            dt = step * (1.0 + abs(t))
            fd_t = (goal.psi(x, t + dt) - goal.psi(x, t - dt)) / (2.0 * dt)
            got = float(goal.dpsi_dt(x, t))
            scale = max(abs(fd_t), abs(got), 1.0)
            if abs(fd_t - got) > rel_tol * scale:
                raise ValidationError(
                    "dpsi_dt disagrees with finite difference at x=%s t=%s"
                    % (x, t), key="dpsi_dt")


def sector_worst_product(par, rng, x_low, x_high, th_low, th_high,
                         n=10_000, t=0.0):
    """Smallest sampled (z(a)-z(b)) * alpha^T (a-b) over non-degenerate draws.

    Positive result means the monotone-sector condition held at every sampled
    pair inside the box. Pairs with equal z values are skipped, matching the
    condition's "whenever z values differ" qualifier.
    """
    x_low = np.asarray(x_low, dtype=float)
    x_high = np.asarray(x_high, dtype=float)
    th_low = np.asarray(th_low, dtype=float)
    th_high = np.asarray(th_high, dtype=float)
    worst = np.inf
    for _ in range(n):
        x = rng.uniform(x_low, x_high)
        a = rng.uniform(th_low, th_high)
        b = rng.uniform(th_low, th_high)
        dz = par.z(x, a, t) - par.z(x, b, t)
        if dz == 0.0:
            continue
        lin = float(np.asarray(par.alpha(x, t)) @ (a - b))
        worst = min(worst, dz * lin)
    return worst
