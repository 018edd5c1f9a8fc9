"""Auxiliary observers and cascade assembly for finite-form estimation.

When some state a regressor depends on is itself driven by the unknown
parameters, the integral channel of a finite-form estimator can no longer
be realized from measured signals alone.  The way out is substitution: an
auxiliary system with known right-hand side produces a stand-in for the
offending coordinates, every regressor evaluation moves to the surrogate
state, and high-gain damping in the auxiliary dynamics absorbs the
substitution error.  This module provides three layers of that idea:

- ``linear_extension`` builds a gradient-type auxiliary observer for
  plants whose uncertain block is linear in the parameters, and
  ``embedded_control`` / ``embedded_estimator_rhs`` run the certainty
  equivalence controller and the finite-form channel on the surrogate.
- ``CascadeObserverStack`` / ``cascade_observer_stage_rhs`` give the
  per-stage observers used for strict-feedback chains, one substituted
  coordinate per stage.
- ``cascade_design`` assembles intermediate controls, stage estimators
  and observers into one closed-loop extended system for chains of
  length one or two.
"""

import numpy as np
from scipy.integrate import quad_vec

from .errors import (
    DimensionMismatch,
    NotLinearlyParameterized,
    QuadratureFailure,
    SingularControlDirection,
    StageAssumptionViolated,
    ValidationError,
    VariantHypothesisViolated,
)
from .finite_form import GRAD_STEP, _alpha_dt, _alpha_dx, gamma_apply
from .numeric import OdeSystem

VARIANTS = ("P8_leaky", "P9_alpha_independent", "P9_psi_matched")


class AuxiliarySystem:
    """Known-dynamics stand-in for part of the plant state.

    r: auxiliary state dimension.
    f_xi: (x, xi, t, u) -> R^r, auxiliary right-hand side.
    h_xi: xi -> replacement values for the substituted coordinates.
    xi0: initial auxiliary state, shape (r,).
    replaces: plant coordinate indices h_xi stands in for, in order.
    """

    def __init__(self, r, f_xi, h_xi, xi0, replaces):
        self.r = int(r)
        self.f_xi = f_xi
        self.h_xi = h_xi
        self.xi0 = np.asarray(xi0, dtype=float)
        self.replaces = tuple(int(j) for j in replaces)
        if self.xi0.shape != (self.r,):
            raise DimensionMismatch(
                "xi0 has shape %s, expected (%d,)" % (self.xi0.shape, self.r))
        out = np.atleast_1d(np.asarray(h_xi(self.xi0), dtype=float))
        if out.shape != (len(self.replaces),):
            raise DimensionMismatch(
                "h_xi returns shape %s for %d replaced coordinates"
                % (out.shape, len(self.replaces)))


def surrogate_state(aux, x, xi):
    """State vector with the replaced coordinates taken from the observer."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    vals = np.atleast_1d(np.asarray(aux.h_xi(np.asarray(xi, dtype=float)),
                                    dtype=float))
    for k, j in enumerate(aux.replaces):
        out[j] = vals[k]
    return out


def _as_gain(lam):
    if callable(lam):
        return lam
    val = float(lam)
    return lambda x, xi, t: val


def linear_extension(plant, lambda1, lambda2, Gamma1, x2pp_indices=None,
                     xi0=None, box=2.0, n_samples=40, seed=0, tol=1e-8):
    """Gradient observer for a parameter-linear uncertain block.

    The selected coordinates x'' (default: every uncertain row) must obey
    d/dt x'' = f'' + g'' u + eta(x) theta.  The auxiliary state is
    (xi1, xi2): xi1 tracks x'' with feedback gain lambda1^2 + lambda2^2,
    xi2 is a gradient estimate of theta driven through Gamma1.  Returns an
    AuxiliarySystem whose h_xi exposes xi1.

    Raises NotLinearlyParameterized when sampling detects that the block
    is not of the form eta(x) theta.
    """
    if x2pp_indices is None:
        rows = tuple(range(plant.m, plant.n))
    else:
        rows = tuple(int(j) for j in x2pp_indices)
    for j in rows:
        if j < plant.m or j >= plant.n:
            raise DimensionMismatch(
                "row %d is not an uncertain coordinate of the plant" % j)
    block = [j - plant.m for j in rows]
    nb = len(block)
    p = plant.theta_dim

    def eta_of(x):
        base = np.asarray(plant.nu(x, np.zeros(p)), dtype=float)[block]
        cols = np.empty((nb, p))
        for k in range(p):
            unit = np.zeros(p)
            unit[k] = 1.0
            cols[:, k] = np.asarray(plant.nu(x, unit), dtype=float)[block]
            cols[:, k] -= base
        return cols

    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        x = rng.uniform(-box, box, size=plant.n)
        theta = rng.uniform(-box, box, size=p)
        nu_val = np.asarray(plant.nu(x, theta), dtype=float)[block]
        zero_val = np.asarray(plant.nu(x, np.zeros(p)), dtype=float)[block]
        predicted = eta_of(x) @ theta
        scale = 1.0 + np.max(np.abs(nu_val))
        if np.max(np.abs(zero_val)) > tol * scale:
            raise NotLinearlyParameterized(
                "uncertain block is nonzero at theta = 0")
        if np.max(np.abs(nu_val - predicted)) > tol * scale:
            raise NotLinearlyParameterized(
                "uncertain block is not linear in the parameters")

    lam1 = _as_gain(lambda1)
    lam2 = _as_gain(lambda2)
    Gamma1 = float(Gamma1)
    if Gamma1 <= 0.0:
        raise ValidationError("Gamma1 must be positive", key="Gamma1")

    def f_xi(x, xi, t, u=0.0):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        xi1 = xi[:nb]
        xi2 = xi[nb:]
        err = x[list(rows)] - xi1
        f = np.asarray(plant.f(x), dtype=float)
        g = np.asarray(plant.g(x), dtype=float)
        eta = eta_of(x)
        lbar = lam1(x, xi, t) ** 2 + lam2(x, xi, t) ** 2
        d1 = f[list(rows)] + g[list(rows)] * u + eta @ xi2 + lbar * err
        d2 = Gamma1 * (eta.T @ err)
        return np.concatenate([d1, d2])

    if xi0 is None:
        xi0 = np.zeros(nb + p)
    return AuxiliarySystem(nb + p, f_xi, lambda xi: xi[:nb], xi0, rows)


def _h_jacobian(aux, xi):
    xi = np.asarray(xi, dtype=float)
    nb = len(aux.replaces)
    jac = np.empty((nb, aux.r))
    for k in range(aux.r):
        h = GRAD_STEP * (1.0 + abs(xi[k]))
        up = xi.copy()
        up[k] += h
        dn = xi.copy()
        dn[k] -= h
        hi = np.atleast_1d(np.asarray(aux.h_xi(up), dtype=float))
        lo = np.atleast_1d(np.asarray(aux.h_xi(dn), dtype=float))
        jac[:, k] = (hi - lo) / (2.0 * h)
    return jac


def embedded_known_rates(plant, aux, x, xi, t, u):
    """Measurable rate of every coordinate of the surrogate state.

    Raw coordinates move with the known part f + g u of the plant; the
    replaced coordinates move with the auxiliary dynamics pushed through
    h_xi.  Returns a sorted list of (index, rate) covering all n slots.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(plant.f(x), dtype=float)
    g = np.asarray(plant.g(x), dtype=float)
    rates = {j: f[j] + g[j] * u for j in range(plant.n)}
    jac = _h_jacobian(aux, xi)
    repl = jac @ np.asarray(aux.f_xi(x, xi, t, u), dtype=float)
    for k, j in enumerate(aux.replaces):
        rates[j] = float(repl[k])
    return sorted(rates.items())


def embedded_control(plant, goal, par, aux, x, theta_hat, t=0.0, xi=None,
                     delta_1=1e-6):
    """Certainty equivalence control with the model read at the surrogate.

    Only the model compensation term moves to the surrogate state; psi,
    its gradient against the known drift, and the control direction stay
    at the measured state.  With xi None the surrogate is the state
    itself and this reduces to the plain certainty equivalence law.
    """
    x = np.asarray(x, dtype=float)
    x_sub = x if xi is None else surrogate_state(aux, x, xi)
    grad = np.asarray(goal.grad_x_psi(x, t), dtype=float)
    g = np.asarray(plant.g(x), dtype=float)
    lg = float(grad @ g)
    if abs(lg) <= delta_1:
        raise SingularControlDirection(
            "control direction %.3e within floor %.3e" % (lg, delta_1),
            value=lg, floor=delta_1)
    lf = float(grad @ np.asarray(plant.f(x), dtype=float))
    grad_sub = np.asarray(goal.grad_x_psi(x_sub, t), dtype=float)
    model = float(grad_sub[plant.m:] @ np.asarray(
        plant.nu(x_sub, np.asarray(theta_hat, dtype=float)), dtype=float))
    psi = goal.psi(x, t)
    return (-goal.phi(psi) - lf - model - goal.dpsi_dt(x, t)) / lg


def embedded_theta_hat(est, goal, par, aux, x, xi, t, theta_I=None):
    """Parameter estimate with psi at the state, regressor terms at the
    surrogate."""
    x = np.asarray(x, dtype=float)
    x_sub = surrogate_state(aux, x, xi)
    if theta_I is None:
        theta_I = est.theta_I
    psi = goal.psi(x, t)
    alpha = np.asarray(par.alpha(x_sub, t), dtype=float)
    Psi = np.asarray(est.provider.Psi(x_sub, t), dtype=float)
    return gamma_apply(est.Gamma, psi * alpha - Psi + theta_I)


def embedded_estimator_rhs(variant, est, goal, par, plant, aux, x, xi, t, u,
                           theta_I=None):
    """Integral-channel rate for an estimator run on the surrogate state.

    variant selects which set of standing hypotheses is enforced on each
    call (sampled at the current state, VariantHypothesisViolated when
    broken):

    - "P8_leaky": no structural requirement; the estimator leaks with
      est.leak_lambda toward zero to absorb the substitution error.
    - "P9_alpha_independent": the regressor must not depend on the
      replaced coordinates, so the realization needs no Psi at all.
    - "P9_psi_matched": psi must agree at state and surrogate; the plain
      channel is exact, no leak.
    """
    if variant not in VARIANTS:
        raise ValueError("unknown variant %r, expected one of %s"
                         % (variant, ", ".join(VARIANTS)))
    x = np.asarray(x, dtype=float)
    x_sub = surrogate_state(aux, x, xi)
    psi = goal.psi(x, t)
    alpha = np.asarray(par.alpha(x_sub, t), dtype=float)
    alpha_scale = 1.0 + np.max(np.abs(alpha))

    if variant == "P9_alpha_independent":
        for j in aux.replaces:
            col = _alpha_dx(par, x_sub, t, j)
            if np.max(np.abs(col)) > 1e-6 * alpha_scale:
                raise VariantHypothesisViolated(
                    "regressor depends on replaced coordinate %d" % j)
    if variant == "P9_psi_matched":
        psi_sub = goal.psi(x_sub, t)
        if abs(psi - psi_sub) > 1e-6 * (1.0 + abs(psi)):
            raise VariantHypothesisViolated(
                "goal distance differs between state and surrogate")

    if est.beta is not None:
        target = est.beta(x, t)
    else:
        target = goal.phi(psi)
    rhs = target * alpha - psi * _alpha_dt(par, x_sub, t)
    use_Psi = variant != "P9_alpha_independent"
    if use_Psi:
        rhs = rhs + np.asarray(est.provider.dPsi_dt(x_sub, t), dtype=float)
    for j, rate in embedded_known_rates(plant, aux, x, xi, t, u):
        term = psi * _alpha_dx(par, x_sub, t, j)
        if use_Psi:
            term = term - np.asarray(
                est.provider.grad_x_Psi(x_sub, t), dtype=float)[:, j]
        rhs = rhs - term * rate
    if variant == "P8_leaky" and est.leak_lambda > 0.0:
        rhs = rhs - est.leak_lambda * embedded_theta_hat(
            est, goal, par, aux, x, xi, t, theta_I=theta_I)
    return rhs


class CascadeStage:
    """One stage of a strict-feedback chain: model, regressor, damping.

    alpha: (q, t) -> R^d, regressor; must only read q[0..i] at stage i.
    alpha_antideriv: optional (q, t) -> R^d, any antiderivative of alpha
        along coordinate i (the base point is free; it only shifts the
        integral channel's initial value).  Without it the antiderivative
        is computed by quadrature from zero.
    z_hat: (theta, q, t) -> scalar, certainty equivalence model output.
    phi: scalar error feedback for the stage's goal distance.
    d*_ closures are optional exact derivatives; finite differences are
    used where they are absent.
    """

    def __init__(self, theta_dim, alpha, z_hat, phi, alpha_antideriv=None,
                 dalpha_dq=None, dA_dq=None, dz_dtheta=None, dz_dq=None,
                 dphi=None, gamma_ctrl=1.0, gamma_obs=1.0):
        self.theta_dim = int(theta_dim)
        self.alpha = alpha
        self.z_hat = z_hat
        self.phi = phi
        self.alpha_antideriv = alpha_antideriv
        self.dalpha_dq = dalpha_dq
        self.dA_dq = dA_dq
        self.dz_dtheta = dz_dtheta
        self.dz_dq = dz_dq
        self.dphi = dphi
        self.gamma_ctrl = float(gamma_ctrl)
        self.gamma_obs = float(gamma_obs)
        if self.theta_dim < 1:
            raise ValidationError("theta_dim must be >= 1", key="theta_dim")
        if self.gamma_ctrl <= 0.0 or self.gamma_obs <= 0.0:
            raise ValidationError("stage gains must be positive",
                                  key="gamma")


def _stage_alpha(stage, q, t):
    val = np.asarray(stage.alpha(q, t), dtype=float)
    if val.shape != (stage.theta_dim,):
        raise DimensionMismatch(
            "stage regressor has shape %s, expected (%d,)"
            % (val.shape, stage.theta_dim))
    return val


def _stage_A(stage, i, q, t):
    """Antiderivative of the regressor along coordinate i, at q."""
    if stage.alpha_antideriv is not None:
        return np.asarray(stage.alpha_antideriv(q, t), dtype=float)

    def integrand(s):
        point = np.asarray(q, dtype=float).copy()
        point[i] = s
        return np.asarray(stage.alpha(point, t), dtype=float)

    try:
        val, _ = quad_vec(integrand, 0.0, float(q[i]),
                          epsabs=1e-12, epsrel=1e-10)
    except Exception as exc:
        raise QuadratureFailure(
            "regressor antiderivative: %s" % exc) from exc
    if not np.all(np.isfinite(val)):
        raise QuadratureFailure(
            "regressor antiderivative is not finite at the query point")
    return val


def _stage_alpha_dq(stage, q, t):
    if stage.dalpha_dq is not None:
        return np.asarray(stage.dalpha_dq(q, t), dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.empty((stage.theta_dim, len(q)))
    for j in range(len(q)):
        h = GRAD_STEP * (1.0 + abs(q[j]))
        up = q.copy()
        up[j] += h
        dn = q.copy()
        dn[j] -= h
        out[:, j] = (_stage_alpha(stage, up, t)
                     - _stage_alpha(stage, dn, t)) / (2.0 * h)
    return out


def _stage_A_dq(stage, i, q, t):
    if stage.dA_dq is not None:
        return np.asarray(stage.dA_dq(q, t), dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.empty((stage.theta_dim, len(q)))
    for j in range(len(q)):
        if j == i:
            # fundamental theorem: the i-column is the regressor itself
            out[:, j] = _stage_alpha(stage, q, t)
            continue
        h = GRAD_STEP * (1.0 + abs(q[j]))
        up = q.copy()
        up[j] += h
        dn = q.copy()
        dn[j] -= h
        out[:, j] = (_stage_A(stage, i, up, t)
                     - _stage_A(stage, i, dn, t)) / (2.0 * h)
    return out


def _stage_dz_dtheta(stage, theta, q, t):
    if stage.dz_dtheta is not None:
        return np.asarray(stage.dz_dtheta(theta, q, t), dtype=float)
    theta = np.asarray(theta, dtype=float)
    out = np.empty(stage.theta_dim)
    for k in range(stage.theta_dim):
        h = GRAD_STEP * (1.0 + abs(theta[k]))
        up = theta.copy()
        up[k] += h
        dn = theta.copy()
        dn[k] -= h
        out[k] = (float(stage.z_hat(up, q, t))
                  - float(stage.z_hat(dn, q, t))) / (2.0 * h)
    return out


def _stage_dz_dq(stage, theta, q, t):
    if stage.dz_dq is not None:
        return np.asarray(stage.dz_dq(theta, q, t), dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.empty(len(q))
    for j in range(len(q)):
        h = GRAD_STEP * (1.0 + abs(q[j]))
        up = q.copy()
        up[j] += h
        dn = q.copy()
        dn[j] -= h
        out[j] = (float(stage.z_hat(theta, up, t))
                  - float(stage.z_hat(theta, dn, t))) / (2.0 * h)
    return out


def _stage_dphi(stage, s):
    if stage.dphi is not None:
        return float(stage.dphi(s))
    h = GRAD_STEP * (1.0 + abs(s))
    return (float(stage.phi(s + h)) - float(stage.phi(s - h))) / (2.0 * h)


def _damping_gain(factors, damping, i, state, z, t):
    """Observer feedback gain for stage i.

    damping wins when given: a scalar, or a callable (i, state, z, t).
    factors supplies the growth-rate form Fbar^2 + sum of tail Dbar^2 + 1;
    Fbar may be a scalar, a per-stage sequence, or a callable like
    damping.  With neither the gain is 1.
    """
    if damping is not None:
        if callable(damping):
            return float(damping(i, state, z, t))
        return float(damping)
    if factors is None:
        return 1.0
    F = factors.Fbar
    if isinstance(F, (list, tuple, np.ndarray)):
        F = F[i]
    F = float(F(i, state, z, t)) if callable(F) else float(F)
    tail = 0.0
    for d in tuple(factors.Dbar_list)[i:]:
        tail += float(d) ** 2
    return F * F + tail + 1.0


def _obs_estimate(stage, i, c, xi_i, theta_I, gamma, t, alpha0=None, A=None):
    """By-parts observer estimate: psi_obs = x_i - xi_i has slope one, so
    the proportional part is psi0 alpha0 + A with psi0 = -xi_i."""
    if alpha0 is None:
        c0 = np.asarray(c, dtype=float).copy()
        c0[i] = 0.0
        alpha0 = _stage_alpha(stage, c0, t)
    if A is None:
        A = _stage_A(stage, i, c, t)
    return gamma * (-xi_i * alpha0 + A + np.asarray(theta_I, dtype=float))


def _obs_channel_rhs(stage, i, c, xi_i, target, xi_dots, t, alpha=None,
                     alpha0=None, dalpha0=None, dA=None):
    """Integral-channel rate for the stage observer's estimator.

    xi_dots must hold the realized observer rates for coordinates
    0..i; coordinates below i enter through the channel's correction
    terms, coordinate i through the by-parts remainder.
    """
    c = np.asarray(c, dtype=float)
    c0 = c.copy()
    c0[i] = 0.0
    if alpha is None:
        alpha = _stage_alpha(stage, c, t)
    if alpha0 is None:
        alpha0 = _stage_alpha(stage, c0, t)
    rhs = target * alpha - (alpha - alpha0) * xi_dots[i]
    if i > 0:
        if dalpha0 is None:
            dalpha0 = _stage_alpha_dq(stage, c0, t)
        if dA is None:
            dA = _stage_A_dq(stage, i, c, t)
        for j in range(i):
            coef = -xi_i * dalpha0[:, j] + dA[:, j]
            rhs = rhs - coef * xi_dots[j]
    return rhs


class CascadeObserverStack:
    """Per-stage observers with their finite-form channels.

    stages: CascadeStage list, outermost first.
    xi: current observer states, one scalar per stage.
    theta_I: list of integral-channel states, theta_I[i] shape (d_i,).
    gammas: per-stage estimator gains (defaults to each stage's
        gamma_obs).
    factors / damping: observer feedback gain, see _damping_gain.
    modulate_target: multiply the channel target by the gain as well.
    """

    def __init__(self, stages, xi, theta_I, gammas=None, factors=None,
                 damping=None, modulate_target=False):
        self.stages = list(stages)
        self.xi = np.asarray(xi, dtype=float)
        self.theta_I = [np.asarray(v, dtype=float) for v in theta_I]
        if gammas is None:
            gammas = [st.gamma_obs for st in self.stages]
        self.gammas = [float(g) for g in gammas]
        self.factors = factors
        self.damping = damping
        self.modulate_target = bool(modulate_target)
        k = len(self.stages)
        if self.xi.shape != (k,) or len(self.theta_I) != k:
            raise DimensionMismatch(
                "stack needs one observer state and one channel per stage")
        for st, v in zip(self.stages, self.theta_I):
            if v.shape != (st.theta_dim,):
                raise DimensionMismatch(
                    "channel state has shape %s, expected (%d,)"
                    % (v.shape, st.theta_dim))

    def context(self, i, x):
        """Stage-i context: coordinates below i replaced by observers."""
        c = np.asarray(x, dtype=float).copy()
        c[:i] = self.xi[:i]
        return c

    def gain(self, i, x, z=None, t=0.0):
        return _damping_gain(self.factors, self.damping, i, x, z, t)

    def estimate(self, i, x, t=0.0):
        c = self.context(i, x)
        return _obs_estimate(self.stages[i], i, c, self.xi[i],
                             self.theta_I[i], self.gammas[i], t)


def cascade_observer_stage_rhs(stack, i, x, z_context=None, u=0.0, t=0.0):
    """Observer and channel rates for stage i of the stack.

    Stage i reads only x[0..i+1] (its own coupling input) plus the
    observers below it; z_context is handed through to gain closures
    untouched.  Returns (xi_dot_i, theta_I_dot_i).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if not 0 <= i < len(stack.stages):
        raise DimensionMismatch("stage %d outside the stack" % i)

    xi_dots = np.empty(i + 1)
    for j in range(i + 1):
        st = stack.stages[j]
        c = stack.context(j, x)
        theta = _obs_estimate(st, j, c, stack.xi[j], stack.theta_I[j],
                              stack.gammas[j], t)
        gain = stack.gain(j, x, z_context, t)
        coupling = x[j + 1] if j + 1 < n else u
        xi_dots[j] = (gain * (x[j] - stack.xi[j])
                      + float(st.z_hat(theta, c, t)) + coupling)

    st = stack.stages[i]
    c = stack.context(i, x)
    psi_obs = x[i] - stack.xi[i]
    if stack.modulate_target:
        target = stack.gain(i, x, z_context, t) * psi_obs
    else:
        target = psi_obs
    channel = _obs_channel_rhs(st, i, c, stack.xi[i], target, xi_dots, t)
    return xi_dots[i], channel


class CascadeSystem(OdeSystem):
    """Closed-loop extended system for a strict-feedback chain.

    State layout: plant coordinates, observer states for stages below the
    last, then per stage the control channel followed by its observer
    channel.  The intermediate control of each stage is differentiated
    exactly through the chain, so stage regressors and models need
    derivative closures only for speed, not correctness.
    """

    def __init__(self, plant, goal, stages, factors=None, damping=None,
                 modulate_target=False, goal_slope=1.0):
        self.plant = plant
        self.goal = goal
        self.stages = list(stages)
        self.factors = factors
        self.damping = damping
        self.modulate_target = bool(modulate_target)
        self.goal_slope = float(goal_slope)
        n = plant.n
        self.n = n
        names = ["x%d" % (i + 1) for i in range(n)]
        names += ["xi%d" % (i + 1) for i in range(n - 1)]
        self.ctrl_slices = []
        self.obs_slices = []
        offset = 2 * n - 1
        for i, st in enumerate(self.stages):
            d = st.theta_dim
            self.ctrl_slices.append(slice(offset, offset + d))
            if d == 1:
                names.append("ac%d" % (i + 1))
            else:
                names += ["ac%d_%d" % (i + 1, k + 1) for k in range(d)]
            offset += d
            if i < n - 1:
                self.obs_slices.append(slice(offset, offset + d))
                if d == 1:
                    names.append("ao%d" % (i + 1))
                else:
                    names += ["ao%d_%d" % (i + 1, k + 1) for k in range(d)]
                offset += d
        self.state_names = names
        super().__init__(offset, self._rhs)

    def _rhs(self, t, state):
        return self._pieces(t, np.asarray(state, dtype=float))["rate"]

    def _context(self, state, i):
        c = np.array(state[: self.n], dtype=float)
        c[:i] = state[self.n: self.n + i]
        return c

    def _gain(self, i, state, t):
        return _damping_gain(self.factors, self.damping, i, state, None, t)

    def _ctrl_chain(self, c, a_ctrl, t, upto, grads=False):
        """Stages 0..upto evaluated at one shared context.

        Each record carries the stage goal distance, estimate and
        intermediate control; with grads also their exact derivatives
        against the context and every channel state below, propagated
        through the recursion.
        """
        n = self.n
        out = []
        for i in range(upto + 1):
            st = self.stages[i]
            c0 = c.copy()
            c0[i] = 0.0
            alpha = _stage_alpha(st, c, t)
            alpha0 = _stage_alpha(st, c0, t)
            A = _stage_A(st, i, c, t)
            if i == 0:
                psi = float(self.goal.psi(c, t))
                psi0 = float(self.goal.psi(c0, t))
                slope = self.goal_slope
            else:
                prev = out[-1]
                psi = float(c[i]) - prev["u"]
                psi0 = -prev["u"]
                slope = 1.0
            theta = st.gamma_ctrl * (psi0 * alpha0 + slope * A + a_ctrl[i])
            phi_val = float(st.phi(psi))
            u_i = -phi_val / slope - float(st.z_hat(theta, c, t))
            rec = {"psi": psi, "psi0": psi0, "alpha": alpha,
                   "alpha0": alpha0, "A": A, "theta": theta,
                   "phi": phi_val, "u": u_i, "slope": slope}
            if grads:
                dalpha0 = _stage_alpha_dq(st, c0, t)
                dalpha0[:, i] = 0.0  # slot i is frozen at zero
                dA = _stage_A_dq(st, i, c, t)
                if i == 0:
                    dpsi0_dc = np.zeros(n)
                    dpsi_dc = np.zeros(n)
                    dpsi_dc[0] = self.goal_slope
                    dpsi_da = {}
                    dpsi0_da = {}
                else:
                    dpsi0_dc = -prev["du_dc"]
                    dpsi_dc = dpsi0_dc.copy()
                    dpsi_dc[i] += 1.0
                    dpsi0_da = {j: -v for j, v in prev["du_da"].items()}
                    dpsi_da = dpsi0_da
                dtheta_dc = st.gamma_ctrl * (np.outer(alpha0, dpsi0_dc)
                                             + psi0 * dalpha0 + slope * dA)
                dtheta_da = {j: st.gamma_ctrl * np.outer(alpha0, v)
                             for j, v in dpsi0_da.items()}
                dtheta_da[i] = st.gamma_ctrl * np.eye(st.theta_dim)
                dphi = _stage_dphi(st, psi)
                dz_dth = _stage_dz_dtheta(st, theta, c, t)
                dz_dq = _stage_dz_dq(st, theta, c, t)
                du_dc = (-(dphi / slope) * dpsi_dc - dz_dq
                         - dz_dth @ dtheta_dc)
                du_da = {j: -(dphi / slope) * dpsi_da[j]
                         - dz_dth @ dtheta_da[j] for j in dpsi_da}
                du_da[i] = -(dz_dth @ dtheta_da[i])
                rec.update(dpsi_dc=dpsi_dc, dpsi_da=dpsi_da,
                           dalpha0=dalpha0, dA_dq=dA, du_dc=du_dc,
                           du_da=du_da)
            out.append(rec)
        return out

    def _pieces(self, t, state):
        n = self.n
        x = state[:n]
        xi = state[n: 2 * n - 1]
        a_ctrl = [state[sl] for sl in self.ctrl_slices]
        a_obs = [state[sl] for sl in self.obs_slices]
        contexts = [self._context(state, i) for i in range(n)]
        chains = [self._ctrl_chain(contexts[i], a_ctrl, t, i, grads=(i > 0))
                  for i in range(n)]

        gains = np.empty(n - 1)
        xi_dot = np.empty(n - 1)
        theta_obs = []
        for i in range(n - 1):
            st = self.stages[i]
            rec = chains[i][i]
            th = _obs_estimate(st, i, contexts[i], xi[i], a_obs[i],
                               st.gamma_obs, t, alpha0=rec["alpha0"],
                               A=rec["A"])
            theta_obs.append(th)
            gains[i] = self._gain(i, state, t)
            xi_dot[i] = (gains[i] * (x[i] - xi[i])
                         + float(st.z_hat(th, contexts[i], t)) + x[i + 1])

        a_ctrl_dot = []
        for i in range(n):
            rec = chains[i][i]
            rate = rec["phi"] * rec["alpha"]
            if i > 0:
                diff = rec["alpha0"] - rec["alpha"]
                for j in range(i):
                    coef = (rec["dpsi_dc"][j] * diff
                            + rec["psi0"] * rec["dalpha0"][:, j]
                            + rec["slope"] * rec["dA_dq"][:, j])
                    rate = rate - coef * xi_dot[j]
                    rate = rate - diff * float(
                        rec["dpsi_da"][j] @ a_ctrl_dot[j])
            a_ctrl_dot.append(rate)

        a_obs_dot = []
        for i in range(n - 1):
            rec = chains[i][i]
            psi_o = x[i] - xi[i]
            target = gains[i] * psi_o if self.modulate_target else psi_o
            a_obs_dot.append(_obs_channel_rhs(
                self.stages[i], i, contexts[i], xi[i], target, xi_dot, t,
                alpha=rec["alpha"], alpha0=rec["alpha0"],
                dalpha0=rec.get("dalpha0"), dA=rec.get("dA_dq")))

        rec_last = chains[n - 1][n - 1]
        feed = 0.0
        for j in range(n - 1):
            feed += rec_last["dpsi_dc"][j] * xi_dot[j]
            feed += float(rec_last["dpsi_da"][j] @ a_ctrl_dot[j])
        u = rec_last["u"] - feed / rec_last["slope"]

        dx = self.plant.derivative(x, u, t)
        rate = np.empty(self.dimension)
        rate[:n] = dx
        rate[n: 2 * n - 1] = xi_dot
        for i in range(n):
            rate[self.ctrl_slices[i]] = a_ctrl_dot[i]
            if i < n - 1:
                rate[self.obs_slices[i]] = a_obs_dot[i]

        return {"rate": rate, "u": u, "xi_dot": xi_dot,
                "a_ctrl_dot": a_ctrl_dot, "a_obs_dot": a_obs_dot,
                "chains": chains, "contexts": contexts,
                "theta_obs": theta_obs, "gains": gains}

    # -- read-side helpers -------------------------------------------------

    def control(self, state, t=0.0):
        return self._pieces(t, np.asarray(state, dtype=float))["u"]

    def stage_psi(self, i, state, t=0.0):
        state = np.asarray(state, dtype=float)
        c = self._context(state, i)
        a_ctrl = [state[sl] for sl in self.ctrl_slices]
        return self._ctrl_chain(c, a_ctrl, t, i)[i]["psi"]

    def goal_distance(self, state, t=0.0):
        return self.stage_psi(self.n - 1, state, t)

    def stage_control(self, i, state, t=0.0, surrogate=True):
        """Intermediate control of stage i.

        surrogate evaluates it the way stage i+1 consumes it (observer
        states substituted through slot i); otherwise slot i stays at the
        measured coordinate.
        """
        state = np.asarray(state, dtype=float)
        c = self._context(state, i + 1 if surrogate else i)
        a_ctrl = [state[sl] for sl in self.ctrl_slices]
        return self._ctrl_chain(c, a_ctrl, t, i)[i]["u"]

    def theta_ctrl(self, i, state, t=0.0):
        state = np.asarray(state, dtype=float)
        c = self._context(state, i)
        a_ctrl = [state[sl] for sl in self.ctrl_slices]
        return self._ctrl_chain(c, a_ctrl, t, i)[i]["theta"]

    def theta_obs(self, i, state, t=0.0):
        state = np.asarray(state, dtype=float)
        c = self._context(state, i)
        xi = state[self.n: 2 * self.n - 1]
        return _obs_estimate(self.stages[i], i, c, xi[i],
                             state[self.obs_slices[i]],
                             self.stages[i].gamma_obs, t)

    def stage_gain(self, i, state, t=0.0):
        return self._gain(i, np.asarray(state, dtype=float), t)

    def assemble_state(self, x0, xi0=None, ctrl0=None, obs0=None):
        """Pack plant, observer and channel initial values into one
        extended state vector (missing pieces default to zero)."""
        n = self.n
        state = np.zeros(self.dimension)
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (n,):
            raise DimensionMismatch(
                "x0 has shape %s, expected (%d,)" % (x0.shape, n))
        state[:n] = x0
        if xi0 is not None:
            state[n: 2 * n - 1] = np.asarray(xi0, dtype=float)
        for i in range(n):
            if ctrl0 is not None:
                state[self.ctrl_slices[i]] = np.atleast_1d(
                    np.asarray(ctrl0[i], dtype=float))
            if i < n - 1 and obs0 is not None:
                state[self.obs_slices[i]] = np.atleast_1d(
                    np.asarray(obs0[i], dtype=float))
        return state

    def channels_for_estimates(self, x0, xi0, theta_ctrl0, theta_obs0,
                               t=0.0):
        """Channel initial values that realize the requested estimates.

        Inverts estimate = gamma (proportional part + channel) stage by
        stage; stage i's proportional part depends on the channels below
        it through the intermediate controls, so the inversion runs in
        stage order.
        """
        n = self.n
        state = self.assemble_state(x0, xi0)
        for i in range(n):
            st = self.stages[i]
            c = self._context(state, i)
            a_ctrl = [state[sl] for sl in self.ctrl_slices]
            rec = self._ctrl_chain(c, a_ctrl, t, i)[i]
            want = np.atleast_1d(np.asarray(theta_ctrl0[i], dtype=float))
            prop = rec["psi0"] * rec["alpha0"] + rec["slope"] * rec["A"]
            state[self.ctrl_slices[i]] = want / st.gamma_ctrl - prop
            if i < n - 1:
                want = np.atleast_1d(np.asarray(theta_obs0[i], dtype=float))
                xi_i = state[n + i]
                prop = -xi_i * rec["alpha0"] + rec["A"]
                state[self.obs_slices[i]] = want / st.gamma_obs - prop
        return state


def cascade_design(plant, goal, stages, factors=None, damping=None,
                   modulate_target=False, seed=0, n_checks=20):
    """Assemble the full chain controller for a one- or two-stage plant.

    goal supplies the outermost goal distance; it must be affine in the
    first coordinate with a constant nonzero slope and read nothing
    else.  Each stage's regressor and model may only read coordinates up
    to its own.  Both properties are sampled; violations raise
    StageAssumptionViolated with the offending stage index.  Returns a
    CascadeSystem ready for the simulator.
    """
    n = plant.n
    if len(stages) != n:
        raise DimensionMismatch(
            "%d stages for a chain of length %d" % (len(stages), n))
    if n > 2:
        raise StageAssumptionViolated(
            "chains longer than two stages are not supported", stage=2)

    rng = np.random.default_rng(seed)
    slopes = []
    for _ in range(n_checks):
        c = rng.uniform(-2.0, 2.0, size=n)
        base = float(goal.psi(c, 0.0))
        h = 1e-6 * (1.0 + abs(c[0]))
        up = c.copy()
        up[0] += h
        dn = c.copy()
        dn[0] -= h
        slopes.append((float(goal.psi(up, 0.0))
                       - float(goal.psi(dn, 0.0))) / (2.0 * h))
        for j in range(1, n):
            bump = c.copy()
            bump[j] += 1.0 + rng.uniform(0.0, 1.0)
            if abs(float(goal.psi(bump, 0.0)) - base) \
                    > 1e-7 * (1.0 + abs(base)):
                raise StageAssumptionViolated(
                    "goal distance reads coordinate %d" % j, stage=0)
        if abs(float(goal.psi(c, 0.9)) - base) > 1e-7 * (1.0 + abs(base)):
            raise StageAssumptionViolated(
                "goal distance must not depend on time", stage=0)
    mean_slope = float(np.mean(slopes))
    if max(slopes) - min(slopes) > 1e-4 * (1.0 + abs(mean_slope)):
        raise StageAssumptionViolated(
            "goal distance is not affine in the first coordinate", stage=0)
    if abs(mean_slope) < 1e-9:
        raise StageAssumptionViolated(
            "goal distance does not depend on the first coordinate",
            stage=0)
    # affinity is established, so a unit difference gives the slope without
    # the rounding a difference quotient would carry into every stage
    lo = np.zeros(n)
    hi = np.zeros(n)
    hi[0] = 1.0
    slope = float(goal.psi(hi, 0.0)) - float(goal.psi(lo, 0.0))

    for i, st in enumerate(stages):
        for _ in range(n_checks):
            c = rng.uniform(-2.0, 2.0, size=n)
            theta = rng.uniform(-2.0, 2.0, size=st.theta_dim)
            alpha = _stage_alpha(st, c, 0.0)
            z_val = float(st.z_hat(theta, c, 0.0))
            scale_a = 1.0 + np.max(np.abs(alpha))
            scale_z = 1.0 + abs(z_val)
            for j in range(i + 1, n):
                bump = c.copy()
                bump[j] += 1.0 + rng.uniform(0.0, 1.0)
                if np.max(np.abs(_stage_alpha(st, bump, 0.0) - alpha)) \
                        > 1e-7 * scale_a:
                    raise StageAssumptionViolated(
                        "stage %d regressor reads coordinate %d" % (i, j),
                        stage=i)
                if abs(float(st.z_hat(theta, bump, 0.0)) - z_val) \
                        > 1e-7 * scale_z:
                    raise StageAssumptionViolated(
                        "stage %d model reads coordinate %d" % (i, j),
                        stage=i)
            if st.alpha_antideriv is not None:
                h = 1e-5 * (1.0 + abs(c[i]))
                up = c.copy()
                up[i] += h
                dn = c.copy()
                dn[i] -= h
                fd = (np.asarray(st.alpha_antideriv(up, 0.0), dtype=float)
                      - np.asarray(st.alpha_antideriv(dn, 0.0),
                                   dtype=float)) / (2.0 * h)
                if np.max(np.abs(fd - alpha)) > 1e-3 * scale_a:
                    raise StageAssumptionViolated(
                        "stage %d antiderivative does not match its "
                        "regressor" % i, stage=i)

    return CascadeSystem(plant, goal, stages, factors=factors,
                         damping=damping, modulate_target=modulate_target,
                         goal_slope=slope)
