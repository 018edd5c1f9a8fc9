"""Finite-form adaptive estimator: theta_hat = Gamma (psi alpha - Psi + theta_I).

The estimator realizes the derivative-dependent tuning law
theta_hat_dot = Gamma (psi_dot + phi(psi)) alpha without measuring psi_dot.
The price is an auxiliary function Psi whose gradient along every
uncertainty-affected coordinate must equal psi * dalpha/dx there; the
integral channel theta_I then only needs rates the controller actually
knows (time, and coordinates whose velocity is measurable or self-produced).
"""

import numpy as np
from scipy.integrate import quad_vec

from .errors import (IndependenceViolated, QuadratureFailure,
                     ValidationError)
from .numeric import fd_derivative

GRAD_STEP = 1e-6


class PsiProvider:
    """Bundles Psi and its derivatives for one realization route.

    kind is one of "closed_form", "quad_single_dim", "independent".
    Psi (x,t) -> vector[d], grad_x_Psi (x,t) -> matrix[d x n],
    dPsi_dt (x,t) -> vector[d].
    """

    KINDS = ("closed_form", "quad_single_dim", "independent")

    def __init__(self, kind, Psi, grad_x_Psi, dPsi_dt):
        if kind not in self.KINDS:
            raise ValidationError("unknown provider kind %r" % (kind,),
                                  key="kind")
        self.kind = kind
        self.Psi = Psi
        self.grad_x_Psi = grad_x_Psi
        self.dPsi_dt = dPsi_dt


class FiniteFormEstimator:
    """Configuration and integral state of one finite-form estimator.

    Gamma: positive scalar or symmetric positive-definite matrix.
    theta_I: current integral state (evolves inside the extended ODE).
    beta: optional (x,t) -> scalar replacing phi(psi) as the channel target.
    leak_lambda: nonnegative leakage gain (0 disables the robust leak).
    gain_F: optional t -> nonnegative scalar; target becomes
        phi(psi) (1 + F(t)).
    """

    def __init__(self, Gamma, theta_I, provider, beta=None, leak_lambda=0.0,
                 gain_F=None):
        self.Gamma = Gamma
        self.theta_I = np.asarray(theta_I, dtype=float)
        self.provider = provider
        self.beta = beta
        self.leak_lambda = float(leak_lambda)
        self.gain_F = gain_F
        if self.leak_lambda < 0.0:
            raise ValidationError("leak_lambda must be >= 0",
                                  key="leak_lambda")
        G = np.asarray(Gamma, dtype=float)
        if G.ndim == 2:
            if not np.allclose(G, G.T, atol=1e-12):
                raise ValidationError("Gamma must be symmetric", key="Gamma")
            if np.min(np.linalg.eigvalsh(G)) <= 0.0:
                raise ValidationError("Gamma must be positive-definite",
                                      key="Gamma")
        elif G.ndim == 0:
            if G <= 0.0:
                raise ValidationError("Gamma must be positive", key="Gamma")
        else:
            raise ValidationError("Gamma must be scalar or a square matrix",
                                  key="Gamma")


def gamma_apply(Gamma, v):
    G = np.asarray(Gamma, dtype=float)
    v = np.asarray(v, dtype=float)
    if G.ndim == 2:
        return G @ v
    return float(G) * v


def theta_hat(est, goal, par, x, t, theta_I=None):
    """theta_hat = Gamma (psi(x,t) alpha(x,t) - Psi(x,t) + theta_I)."""
    x = np.asarray(x, dtype=float)
    if theta_I is None:
        theta_I = est.theta_I
    psi = float(goal.psi(x, t))
    alpha = np.asarray(par.alpha(x, t), dtype=float)
    Psi = np.asarray(est.provider.Psi(x, t), dtype=float)
    return gamma_apply(est.Gamma, psi * alpha - Psi + theta_I)


def _alpha_dt(par, x, t):
    if par.dalpha_dt is not None:
        return np.asarray(par.dalpha_dt(x, t), dtype=float)
    h = GRAD_STEP * (1.0 + abs(t))
    a_plus = np.asarray(par.alpha(x, t + h), dtype=float)
    a_minus = np.asarray(par.alpha(x, t - h), dtype=float)
    return (a_plus - a_minus) / (2.0 * h)


def _alpha_dx(par, x, t, j):
    if par.grad_x_alpha is not None:
        return np.asarray(par.grad_x_alpha(x, t), dtype=float)[:, j]
    h = GRAD_STEP * (1.0 + abs(x[j]))
    xp = x.copy()
    xm = x.copy()
    xp[j] += h
    xm[j] -= h
    a_plus = np.asarray(par.alpha(xp, t), dtype=float)
    a_minus = np.asarray(par.alpha(xm, t), dtype=float)
    return (a_plus - a_minus) / (2.0 * h)


def theta_I_rhs(est, goal, par, plant, x, t, u, known_rates=None,
                target=None):
    """Right-hand side of the integral channel.

    theta_I_dot = target alpha + dPsi/dt - psi dalpha/dt
                  - sum_j (psi dalpha/dx_j - dPsi/dx_j) rate_j

    where j runs over coordinates with controller-known rates. By default
    those are the plant's uncertainty-independent rows (rate = f_j + g_j u);
    pass known_rates as [(index, rate), ...] to override, e.g. for observer
    coordinates whose velocity the controller itself produces. target
    defaults to phi(psi), or beta(x,t) when the estimator carries one.
    Uncertainty-affected coordinates never contribute: the defining
    property of Psi cancels them no matter how fast they move.
    """
    x = np.asarray(x, dtype=float)
    psi = float(goal.psi(x, t))
    alpha = np.asarray(par.alpha(x, t), dtype=float)
    if target is None:
        if est.beta is not None:
            target = float(est.beta(x, t))
        else:
            target = float(goal.phi(psi))
    rhs = target * alpha
    rhs = rhs + np.asarray(est.provider.dPsi_dt(x, t), dtype=float)
    rhs = rhs - psi * _alpha_dt(par, x, t)
    if known_rates is None:
        if plant is None:
            known_rates = []
        else:
            f = np.asarray(plant.f(x), dtype=float)
            g = np.asarray(plant.g(x), dtype=float)
            known_rates = [(j, f[j] + g[j] * u) for j in range(plant.m)]
    if known_rates:
        grad_Psi = np.asarray(est.provider.grad_x_Psi(x, t), dtype=float)
        for j, rate in known_rates:
            rhs = rhs - (psi * _alpha_dx(par, x, t, j)
                         - grad_Psi[:, j]) * float(rate)
    return rhs


def robust_theta_I_rhs(est, goal, par, plant, x, t, u, known_rates=None,
                       theta_I=None):
    """Integral channel with the leakage and excitation variants applied.

    With gain_F the channel target becomes phi(psi) (1 + F(t)) (or
    beta (1 + F)); with leak_lambda > 0 the channel additionally drains
    at -lambda theta_hat. Both off reduces to theta_I_rhs exactly.
    """
    x = np.asarray(x, dtype=float)
    target = None
    if est.gain_F is not None:
        psi = float(goal.psi(x, t))
        base = (float(est.beta(x, t)) if est.beta is not None
                else float(goal.phi(psi)))
        target = base * (1.0 + float(est.gain_F(t)))
    rhs = theta_I_rhs(est, goal, par, plant, x, t, u,
                      known_rates=known_rates, target=target)
    if est.leak_lambda > 0.0:
        rhs = rhs - est.leak_lambda * theta_hat(est, goal, par, x, t,
                                                theta_I=theta_I)
    return rhs


def realization_identity_residual(trace, est, goal, par):
    """Central correctness oracle for any realization route.

    Finite-differences theta_hat(t) from the trace and subtracts
    Gamma (psi_dot + target) alpha, the derivative-dependent law the
    finite form claims to realize (target = phi(psi), or beta when set).
    An exact realization leaves O(h^2) differencing noise; the leak and
    excitation variants leave their own extra terms, which is how tests
    pin those down. Requires trace outputs "psi", "theta_hat_i" and
    "alpha_i" for each component i.
    """
    d = est.theta_I.shape[0]
    times = trace.times
    psi = trace.output("psi")
    th = np.column_stack([trace.output("theta_hat_%d" % i)
                          for i in range(d)])
    al = np.column_stack([trace.output("alpha_%d" % i) for i in range(d)])
    dpsi = fd_derivative(times, psi)
    if est.beta is not None:
        target = np.array([float(est.beta(trace.states[k], times[k]))
                           for k in range(len(times))])
    else:
        target = np.array([float(goal.phi(s)) for s in psi])
    dth = np.column_stack([fd_derivative(times, th[:, i])
                           for i in range(d)])
    law = np.column_stack([gamma_apply(est.Gamma,
                                       (dpsi[k] + target[k]) * al[k])
                           for k in range(len(times))]).T
    return dth - law


# ---------------------------------------------------------------------------
# realization routes for Psi

def psi_provider_closed(Psi, grad_x_Psi, dPsi_dt):
    """Wrap hand-derived closures as a closed-form provider."""
    return PsiProvider("closed_form", Psi, grad_x_Psi, dPsi_dt)


def psi_provider_quad(goal, par, x2_index, base=0.0):
    """Realize Psi by quadrature when the uncertainty enters one coordinate.

    Psi(x,t) = int_base^{x_n} psi dalpha/dx_n dx_n along coordinate
    x2_index with everything else frozen. Integration by parts trades the
    differentiated regressor for the exactly-known dpsi/dx_n:

        Psi = [psi alpha]_base^{x_n} - int_base^{x_n} dpsi/dx_n alpha ds.

    grad_x_Psi along x2_index is psi dalpha/dx_n (fundamental theorem);
    remaining derivative entries difference the quadrature itself.
    """
    x2_index = int(x2_index)
    base = float(base)

    def at(x, s):
        xs = np.array(x, dtype=float)
        xs[x2_index] = s
        return xs

    def integrand(x, t):
        def f(s):
            xs = at(x, s)
            dpsi = np.asarray(goal.grad_x_psi(xs, t), dtype=float)[x2_index]
            return dpsi * np.asarray(par.alpha(xs, t), dtype=float)
        return f

    def Psi(x, t):
        x = np.asarray(x, dtype=float)
        xb = at(x, base)
        boundary = (float(goal.psi(x, t))
                    * np.asarray(par.alpha(x, t), dtype=float)
                    - float(goal.psi(xb, t))
                    * np.asarray(par.alpha(xb, t), dtype=float))
        try:
            val, _ = quad_vec(integrand(x, t), base, float(x[x2_index]),
                              epsabs=1e-12, epsrel=1e-10)
        except Exception as exc:
            raise QuadratureFailure(str(exc)) from exc
        if not np.all(np.isfinite(val)):
            raise QuadratureFailure(
                "non-finite integrand along coordinate %d" % x2_index)
        return boundary - val

    def grad_x_Psi(x, t):
        x = np.asarray(x, dtype=float)
        psi = float(goal.psi(x, t))
        cols = []
        for j in range(x.shape[0]):
            if j == x2_index:
                cols.append(psi * _alpha_dx(par, x, t, j))
            else:
                h = GRAD_STEP * (1.0 + abs(x[j]))
                xp = x.copy()
                xm = x.copy()
                xp[j] += h
                xm[j] -= h
                cols.append((Psi(xp, t) - Psi(xm, t)) / (2.0 * h))
        return np.column_stack(cols)

    def dPsi_dt(x, t):
        h = GRAD_STEP * (1.0 + abs(t))
        return (Psi(x, t + h) - Psi(x, t - h)) / (2.0 * h)

    return PsiProvider("quad_single_dim", Psi, grad_x_Psi, dPsi_dt)


def psi_provider_independent(goal, par, x2_indices, box, n_samples=200,
                             seed=0):
    """Degenerate route for regressors that ignore the uncertain coordinates.

    When dalpha/dx_2 = 0 the realization needs no Psi at all: theta_hat_P
    collapses to psi alpha. Independence is checked by sampling inside box
    (per-coordinate (lo, hi) pairs); violations above 1e-6 raise
    IndependenceViolated.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    rng = np.random.default_rng(seed)
    for _ in range(int(n_samples)):
        x = np.array([rng.uniform(lo, hi) for lo, hi in box])
        t = rng.uniform(0.0, 10.0)
        for j in x2_indices:
            slope = _alpha_dx(par, x, t, j)
            worst = float(np.max(np.abs(slope)))
            if worst > 1e-6:
                raise IndependenceViolated(
                    "dalpha/dx_%d reaches %.3g at a sampled point"
                    % (j, worst))

    def probe(x, t):
        return np.zeros_like(np.asarray(par.alpha(x, t), dtype=float))

    def Psi(x, t):
        return probe(x, t)

    def grad_x_Psi(x, t):
        a = probe(x, t)
        return np.zeros((a.shape[0], np.asarray(x).shape[0]))

    return PsiProvider("independent", Psi, grad_x_Psi, Psi)


def realization_pde_check(provider, goal, par, x2_indices, box, n=1000,
                          seed=0):
    """Max over random samples of |dPsi/dx_2 - psi dalpha/dx_2|.

    This is the defining property of a valid Psi; providers must keep it
    at finite-difference noise level (<= 1e-6).
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(n)):
        x = np.array([rng.uniform(lo, hi) for lo, hi in box])
        t = rng.uniform(0.0, 10.0)
        psi = float(goal.psi(x, t))
        grad = np.asarray(provider.grad_x_Psi(x, t), dtype=float)
        for j in x2_indices:
            res = grad[:, j] - psi * _alpha_dx(par, x, t, j)
            worst = max(worst, float(np.max(np.abs(res))))
    return worst
