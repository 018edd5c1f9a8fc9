"""Inequality checks evaluated on finished runs.

Each check measures one side of a claimed bound on a completed trace,
computes the theoretical side from the run's declared constants, and
returns a BoundReport.  Checks whose hypotheses did not hold on the run
(leakage, injected disturbances, degenerate horizon) come back flagged
not-applicable instead of failing.
"""

import math

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .goal import lambda_of
from .numeric import fd_derivative

PASS = "PASS"
FAIL = "FAIL"
NOT_APPLICABLE = "not-applicable"


class BoundReport:
    """One verified inequality.

    lhs against rhs with satisfied = lhs <= rhs (1 + tol) + atol; margin
    is rhs - lhs.  atol defaults to zero so the multiplicative rule is
    exact unless a check opts in (needed when the theoretical side is
    exactly zero).  applicable=False marks a report whose hypotheses
    failed; status then reads not-applicable and the report never gates
    a run.
    """

    def __init__(self, name, lhs, rhs, tol=0.0, atol=0.0, applicable=True,
                 notes=""):
        self.name = str(name)
        self.lhs = float(lhs)
        self.rhs = float(rhs)
        self.tol = float(tol)
        self.atol = float(atol)
        self.applicable = bool(applicable)
        self.notes = str(notes)

    @property
    def satisfied(self):
        return self.lhs <= self.rhs * (1.0 + self.tol) + self.atol

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def status(self):
        if not self.applicable:
            return NOT_APPLICABLE
        return PASS if self.satisfied else FAIL

    def __repr__(self):
        return ("BoundReport(%s: lhs=%.6g rhs=%.6g margin=%.6g %s)"
                % (self.name, self.lhs, self.rhs, self.margin, self.status))


def gains_matrix(Gamma, dim):
    """Adaptation gain as a (dim, dim) SPD matrix; scalars broadcast."""
    G = np.asarray(Gamma, dtype=float)
    if G.ndim == 0:
        if G <= 0:
            raise ValidationError("Gamma must be positive", key="Gamma")
        return float(G) * np.eye(dim)
    if G.shape != (dim, dim):
        raise DimensionMismatch("Gamma has shape %s, expected (%d, %d)"
                                % (G.shape, dim, dim))
    return G


def _weighted_sq(v, M):
    # v' M^{-1} v through a solve; M is SPD by construction
    return float(v @ np.linalg.solve(M, v))


def _estimate_columns(trace, dim, names=None):
    if names is None:
        names = ["theta_hat_%d" % (k + 1) for k in range(dim)]
    return np.column_stack([trace.output(name) for name in names])


def param_error_trace(trace, theta_star, names=None):
    """Euclidean distance of the recorded estimates from theta_star,
    per sample.  Estimates are read from outputs theta_hat_1..d unless
    names says otherwise."""
    star = np.asarray(theta_star, dtype=float)
    est = _estimate_columns(trace, len(star), names)
    return np.sqrt(((est - star) ** 2).sum(axis=1))


def control_energy(trace):
    """Trapezoidal integral of u^2 over the run."""
    u = trace.output("u")
    return float(np.trapezoid(u * u, trace.times))


def tail_growth(trace, name, fraction=0.1, power=2):
    """Increase of the running integral of an output over the final
    fraction of the horizon.  power=2 integrates the squared signal."""
    t = trace.times
    vals = np.asarray(trace.output(name), dtype=float) ** power
    cutoff = t[-1] - fraction * (t[-1] - t[0])
    k = int(np.searchsorted(t, cutoff))
    k = min(max(k, 0), len(t) - 1)
    return float(np.trapezoid(vals[k:], t[k:]))


def bounded_check(trace, ceiling, names=(), tol=0.0):
    """Largest magnitude reached by the state and the listed outputs,
    against a declared ceiling.  Non-finite samples fail outright."""
    peak = float(np.abs(trace.states).max())
    for name in names:
        peak = max(peak, float(np.abs(trace.output(name)).max()))
    if not math.isfinite(peak):
        return BoundReport("bounded", float("inf"), float(ceiling),
                           notes="non-finite samples in the trace")
    return BoundReport("bounded", peak, float(ceiling), tol=tol)


def l2_bounds_check(trace, goal, par, Gamma, theta0, theta_star, tol=1e-6):
    """Energy bounds on phi(psi) and the psi rate.

    Both inequalities share the theoretical side 2 Q(psi(0)) plus the
    initial estimate distance weighted by (2 D Gamma)^-1.  The alternative
    normalization D^-1 V of the same quantity is computed independently
    and recorded in the notes; the two agree up to rounding.
    """
    psi = trace.output("psi")
    t = trace.times
    phi_vals = np.array([float(goal.phi(s)) for s in psi])
    psi_dot = fd_derivative(t, psi)
    v = np.asarray(theta0, dtype=float) - np.asarray(theta_star, dtype=float)
    G = gains_matrix(Gamma, len(v))
    D = float(par.D)
    q0 = float(goal.Q(psi[0]))
    rhs = 2.0 * q0 + _weighted_sq(v, 2.0 * D * G)
    alt = (2.0 * D * q0 + 0.5 * _weighted_sq(v, G)) / D
    notes = "D^-1 V normalization gives rhs=%.9g" % alt
    return [
        BoundReport("l2_phi", np.trapezoid(phi_vals ** 2, t), rhs, tol=tol,
                    notes=notes),
        BoundReport("l2_psi_dot", np.trapezoid(psi_dot ** 2, t), rhs,
                    tol=tol, notes=notes),
    ]


def linf_bound_check(trace, goal, par, Gamma, theta0, theta_star, tol=1e-6):
    """Sup bound on |psi| through the inverse of Q."""
    psi = trace.output("psi")
    v = np.asarray(theta0, dtype=float) - np.asarray(theta_star, dtype=float)
    G = gains_matrix(Gamma, len(v))
    D = float(par.D)
    q0 = float(goal.Q(psi[0]))
    level = q0 + _weighted_sq(v, 4.0 * D * G)
    alt = (2.0 * D * q0 + 0.5 * _weighted_sq(v, G)) / (2.0 * D)
    rhs = lambda_of(goal, level)
    return BoundReport("linf_psi", float(np.abs(psi).max()), rhs, tol=tol,
                       notes="level %.9g (D^-1 V form %.9g)" % (level, alt))


def exp_envelope_check(trace, K, Gamma, D, theta0, theta_star, tol=1e-6):
    """Pointwise exponential envelope for phi(psi) = K psi runs.

    |psi(t)| must stay below |psi(0)| e^{-K t} plus half the root of the
    initial estimate distance weighted by (K D Gamma)^-1, at every
    sample.  lhs is the worst signed violation, so margin is the
    tightest clearance.
    """
    psi = trace.output("psi")
    t = trace.times
    v = np.asarray(theta0, dtype=float) - np.asarray(theta_star, dtype=float)
    G = gains_matrix(Gamma, len(v))
    floor = 0.5 * math.sqrt(_weighted_sq(v, float(K) * float(D) * G))
    env = abs(psi[0]) * np.exp(-float(K) * (t - t[0])) + floor
    worst = float((np.abs(psi) - env).max())
    scale = abs(psi[0]) + floor
    return BoundReport("exp_envelope", worst, 0.0, atol=tol * scale,
                       notes="envelope floor %.6g" % floor)


def param_distance_monotone(trace, Gamma, theta_star, names=None,
                            leak_lambda=0.0, disturbed=False, slack=1e-6):
    """Monotonicity of the gain-weighted estimate distance.

    The measured side is the largest positive per-step increment of
    ||theta_star - theta_hat(t)||^2 in the Gamma^-1 norm; it passes when
    below slack (1 + peak value).  Leakage or injected disturbances put
    the run outside this property's hypotheses, so the report comes back
    not-applicable.
    """
    star = np.asarray(theta_star, dtype=float)
    est = _estimate_columns(trace, len(star), names)
    dev = est - star
    G = gains_matrix(Gamma, len(star))
    # one solve for all samples: rows of dev against Gamma
    weighted = np.linalg.solve(G, dev.T).T
    vals = (dev * weighted).sum(axis=1)
    increments = np.diff(vals)
    lhs = float(increments.max(initial=0.0))
    rhs = slack * (1.0 + float(vals.max()))
    applicable = leak_lambda == 0.0 and not disturbed
    notes = ""
    if not applicable:
        notes = ("leakage or disturbance regime; the monotone distance "
                 "property does not apply")
    return BoundReport("param_distance_monotone", lhs, rhs,
                       applicable=applicable, notes=notes)


def pe_check(trace, par, L, delta, tol=1e-9):
    """Persistent excitation of the regressor along the run.

    Slides a window of L seconds (snapped to whole steps) over the
    trace, integrates alpha alpha^T on each window by the trapezoid
    rule, and compares the smallest eigenvalue seen against delta.  The
    measured eigenvalue sits on the rhs so that satisfied keeps its
    lhs <= rhs reading.
    """
    t = trace.times
    if delta <= 0:
        raise ValidationError("delta must be positive", key="delta")
    span = t[-1] - t[0]
    if not 0 < L < span:
        raise ValidationError("window L=%r must fit inside the %.6g s "
                              "horizon" % (L, span), key="L")
    A = np.array([np.asarray(par.alpha(x, tk), dtype=float)
                  for x, tk in zip(trace.states, t)])
    h = t[1] - t[0]
    w = int(round(L / h))
    outer = A[:, :, None] * A[:, None, :]
    dt = np.diff(t)[:, None, None]
    cum = np.empty_like(outer)
    cum[0] = 0.0
    np.cumsum((outer[1:] + outer[:-1]) * (0.5 * dt), axis=0, out=cum[1:])
    grams = cum[w:] - cum[:-w]
    eigs = np.linalg.eigvalsh(grams)
    min_eig = float(eigs[:, 0].min())
    return BoundReport("pe", float(delta), min_eig, tol=tol,
                       notes="window %d steps, %d positions"
                             % (w, grams.shape[0]))
