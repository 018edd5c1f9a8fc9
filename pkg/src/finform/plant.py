"""Controlled plant families with the uncertainty partition made explicit.

A PartitionedPlant splits the state into x1 (first m coordinates, dynamics
free of the unknown parameters) and x2 (the remaining n-m coordinates, whose
dynamics carry the uncertainty term nu(x, theta)). The true parameter vector
is sealed: controllers get a view without it, only the simulator and the
metrics layer may read it.
"""

import numpy as np

from .errors import DimensionMismatch

_SENTINEL = object()


class ControllerView:
    """What a control law is allowed to see of a plant: structure, not theta."""

    def __init__(self, plant):
        self.n = plant.n
        self.m = plant.m
        self.f = plant.f
        self.g = plant.g
        self.nu = plant.nu
        self.theta_dim = plant.theta_dim


class PartitionedPlant:
    """dx1 = f1(x) + g1(x) u,  dx2 = f2(x) + nu(x, theta) + g2(x) u.

    f and g return full n-vectors; their first m entries belong to the x1
    block. nu returns the (n-m)-vector uncertainty term. theta_true is held
    privately; use true_theta() at the simulator/metrics boundary and
    controller_view() everywhere else.
    """

    def __init__(self, n, m, f, g, nu, theta_dim, theta_true,
                 disturbance=None, disturbance_l2=None):
        if not (0 <= m <= n):
            raise DimensionMismatch("need 0 <= m <= n, got m=%r n=%r" % (m, n))
        self.n = int(n)
        self.m = int(m)
        self.f = f
        self.g = g
        self.nu = nu
        self.theta_dim = int(theta_dim)
        theta_true = np.asarray(theta_true, dtype=float)
        if theta_true.shape != (self.theta_dim,):
            raise DimensionMismatch("theta_true has shape %r, expected (%d,)"
                                    % (theta_true.shape, self.theta_dim))
        self._theta_true = theta_true
        # optional additive disturbance eps(t) on the uncertainty block;
        # when declared square-integrable, supply its int eps^2 certificate
        self.disturbance = disturbance
        self.disturbance_l2 = disturbance_l2

    def true_theta(self):
        """Simulator/metrics boundary only. Controllers never call this."""
        return self._theta_true

    def controller_view(self):
        return ControllerView(self)


def eval_dynamics(plant, x, u, t=0.0, theta=_SENTINEL):
    """Full state derivative using the sealed true parameters.

    This is the simulation boundary: the only place theta_true enters the
    closed loop. An explicit theta may be passed for counterfactual probes.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (plant.n,):
        raise DimensionMismatch("x has shape %r, expected (%d,)"
                                % (x.shape, plant.n))
    th = plant._theta_true if theta is _SENTINEL else np.asarray(theta, dtype=float)
    dx = np.asarray(plant.f(x), dtype=float) + np.asarray(plant.g(x), dtype=float) * u
    if dx.shape != (plant.n,):
        raise DimensionMismatch("f/g returned shape %r, expected (%d,)"
                                % (dx.shape, plant.n))
    nu_val = np.asarray(plant.nu(x, th), dtype=float)
    if nu_val.shape != (plant.n - plant.m,):
        raise DimensionMismatch("nu returned shape %r, expected (%d,)"
                                % (nu_val.shape, plant.n - plant.m))
    dx[plant.m:] += nu_val
    if plant.disturbance is not None:
        dx[plant.m:] += plant.disturbance(t)
    return dx


class CascadePlant:
    """Strict-feedback chain dx_i = f_i(x_1..x_i, theta_i) + x_{i+1}, last + u.

    Each f_i receives only the first i coordinates, which enforces the
    low-triangular structure by construction. theta blocks are sealed like
    in PartitionedPlant.
    """

    def __init__(self, n, f_list, theta_blocks, disturbance=None,
                 disturbance_l2=None):
        if len(f_list) != n or len(theta_blocks) != n:
            raise DimensionMismatch("need one f_i and one theta block per stage")
        self.n = int(n)
        self.f_list = list(f_list)
        self._theta_blocks = [np.asarray(b, dtype=float) for b in theta_blocks]
        self.disturbance = disturbance
        self.disturbance_l2 = disturbance_l2

    def true_blocks(self):
        """Simulator/metrics boundary only."""
        return self._theta_blocks

    def stage_f(self, i, x_prefix, theta_i):
        x_prefix = np.asarray(x_prefix, dtype=float)
        if x_prefix.shape != (i + 1,):
            raise DimensionMismatch("stage %d expects a prefix of length %d"
                                    % (i, i + 1))
        return float(self.f_list[i](x_prefix, theta_i))

    def derivative(self, x, u, t=0.0):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch("x has shape %r, expected (%d,)"
                                    % (x.shape, self.n))
        dx = np.empty(self.n)
        for i in range(self.n):
            dx[i] = self.stage_f(i, x[:i + 1], self._theta_blocks[i])
            dx[i] += x[i + 1] if i + 1 < self.n else u
        if self.disturbance is not None:
            dx[-1] += self.disturbance(t)
        return dx


class LipschitzFactors:
    """Scenario-supplied growth majorants used by the cascade observer gains."""

    def __init__(self, Fbar, Dbar_list=()):
        self.Fbar = Fbar
        self.Dbar_list = list(Dbar_list)


def example_plant_linear():
    """Two-state benchmark plant, uncertainty linear in all three parameters.

    dx1 = theta0 x1^2 + x2,  dx2 = theta1 x1 + theta2 x2 + u,
    with true parameters (1, 1, 0.5).
    """
    return PartitionedPlant(
        n=2, m=0,
        f=lambda x: np.array([x[1], 0.0]),
        g=lambda x: np.array([0.0, 1.0]),
        nu=lambda x, th: np.array([th[0] * x[0] ** 2,
                                   th[1] * x[0] + th[2] * x[1]]),
        theta_dim=3,
        theta_true=(1.0, 1.0, 0.5),
    )


def example_plant_tanh():
    """Variant with a saturating, nonconvex parameterization in the x2 row.

    dx1 = theta0 x1^2 + x2,  dx2 = 5 tanh(theta1 x1 + theta2 x2) + u,
    true parameters (1, 1, 0.5). The slope bound of 5 tanh gives the sector
    constant D = 5; D1 is scenario-dependent (compact operating box).
    """
    return PartitionedPlant(
        n=2, m=0,
        f=lambda x: np.array([x[1], 0.0]),
        g=lambda x: np.array([0.0, 1.0]),
        nu=lambda x, th: np.array([th[0] * x[0] ** 2,
                                   5.0 * np.tanh(th[1] * x[0] + th[2] * x[1])]),
        theta_dim=3,
        theta_true=(1.0, 1.0, 0.5),
    )
