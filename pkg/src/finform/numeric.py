"""Fixed-step ODE integration and running signal statistics.

Everything downstream assumes a deterministic, fixed-step integrator: the
Lyapunov-decrease checks compare consecutive samples, which is only well posed
when the sample spacing is constant. Default step is 1e-3 s.
"""

import numpy as np

from .errors import DimensionMismatch, NonFiniteState, UnknownSignal

DEFAULT_STEP = 1e-3


class OdeSystem:
    """A first-order ODE dx/dt = rhs(t, x) with a declared dimension."""

    def __init__(self, dimension, rhs):
        if dimension <= 0:
            raise DimensionMismatch("dimension must be positive, got %r" % (dimension,))
        self.dimension = int(dimension)
        self.rhs = rhs

    def __call__(self, t, x):
        return self.rhs(t, x)


class SimTrace:
    """Time-indexed record of a single run.

    times: (N,) strictly increasing seconds.
    states: (N, n) state rows.
    outputs: dict name -> (N,) sampled probe values.
    accumulators: dict name -> (N,) running trapezoidal integral of the probe.
    state_names: optional labels for the state columns (used by emitters).
    """

    def __init__(self, times, states, outputs=None, accumulators=None,
                 state_names=None):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.outputs = dict(outputs or {})
        self.accumulators = dict(accumulators or {})
        self.state_names = list(state_names) if state_names is not None else None

    def __len__(self):
        return len(self.times)

    @property
    def step(self):
        # fixed-step traces only; guarded by the strictly-increasing invariant
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def output(self, name):
        try:
            return self.outputs[name]
        except KeyError:
            raise UnknownSignal("no output named %r in trace" % (name,)) from None

    def accumulator(self, name):
        try:
            return self.accumulators[name]
        except KeyError:
            raise UnknownSignal("no accumulator named %r in trace" % (name,)) from None

    def copy(self):
        return SimTrace(
            self.times.copy(),
            self.states.copy(),
            {k: v.copy() for k, v in self.outputs.items()},
            {k: v.copy() for k, v in self.accumulators.items()},
            self.state_names,
        )


def _eval_rhs(system, t, x):
    try:
        dx = np.asarray(system.rhs(t, x), dtype=float)
    except (OverflowError, FloatingPointError) as exc:
        # pure-python float math overflows instead of returning inf
        raise NonFiniteState("rhs overflow at t=%.6g" % t, t=t) from exc
    if dx.shape != (system.dimension,):
        raise DimensionMismatch(
            "rhs returned shape %r, expected (%d,)" % (dx.shape, system.dimension))
    if not np.all(np.isfinite(dx)):
        raise NonFiniteState("non-finite rhs at t=%.6g" % t, t=t)
    return dx


def step_rk4(system, t, x, h):
    """One classical Runge-Kutta step. Raises NonFiniteState on NaN/Inf stages."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    k1 = _eval_rhs(system, t, x)
    k2 = _eval_rhs(system, t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = _eval_rhs(system, t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = _eval_rhs(system, t + h, x + h * k3)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("non-finite state after step at t=%.6g" % t, t=t)
    return x_next


def simulate(system, x0, t_end, h=DEFAULT_STEP, probes=None, state_names=None):
    """Integrate from t=0 to t_end, sampling every accepted step.

    probes: iterable of (name, fn) with fn(t, x) -> scalar, or a dict.
    Each probe gets an output series and a running trapezoidal accumulator
    under the same name. On blow-up, NonFiniteState is raised with the
    partial trace attached for post-mortem inspection.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dimension,):
        raise DimensionMismatch(
            "x0 has shape %r, expected (%d,)" % (x0.shape, system.dimension))
    if t_end <= 0 or h <= 0:
        raise ValueError("t_end and h must be positive")
    if isinstance(probes, dict):
        probes = list(probes.items())
    probes = list(probes or [])

    n_steps = int(round(t_end / h))
    n_steps = max(n_steps, 1)

    times = [0.0]
    states = [x0.copy()]
    out = {name: [] for name, _ in probes}
    acc = {name: [0.0] for name, _ in probes}

    def eval_probes(t, x):
        vals = {}
        for name, fn in probes:
            try:
                v = float(fn(t, x))
            except (OverflowError, FloatingPointError) as exc:
                raise NonFiniteState("probe %r overflow at t=%.6g" % (name, t),
                                     t=t) from exc
            if not np.isfinite(v):
                raise NonFiniteState("probe %r non-finite at t=%.6g" % (name, t), t=t)
            out[name].append(v)
            vals[name] = v
        return vals

    def partial_trace():
        m = len(times)
        return SimTrace(
            np.array(times), np.array(states),
            {k: np.array(v[:m]) for k, v in out.items()},
            {k: np.array(v[:m]) for k, v in acc.items()},
            state_names,
        )

    try:
        prev_vals = eval_probes(0.0, x0)
        x = x0
        for i in range(n_steps):
            t = i * h
            x = step_rk4(system, t, x, h)
            t_next = (i + 1) * h
            times.append(t_next)
            states.append(x.copy())
            vals = eval_probes(t_next, x)
            for name, _ in probes:
                acc[name].append(acc[name][-1]
                                 + 0.5 * h * (prev_vals[name] + vals[name]))
            prev_vals = vals
    except NonFiniteState as exc:
        exc.trace = partial_trace()
        raise

    return SimTrace(np.array(times), np.array(states),
                    {k: np.array(v) for k, v in out.items()},
                    {k: np.array(v) for k, v in acc.items()},
                    state_names)


def running_l2(trace, name):
    """Trapezoidal integral of the squared named output over the whole run."""
    s = trace.output(name)
    return float(np.trapezoid(s * s, trace.times))


def fd_derivative(times, values):
    """Second-order finite-difference derivative of a sampled signal.

    Central differences on interior points, one-sided three-point stencils at
    the endpoints, so the whole series carries an O(h^2) defect. Assumes the
    (fixed) spacing of `times`.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or len(times) < 3:
        raise DimensionMismatch("need matching series of length >= 3")
    h = times[1] - times[0]
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
    d[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
    return d
