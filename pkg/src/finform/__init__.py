"""Finite-form adaptive control: simulation, verification, baselines.

The estimator at the center of this package reconstructs a parameter
estimate algebraically from the current state plus one integral channel
per parameter, instead of integrating a gradient law.  Around it:

- numeric: fixed-step RK4, traces, running accumulators.
- plant: partitioned and cascade plant wrappers; the true parameters
  stay sealed behind the simulation boundary.
- goal: goal functionals, margins, certainty-equivalence control.
- finite_form: the estimator and its integral-channel right-hand sides.
- embedding: observer extensions and cascade designs for plants the
  direct construction does not cover.
- comparators: classic and tuning-function backstepping baselines.
- metrics: trace-level bound checks that return graded reports.
- benchmark: the four-controller comparison loops, hand-inlined.
- scenarios: declarative TOML runs wiring all of the above together.
- plots, cli: SVG rendering and the command line driver.
"""

__version__ = "0.1.0"
