"""Coupled-iterate convergence diagnostics for constant-stepsize SGD.

Modules:

- ``numkit``: float64 vectors/matrices, counter-based random streams,
  power-iteration extreme eigenvalues.
- ``problems``: synthetic stochastic objectives with certified constants
  and reference solutions.
- ``controllers``: stepsize controllers (coupled-distance diagnostics,
  gradient-inner-product and distance-based baselines, fixed schedules).
- ``engine``: the coupled SGD loop with shared per-iteration noise.
- ``oracle``: closed-form theory quantities and brute-force estimators.
- ``harness``: config-driven experiments, replication, CSV/JSON/SVG output.
- ``cli``: the ``csgd`` command-line entry point.
"""

__version__ = "0.1.0"
