"""Numerical laboratory for homogenization of quasilinear Hamilton-Jacobi
equations and forced geometric motions in random media.

Subpackages are organized by pipeline stage: coefficient fields, monotone
grid operators, metric-problem solvers, approximate correctors, effective
Hamiltonian extraction, front evolution, and the Monte Carlo harness.
"""

__version__ = "0.1.0"
