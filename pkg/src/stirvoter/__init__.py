"""Voter dynamics accelerated by particle stirring on the discrete torus.

Exact finite-volume generators, a kinetic Monte Carlo engine, and the
statistical harness that checks the simulated density-fluctuation field
against its stochastic-heat-equation limit.
"""

__version__ = "0.1.0"
