"""Sampling-based stochastic optimal control with stochastic control-barrier
chance constraints (SCBF-MPPI)."""

__version__ = "0.1.0"
