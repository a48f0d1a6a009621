"""Quenched Gibbs averages for disordered spin systems, and numerical checks of
explicit self-averaging, chaos and universality bounds."""

__version__ = "0.1.0"
