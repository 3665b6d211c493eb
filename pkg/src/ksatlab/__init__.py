"""Finite-temperature random k-SAT: belief propagation, population dynamics and moment calculations."""

__version__ = "0.1.0"
