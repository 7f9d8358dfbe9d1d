"""Equilibrium solutions of the sovereign debt-management problem."""

__version__ = "0.1.0"
