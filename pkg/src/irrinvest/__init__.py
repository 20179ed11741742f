"""Base-capacity solvers for finite-horizon irreversible investment."""

__version__ = "0.1.0"
