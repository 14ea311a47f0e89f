"""Simulation and analysis toolkit for entanglement-enhanced RF atomic magnetometry
applied to magnetic induction tomography."""

__version__ = "0.1.0"

__all__ = ["__version__"]
