"""Invariant cylinders, scattering maps, and drift orbits in 4D symplectic maps."""

__version__ = "0.1.0"
