"""Discrete potential theory laboratory: Green kernels, harmonic measure,
inner-uniform geometry and numerical Harnack/boundary-Harnack checks."""

__version__ = "0.1.0"
