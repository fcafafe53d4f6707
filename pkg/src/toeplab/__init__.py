"""Random Toeplitz, Hankel and backward-identity matrices: exact traces,
limiting *-moments and simulation studies."""

__version__ = "0.1.0"
