"""Exception hierarchy. The CLI maps each class to a distinct exit code."""

from __future__ import annotations


class VoxdiffError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class VolumeFormatError(VoxdiffError, ValueError):
    """Malformed or unsupported volume file."""

    exit_code = 2


class ConfigError(VoxdiffError, ValueError):
    """Invalid run configuration or argument combination."""

    exit_code = 3


class SolverError(VoxdiffError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    exit_code = 4

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericError(VoxdiffError, ArithmeticError):
    """Non-finite values or divergence during a numeric procedure."""

    exit_code = 5


class PlacementError(VoxdiffError, RuntimeError):
    """Random mask placement found no feasible position."""

    exit_code = 3
