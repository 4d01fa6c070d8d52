"""
Exceptions raised by the core services.
"""

from typing import Optional, Sequence

import numpy as np


class RcvError(Exception):
    """Base class for every numerical or validation failure in core."""


class DomainError(RcvError, ValueError):
    """A parameter lies outside the mathematical domain of an operation."""


class DimensionError(RcvError, ValueError):
    """Point or parameter dimensions do not agree."""

    def __init__(self, expected: int, got: int, what: str = "point"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} has dimension {got}, expected {expected}")


class QuadratureDimensionError(RcvError):
    """Tensor quadrature refused because the dimension exceeds the cap."""

    def __init__(self, dim: int, cap: int):
        self.dim = dim
        self.cap = cap
        super().__init__(
            f"tensor quadrature over {dim} dimensions exceeds the cap of {cap}; "
            "pass monte_carlo=True to use the Monte Carlo fallback"
        )


class IntegrationError(RcvError):
    """Non-finite drift encountered while integrating the dynamics."""

    def __init__(self, point, replica: Optional[int] = None):
        self.point = np.asarray(point, dtype=float)
        self.replica = replica
        where = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"non-finite gradient at {self.point.tolist()}{where}")


class ConfigurationError(RcvError):
    """A configuration cannot be used as given."""


class DegenerateDataError(RcvError):
    """Data carry no spread, so a bandwidth cannot be estimated."""


class CoverageError(RcvError):
    """A quadrature grid does not cover the support it integrates over."""

    def __init__(self, message: str, suggested_box: np.ndarray):
        self.suggested_box = np.asarray(suggested_box, dtype=float)
        super().__init__(f"{message}; suggested box {self.suggested_box.tolist()}")


class EmptyLevelSetError(RcvError):
    """The requested level set is empty or carries no stationary mass."""

    def __init__(self, z: float, reason: str = "level set is empty"):
        self.z = z
        super().__init__(f"{reason} at z={z}")


class SingularityError(RcvError):
    """A reaction coordinate was evaluated on its singular set."""


class LevelSetError(RcvError):
    """Level-set sampling failed inside a loss evaluation."""

    def __init__(self, z: float, cause: Exception):
        self.z = z
        self.cause = cause
        super().__init__(f"level-set sampling failed at z={z}: {cause}")


class InsufficientSamplesError(RcvError):
    """Too few samples for the requested statistic."""


class ChainError(RcvError):
    """A discrete chain violates stochasticity or stationarity."""


class SizeError(RcvError):
    """A dense discretization would exceed the memory cap."""


class EmptyLabelClassError(RcvError):
    """A label class of a discrete reaction coordinate has no states."""

    def __init__(self, label: int):
        self.label = label
        super().__init__(f"label class {label} contains no states")


def check_dimension(points: np.ndarray, dim: int, what: str = "point") -> None:
    if points.shape[-1] != dim:
        raise DimensionError(dim, points.shape[-1], what)


def first_bad_row(mask: np.ndarray) -> Optional[int]:
    """Index of the first False entry of a boolean row mask, or None."""
    bad: Sequence[int] = np.flatnonzero(~mask)
    return int(bad[0]) if len(bad) else None
