"""
Fixed-bandwidth Gaussian kernel density estimates of burst endpoint clouds.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter

from core.dynamics import BurstEnsemble, GibbsDensity, midpoint_grid
from core.errors import CoverageError, DegenerateDataError, DimensionError, DomainError, check_dimension

logger = logging.getLogger(__name__)

DEFAULT_GRID_NODES = 128
COVERAGE_BANDWIDTHS = 4.0
DENSITY_FLOOR = 1e-12
EVAL_CHUNK = 1 << 22
SMOOTHING_TRUNCATE = 6.0


@dataclass(frozen=True, eq=False)
class KdeDensity:
    points: np.ndarray
    bandwidth: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def support(self, width: float = COVERAGE_BANDWIDTHS) -> np.ndarray:
        """Box [min - width*h, max + width*h] per axis."""
        return np.stack([
            self.points.min(axis=0) - width * self.bandwidth,
            self.points.max(axis=0) + width * self.bandwidth
        ], axis=1)


@dataclass(frozen=True)
class GridSpec:
    """Uniform midpoint grid on an axis-aligned box."""
    box: tuple
    nodes: int = DEFAULT_GRID_NODES

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.box, dtype=float).reshape(-1, 2)

    def centres(self):
        return midpoint_grid(self.array, self.nodes)

    def covers(self, box: np.ndarray) -> bool:
        grid = self.array
        return bool(np.all(grid[:, 0] <= box[:, 0]) and np.all(grid[:, 1] >= box[:, 1]))


@dataclass(frozen=True, eq=False)
class SmoothedStationary:
    """Kernel-smoothed stationary density, evaluable at arbitrary points."""
    bandwidth: np.ndarray
    interpolator: RegularGridInterpolator

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        check_dimension(y, self.bandwidth.size)
        values = self.interpolator(y.reshape(-1, self.bandwidth.size))
        return np.maximum(values, 0.0).reshape(y.shape[:-1])


class KernelDensityService:

    @staticmethod
    def silverman_bandwidth(points: np.ndarray) -> np.ndarray:
        """Per-axis Silverman rule h_i = std_i (4 / ((d + 2) N))^(1 / (d + 4))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = points.shape
        if n < 2:
            raise DegenerateDataError("a single endpoint has no spread; pass a bandwidth")
        std = points.std(axis=0, ddof=1)
        if np.any(std <= 0):
            raise DegenerateDataError(f"endpoints have zero spread along axes {np.flatnonzero(std <= 0).tolist()}")
        return std * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))

    @staticmethod
    def kde_fit(
        ensemble: Union[BurstEnsemble, np.ndarray],
        bandwidth: Optional[Union[float, Sequence[float]]] = None
    ) -> KdeDensity:
        """
        Gaussian product-kernel density centred at the endpoints.

        Args:
            ensemble: Burst ensemble or an (N, d) array of points
            bandwidth: Scalar or per-axis scale; Silverman's rule when omitted

        Returns:
            KdeDensity
        """
        points = ensemble.endpoints if isinstance(ensemble, BurstEnsemble) else ensemble
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] < 1:
            raise DomainError("cannot fit a density to an empty ensemble")

        if bandwidth is None:
            h = KernelDensityService.silverman_bandwidth(points)
        else:
            h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (points.shape[1],)).copy()
            if np.any(h <= 0) or not np.all(np.isfinite(h)):
                raise DomainError(f"bandwidth must be positive and finite, got {h.tolist()}")
        return KdeDensity(points=points, bandwidth=h)

    @staticmethod
    def kde_eval(density: KdeDensity, y) -> np.ndarray:
        """(1/N) sum_j prod_i N(y_i - p_ji; h_i), batched over leading axes of y."""
        y = np.asarray(y, dtype=float)
        check_dimension(y, density.dim)
        flat = y.reshape(-1, density.dim)

        norm = (2.0 * np.pi) ** (density.dim / 2.0) * np.prod(density.bandwidth)
        rows = max(1, EVAL_CHUNK // max(density.n * density.dim, 1))
        values = np.empty(flat.shape[0])
        for start in range(0, flat.shape[0], rows):
            block = flat[start:start + rows]
            z = (block[:, None, :] - density.points[None, :, :]) / density.bandwidth
            values[start:start + rows] = np.exp(-0.5 * np.sum(z ** 2, axis=-1)).mean(axis=1)
        return (values / norm).reshape(y.shape[:-1])

    @staticmethod
    def covering_grid(densities: Sequence[KdeDensity], nodes: int = DEFAULT_GRID_NODES) -> GridSpec:
        supports = np.stack([d.support() for d in densities])
        box = np.stack([supports[:, :, 0].min(axis=0), supports[:, :, 1].max(axis=0)], axis=1)
        return GridSpec(box=tuple(map(tuple, box)), nodes=nodes)

    @staticmethod
    def l1_distance(a: KdeDensity, b: KdeDensity, grid: Optional[GridSpec] = None) -> float:
        """Midpoint-rule integral of |a - b| on a grid covering both 4-bandwidth supports."""
        if a.dim != b.dim:
            raise DimensionError(a.dim, b.dim, "density")
        if grid is None:
            grid = KernelDensityService.covering_grid([a, b])

        required = np.stack([a.support(), b.support()])
        required = np.stack([required[:, :, 0].min(axis=0), required[:, :, 1].max(axis=0)], axis=1)
        if not grid.covers(required):
            suggested = np.stack([
                np.minimum(grid.array[:, 0], required[:, 0]),
                np.maximum(grid.array[:, 1], required[:, 1])
            ], axis=1)
            raise CoverageError("grid does not cover the 4-bandwidth support", suggested)

        centres, cell = grid.centres()
        diff = KernelDensityService.kde_eval(a, centres) - KernelDensityService.kde_eval(b, centres)
        return float(np.abs(diff).sum() * cell)

    @staticmethod
    def smooth_stationary(gibbs: GibbsDensity, bandwidth, grid: GridSpec) -> SmoothedStationary:
        """
        pi convolved with the Gaussian product kernel of `bandwidth`.

        The convolution runs on the midpoint grid (zero outside the box) and
        is linearly interpolated between cell centres.
        """
        box = grid.array
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (box.shape[0],))
        spacing = (box[:, 1] - box[:, 0]) / grid.nodes
        axes = [lo + step * (np.arange(grid.nodes) + 0.5) for (lo, _), step in zip(box, spacing)]
        centres, _ = grid.centres()
        values = np.exp(gibbs.log_density(centres)).reshape((grid.nodes,) * box.shape[0])
        smoothed = gaussian_filter(values, sigma=h / spacing, mode="constant", truncate=SMOOTHING_TRUNCATE)
        interpolator = RegularGridInterpolator(axes, smoothed, bounds_error=False, fill_value=None)
        return SmoothedStationary(bandwidth=h.copy(), interpolator=interpolator)

    @staticmethod
    def ratio_to_stationary(
        density: KdeDensity,
        gibbs: GibbsDensity,
        y,
        grid: Optional[GridSpec] = None
    ) -> np.ndarray:
        """
        p(x, y) / pi(y) with the denominator floored at 1e-12.

        With a grid, pi is first smoothed by the density's own kernel so that
        numerator and denominator carry the same bandwidth.
        """
        if grid is None:
            pi = gibbs(y)
        else:
            pi = KernelDensityService.smooth_stationary(gibbs, density.bandwidth, grid)(y)
        return KernelDensityService.kde_eval(density, y) / np.maximum(pi, DENSITY_FLOOR)
