"""
Closed-form transition kernels of the timescale-separated diffusion on the
n-torus [-pi, pi)^n.

The first coordinate diffuses slowly (wrapped normal with scale tau), the
remaining ones with scale tau*sigma; sigma = FastLimit.INFINITE selects the
limit process in which the fast coordinates equilibrate instantly.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Dict, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

from core.errors import DomainError, QuadratureDimensionError, check_dimension
from core.rng import stream

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SERIES_THRESHOLD = 1e-16
IMAGE_SUM_BELOW = 0.25
IMAGE_TERMS = 6
DEFAULT_NODES = 128
QUADRATURE_DIM_CAP = 4
MAX_TENSOR_POINTS = 1 << 24


class FastLimit(str, Enum):
    """Distinguished value for sigma = infinity."""
    INFINITE = "inf"


FiniteSigma = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Sigma = Union[FastLimit, FiniteSigma]


class WrappedNormalParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(ge=0, allow_inf_nan=False)

    @computed_field
    @property
    def rho(self) -> float:
        return float(np.exp(-self.sigma ** 2 / 2.0))


class TorusKernelSpec(BaseModel):
    """Dimension n, lag time tau and fast-direction scale sigma."""
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    tau: float = Field(gt=0, allow_inf_nan=False)
    sigma: Sigma = Field(FastLimit.INFINITE, union_mode="left_to_right")

    @property
    def is_limit(self) -> bool:
        return isinstance(self.sigma, FastLimit)

    @property
    def fast_scale(self) -> Sigma:
        return FastLimit.INFINITE if self.is_limit else self.tau * float(self.sigma)

    def label(self) -> str:
        return "inf" if self.is_limit else f"{float(self.sigma):g}"


def wrap_angle(x) -> np.ndarray:
    """Map angles to [-pi, pi)."""
    return np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class TorusPoint:
    coords: np.ndarray

    def __post_init__(self):
        coords = wrap_angle(np.atleast_1d(self.coords))
        if coords.ndim != 1 or coords.size < 1:
            raise DomainError("a torus point needs at least one coordinate")
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.size


def _coords(x) -> np.ndarray:
    if isinstance(x, TorusPoint):
        return x.coords
    return np.asarray(x, dtype=float)


def torus_grid(n: int, nodes: int):
    """Periodic trapezoid nodes on [-pi, pi)^n and the common weight."""
    axis = -np.pi + TWO_PI * np.arange(nodes) / nodes
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    return points, (TWO_PI / nodes) ** n


class TorusKernelService:
    """Wrapped normal densities and the torus transition kernels."""

    @staticmethod
    def wrapped_normal_density(delta, sigma: Sigma, threshold: float = SERIES_THRESHOLD) -> np.ndarray:
        """
        Wrapped normal density g^sigma at angle difference `delta`.

        Uses the cosine series (1/2pi)(1 + 2 sum rho^{k^2} cos(k delta)),
        truncated before the first k with rho^{k^2} < threshold. Below
        sigma = 0.25 the series converges slowly and the image sum over
        |m| <= 6 is used instead.
        """
        delta = np.asarray(delta, dtype=float)
        if isinstance(sigma, FastLimit):
            return np.full(delta.shape, 1.0 / TWO_PI)

        sigma = float(sigma)
        if not sigma > 0:
            raise DomainError(f"wrapped normal needs sigma > 0, got {sigma}")
        if np.isinf(sigma):
            return np.full(delta.shape, 1.0 / TWO_PI)

        if sigma < IMAGE_SUM_BELOW:
            d = wrap_angle(delta)[..., None]
            m = np.arange(-IMAGE_TERMS, IMAGE_TERMS + 1)
            images = np.exp(-(d + TWO_PI * m) ** 2 / (2.0 * sigma ** 2))
            return images.sum(axis=-1) / np.sqrt(TWO_PI * sigma ** 2)

        log_rho = -sigma ** 2 / 2.0
        k_max = int(np.floor(np.sqrt(np.log(threshold) / log_rho)))
        if k_max < 1:
            return np.full(delta.shape, 1.0 / TWO_PI)

        k = np.arange(1, k_max + 1)
        weights = np.exp(log_rho * k ** 2)
        series = (weights * np.cos(delta[..., None] * k)).sum(axis=-1)
        return np.maximum((1.0 + 2.0 * series) / TWO_PI, 0.0)

    @staticmethod
    def kernel_density(spec: TorusKernelSpec, x, y) -> np.ndarray:
        """Transition density p^{tau,sigma}(x, y); broadcasts over leading axes."""
        x, y = _coords(x), _coords(y)
        check_dimension(x, spec.n)
        check_dimension(y, spec.n)
        delta = y - x

        g = TorusKernelService.wrapped_normal_density
        slow = g(delta[..., 0], spec.tau)
        if spec.n == 1:
            return slow
        if spec.is_limit:
            return slow / TWO_PI ** (spec.n - 1)
        return slow * np.prod(g(delta[..., 1:], spec.fast_scale), axis=-1)

    @staticmethod
    def stationary_density(spec: TorusKernelSpec, y) -> np.ndarray:
        y = _coords(y)
        check_dimension(y, spec.n)
        return np.full(y.shape[:-1], TWO_PI ** (-spec.n))

    @staticmethod
    def effective_density_pL(spec: TorusKernelSpec, z, y) -> np.ndarray:
        """Effective lumped density p_L^tau(z, y) = g^tau(z, y_1) / (2pi)^{n-1}."""
        if spec.n < 2:
            raise DomainError("the effective density needs n >= 2")
        y = _coords(y)
        check_dimension(y, spec.n)
        z = np.asarray(z, dtype=float)
        slow = TorusKernelService.wrapped_normal_density(y[..., 0] - z, spec.tau)
        return slow / TWO_PI ** (spec.n - 1)

    @staticmethod
    def integrate_kernel(spec: TorusKernelSpec, x, nodes: int = 256) -> float:
        """Trapezoid integral of kernel_density(x, .) over the torus."""
        x = _coords(x)
        check_dimension(x, spec.n)
        if spec.n == 1:
            points, weight = torus_grid(1, nodes)
            return float(TorusKernelService.kernel_density(spec, x, points).sum() * weight)

        # sweep the first axis to bound memory
        tail, weight = torus_grid(spec.n - 1, nodes)
        axis = -np.pi + TWO_PI * np.arange(nodes) / nodes
        total = 0.0
        for y1 in axis:
            y = np.concatenate([np.full((len(tail), 1), y1), tail], axis=1)
            total += TorusKernelService.kernel_density(spec, x, y).sum()
        return float(total * weight * TWO_PI / nodes)

    @staticmethod
    def lumpability_distance(
        spec: TorusKernelSpec,
        nodes: int = DEFAULT_NODES,
        max_dim: int = QUADRATURE_DIM_CAP,
        monte_carlo: bool = False,
        n_samples: int = 1 << 16,
        seed: int = 0
    ) -> float:
        """
        K-norm distance between p^{tau,sigma} and p_L^tau(xi(.), .), xi(x) = x_1.

        Translation invariance reduces the 2n-dimensional integral to
        int |prod_{i>=2} g^{tau sigma}(d_i) - (2pi)^{-(n-1)}| dd over the
        n-1 fast difference angles; the slow factor integrates to one.
        """
        if spec.is_limit or spec.n == 1:
            return 0.0

        dim = spec.n - 1
        uniform = TWO_PI ** (-dim)
        g = TorusKernelService.wrapped_normal_density

        if monte_carlo:
            rng = stream(seed, spec.n)
            deltas = rng.uniform(-np.pi, np.pi, size=(n_samples, dim))
            values = np.prod(g(deltas, spec.fast_scale), axis=-1)
            return float(TWO_PI ** dim * np.mean(np.abs(values - uniform)))

        if dim > max_dim:
            raise QuadratureDimensionError(dim, max_dim)

        per_axis = nodes
        while per_axis ** dim > MAX_TENSOR_POINTS:
            per_axis //= 2
        if per_axis != nodes:
            logger.debug("lumpability quadrature reduced to %d nodes per axis", per_axis)

        axis = -np.pi + TWO_PI * np.arange(per_axis) / per_axis
        factor = g(axis, spec.fast_scale)
        values = factor
        for _ in range(dim - 1):
            values = np.multiply.outer(values, factor)
        return float(np.abs(values - uniform).sum() * (TWO_PI / per_axis) ** dim)

    @staticmethod
    def lumpability_decay_fit(
        n: int,
        tau: float,
        sigmas: Sequence[float],
        nodes: int = DEFAULT_NODES
    ) -> Dict:
        """Least-squares slope of log distance against sigma^2."""
        distances = np.array([
            TorusKernelService.lumpability_distance(TorusKernelSpec(n=n, tau=tau, sigma=s), nodes=nodes)
            for s in sigmas
        ])
        sigma_sq = np.asarray(sigmas, dtype=float) ** 2
        slope, intercept = np.polyfit(sigma_sq, np.log(distances), 1)
        return {
            'distances': distances,
            'slope': float(slope),
            'intercept': float(intercept),
            'expected_slope': -tau ** 2 / 2.0
        }

    @staticmethod
    def uniform_sampler(n: int):
        """Stationary sampler of the torus dynamics (uniform law)."""
        def sample(m: int, seed: int) -> np.ndarray:
            return stream(seed, n).uniform(-np.pi, np.pi, size=(m, n))
        return sample
