"""
Monte Carlo evaluation of the differential lumpability and deflatability
losses of a reaction coordinate, their constructive counterparts, the
integrand f and Monte Carlo error curves.

All losses average over a midpoint grid of levels (the 1/|Z| integral) and
over pairs drawn from a shared pool of mu_z samples per level.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.coordinates import ReactionCoordinate, ReactionCoordinateService
from core.density import DEFAULT_GRID_NODES, GridSpec, KernelDensityService
from core.dynamics import LangevinService, Potential, SdeConfig
from core.errors import DomainError, InsufficientSamplesError, LevelSetError
from core.kernels import TorusKernelService, TorusKernelSpec, torus_grid
from core.oracle import DiscreteChain
from core.parallel import ordered_map
from core.rng import derive_seed, point_keys, stream

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ['rc_id', 'param', 'sigma', 'tau', 'M', 'loss', 'std_error', 'var_f', 'rel_var_f', 'seed']
MC_ERROR_COLUMNS = ['M', 'rel_error', 'var_over_sqrt_m', 'std_over_sqrt_m']

# Torus L1 grid, nodes per axis by dimension
TORUS_GRID_NODES = {1: 256, 2: 64, 3: 24}
REFERENCE_FACTOR = 100
OUTER_CHUNK = 64

# Stream keys
LEVEL_KEY = 1
PAIR_KEY = 2
OUTER_KEY = 3
REFERENCE_KEY = 4
TRIAL_KEY = 5

StationarySampler = Callable[[int, int], np.ndarray]


class AccessMode(str, Enum):
    ANALYTIC_TORUS = "analytic-torus"
    EMPIRICAL_KDE = "empirical-kde"
    ORACLE_CHAIN = "oracle-chain"


class LossQuadConfig(BaseModel):
    """Discretization of the level, pair and outer integrals."""
    model_config = ConfigDict(frozen=True)

    n_z: int = Field(21, ge=1)
    n_level: int = Field(64, ge=1)
    m_outer: int = Field(256, ge=1)
    n_pairs: int = Field(256, ge=1)
    support_floor: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_pairs(self):
        if self.n_pairs > self.n_level * (self.n_level - 1) // 2:
            raise ValueError(
                f"n_pairs={self.n_pairs} exceeds the {self.n_level * (self.n_level - 1) // 2} "
                f"distinct pairs of a pool of {self.n_level}"
            )
        return self


@dataclass(frozen=True, eq=False)
class LossEstimate:
    value: float
    std_error: float
    m: int
    per_sample_f: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    per_level: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class TransitionAccess:
    """
    Uniform view of a transition kernel p(x, y) and its stationary density.

    `density_on_grid(x)` evaluates p(x, .) at `grid_nodes`; with `grid_weights`
    it gives the L1 distances of the lumpability losses.
    """
    mode: AccessMode
    dim: int
    forward: Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]]
    ratio: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stationary: Callable[[np.ndarray], np.ndarray]
    density_on_grid: Callable[[np.ndarray], np.ndarray]
    grid_nodes: np.ndarray
    grid_weights: np.ndarray

    def l1(self, x1: np.ndarray, x2: np.ndarray) -> float:
        """|| p(x1, .) - p(x2, .) ||_L1 on the shared grid."""
        diff = self.density_on_grid(x1) - self.density_on_grid(x2)
        return float(np.abs(diff) @ self.grid_weights)


@dataclass(frozen=True, eq=False)
class LevelSetQuadrature:
    """Levels, equal-weight mu_z pools (n_z, n_level, d) and pair indices (n_z, n_pairs, 2)."""
    levels: np.ndarray
    points: np.ndarray
    pairs: np.ndarray

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, self.points.shape[-1])


class LossService:

    # ------------------------------------------------------------ access modes

    @staticmethod
    def analytic_access(spec: TorusKernelSpec, nodes: Optional[int] = None) -> TransitionAccess:
        """Closed-form torus kernel with uniform stationary density."""
        grid, weight = torus_grid(spec.n, nodes or TORUS_GRID_NODES.get(spec.n, 16))
        weights = np.full(len(grid), weight)

        def forward(x):
            return lambda y: TorusKernelService.kernel_density(spec, x, y)

        def ratio(x, y):
            return TorusKernelService.kernel_density(spec, x, y) / TorusKernelService.stationary_density(spec, y)

        return TransitionAccess(
            mode=AccessMode.ANALYTIC_TORUS,
            dim=spec.n,
            forward=forward,
            ratio=ratio,
            stationary=lambda y: TorusKernelService.stationary_density(spec, y),
            density_on_grid=lambda x: TorusKernelService.kernel_density(spec, x, grid),
            grid_nodes=grid,
            grid_weights=weights
        )

    @staticmethod
    def empirical_access(
        potential: Potential,
        config: SdeConfig,
        n_replicas: int,
        bandwidth=None,
        grid_nodes: int = DEFAULT_GRID_NODES,
        smoothed: bool = True
    ) -> TransitionAccess:
        """
        Burst + KDE estimate of p(x, .).

        With `smoothed`, the ratio divides by pi convolved with the same
        kernel on the L1 grid instead of pi itself.

        The burst from x is seeded by (config.seed, bits of x), so repeated
        requests for the same point reuse one density.
        """
        gibbs = LangevinService.gibbs(potential, config.beta)
        grid = GridSpec(box=tuple(map(tuple, potential.domain_box)), nodes=grid_nodes)
        centres, cell = grid.centres()
        weights = np.full(len(centres), cell)

        @lru_cache(maxsize=8192)
        def fitted(key: bytes):
            x = np.frombuffer(key, dtype=np.float64)
            burst_config = config.model_copy(update={'seed': derive_seed(config.seed, *point_keys(x))})
            ensemble = LangevinService.simulate_burst(x, potential, burst_config, n_replicas)
            return KernelDensityService.kde_fit(ensemble, bandwidth)

        def kde(x):
            return fitted(np.ascontiguousarray(x, dtype=np.float64).tobytes())

        def on_grid(x):
            density = kde(x)
            if not grid.covers(density.support()):
                logger.debug("burst density from %s extends beyond the L1 grid", np.asarray(x).tolist())
            return KernelDensityService.kde_eval(density, centres)

        return TransitionAccess(
            mode=AccessMode.EMPIRICAL_KDE,
            dim=potential.dim,
            forward=lambda x: (lambda y: KernelDensityService.kde_eval(kde(x), y)),
            ratio=lambda x, y: KernelDensityService.ratio_to_stationary(
                kde(x), gibbs, y, grid if smoothed else None
            ),
            stationary=gibbs,
            density_on_grid=on_grid,
            grid_nodes=centres,
            grid_weights=weights
        )

    @staticmethod
    def chain_access(chain: DiscreteChain) -> TransitionAccess:
        """Piecewise-constant kernel of a discretized chain on its grid cells."""
        geometry = chain.cell_geometry
        if geometry is None:
            raise DomainError("chain access needs a chain with cell geometry")
        volumes = geometry.volumes(chain.n_states)

        def forward(x):
            row = chain.P[geometry.locate(x)]
            return lambda y: row[geometry.locate(y)] / volumes[geometry.locate(y)]

        def ratio(x, y):
            return chain.P[geometry.locate(x), geometry.locate(y)] / chain.pi[geometry.locate(y)]

        return TransitionAccess(
            mode=AccessMode.ORACLE_CHAIN,
            dim=geometry.dim,
            forward=forward,
            ratio=ratio,
            stationary=lambda y: chain.pi[geometry.locate(y)] / volumes[geometry.locate(y)],
            density_on_grid=lambda x: chain.P[geometry.locate(x)] / volumes,
            grid_nodes=geometry.centres(),
            grid_weights=volumes
        )

    # ------------------------------------------------------------ quadrature

    @staticmethod
    def level_set_quadrature(
        rc: ReactionCoordinate,
        quad: LossQuadConfig,
        stationary_density: Optional[Callable] = None,
        max_workers: int = 1
    ) -> LevelSetQuadrature:
        """
        Draw the level grid, one mu_z pool per level and the pair indices.

        With quad.support_floor > 0 the grid spans only levels whose marginal
        under pi reaches that fraction of its maximum.
        """
        support = None
        if quad.support_floor > 0 and stationary_density is not None:
            support = ReactionCoordinateService.level_support(rc, stationary_density, quad.support_floor)
            logger.debug("%s levels restricted to [%.4g, %.4g]", rc.name, *support)
        levels = ReactionCoordinateService.level_grid(rc, quad.n_z, support)

        def draw(k: int) -> np.ndarray:
            z = float(levels[k])
            try:
                sample = ReactionCoordinateService.sample_level_set(
                    rc, z, quad.n_level, derive_seed(quad.seed, LEVEL_KEY, k), stationary_density
                )
            except Exception as e:
                raise LevelSetError(z, e) from e
            if np.ptp(sample.weights) > 0:
                index = stream(quad.seed, LEVEL_KEY, k).choice(len(sample.weights), quad.n_level, p=sample.weights)
                return sample.points[index]
            return sample.points

        points = np.stack(ordered_map(draw, list(range(quad.n_z)), max_workers))

        pairs = np.empty((quad.n_z, quad.n_pairs, 2), dtype=int)
        for k in range(quad.n_z):
            rng = stream(quad.seed, PAIR_KEY, k)
            first = rng.integers(0, quad.n_level, quad.n_pairs)
            pairs[k, :, 0] = first
            pairs[k, :, 1] = (first + rng.integers(1, quad.n_level, quad.n_pairs)) % quad.n_level
        return LevelSetQuadrature(levels=levels, points=points, pairs=pairs)

    @staticmethod
    def _ratios(x: np.ndarray, access: TransitionAccess, quadrature: LevelSetQuadrature) -> np.ndarray:
        n_z, n_level = quadrature.points.shape[:2]
        return np.asarray(access.ratio(x, quadrature.flat_points)).reshape(n_z, n_level)

    @staticmethod
    def _pair_gaps(values: np.ndarray, pairs: np.ndarray) -> np.ndarray:
        first = np.take_along_axis(values, pairs[..., 0], axis=1)
        second = np.take_along_axis(values, pairs[..., 1], axis=1)
        return np.abs(first - second)

    @staticmethod
    def _outer(fn: Callable[[np.ndarray], float], xs: np.ndarray, max_workers: int) -> np.ndarray:
        chunks = [xs[i:i + OUTER_CHUNK] for i in range(0, len(xs), OUTER_CHUNK)]
        values = ordered_map(lambda chunk: np.array([fn(x) for x in chunk]), chunks, max_workers)
        return np.concatenate(values) if values else np.empty(0)

    @staticmethod
    def _estimate(values: np.ndarray, points: Optional[np.ndarray] = None) -> LossEstimate:
        m = len(values)
        std_error = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        return LossEstimate(float(values.mean()), std_error, m, per_sample_f=values, points=points)

    # ------------------------------------------------------------ integrand

    @staticmethod
    def integrand_f(
        x,
        rc: ReactionCoordinate,
        access: TransitionAccess,
        quad: LossQuadConfig,
        quadrature: Optional[LevelSetQuadrature] = None
    ):
        """
        f(x) = mean over levels z of E |p(x, y1)/pi(y1) - p(x, y2)/pi(y2)|
        with y1, y2 independent from mu_z.

        Args:
            x: Point (d,) or batch (m, d)
            quadrature: Shared level-set quadrature; drawn from quad when omitted

        Returns:
            float for a single point, array for a batch
        """
        if quadrature is None:
            quadrature = LossService.level_set_quadrature(rc, quad, access.stationary)
        x = np.asarray(x, dtype=float)

        def single(point):
            ratios = LossService._ratios(point, access, quadrature)
            return float(LossService._pair_gaps(ratios, quadrature.pairs).mean())

        if x.ndim == 1:
            return single(x)
        return np.array([single(point) for point in x])

    @staticmethod
    def _constructive_integrand(x, access: TransitionAccess, quadrature: LevelSetQuadrature) -> float:
        ratios = LossService._ratios(x, access, quadrature)
        return float(np.abs(ratios - ratios.mean(axis=1, keepdims=True)).mean())

    # ------------------------------------------------------------ losses

    @staticmethod
    def loss_deflat(
        rc: ReactionCoordinate,
        access: TransitionAccess,
        stationary_sampler: StationarySampler,
        quad: LossQuadConfig,
        max_workers: int = 1,
        quadrature: Optional[LevelSetQuadrature] = None
    ) -> LossEstimate:
        """Differential deflatability loss as the mean of f over m_outer stationary points."""
        if quadrature is None:
            quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, max_workers)
        xs = stationary_sampler(quad.m_outer, derive_seed(quad.seed, OUTER_KEY))
        f = LossService._outer(
            lambda x: LossService.integrand_f(x, rc, access, quad, quadrature), xs, max_workers
        )
        return LossService._estimate(f, xs)

    @staticmethod
    def loss_deflat_constructive(
        rc: ReactionCoordinate,
        access: TransitionAccess,
        stationary_sampler: StationarySampler,
        quad: LossQuadConfig,
        max_workers: int = 1,
        quadrature: Optional[LevelSetQuadrature] = None
    ) -> LossEstimate:
        """Deflatability loss at p_D(x, z), the mu_z-mean of p(x, y)/pi(y)."""
        if quadrature is None:
            quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, max_workers)
        xs = stationary_sampler(quad.m_outer, derive_seed(quad.seed, OUTER_KEY))
        g = LossService._outer(
            lambda x: LossService._constructive_integrand(x, access, quadrature), xs, max_workers
        )
        return LossService._estimate(g, xs)

    @staticmethod
    def _per_level(
        level_fn: Callable[[int], np.ndarray],
        quadrature: LevelSetQuadrature,
        max_workers: int
    ) -> LossEstimate:
        samples = ordered_map(level_fn, list(range(len(quadrature.levels))), max_workers)
        means = np.array([s.mean() for s in samples])
        variances = np.array([s.var(ddof=1) if len(s) > 1 else 0.0 for s in samples])
        counts = np.array([len(s) for s in samples])
        n_z = len(means)
        std_error = float(np.sqrt(np.sum(variances / counts)) / n_z)
        return LossEstimate(float(means.mean()), std_error, int(counts.sum()), per_level=means)

    @staticmethod
    def _grid_block(access: TransitionAccess, points: np.ndarray) -> np.ndarray:
        return np.stack([access.density_on_grid(x) for x in points])

    @staticmethod
    def loss_lump_differential(
        rc: ReactionCoordinate,
        access: TransitionAccess,
        quad: LossQuadConfig,
        max_workers: int = 1,
        quadrature: Optional[LevelSetQuadrature] = None
    ) -> LossEstimate:
        """Mean pairwise L1 distance of forward densities within level sets."""
        if quadrature is None:
            quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, max_workers)

        def level(k: int) -> np.ndarray:
            block = LossService._grid_block(access, quadrature.points[k])
            i, j = quadrature.pairs[k, :, 0], quadrature.pairs[k, :, 1]
            return np.abs(block[i] - block[j]) @ access.grid_weights

        return LossService._per_level(level, quadrature, max_workers)

    @staticmethod
    def loss_lump_constructive(
        rc: ReactionCoordinate,
        access: TransitionAccess,
        quad: LossQuadConfig,
        max_workers: int = 1,
        quadrature: Optional[LevelSetQuadrature] = None
    ) -> LossEstimate:
        """Lumpability loss at p_L(z, .), the mu_z-mean of the forward densities."""
        if quadrature is None:
            quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, max_workers)

        def level(k: int) -> np.ndarray:
            block = LossService._grid_block(access, quadrature.points[k])
            return np.abs(block - block.mean(axis=0)) @ access.grid_weights

        return LossService._per_level(level, quadrature, max_workers)

    # ------------------------------------------------------------ diagnostics

    @staticmethod
    def variance_of_f(estimate: LossEstimate):
        """Unbiased Var[f] and Var[f]/E[f] from the retained per-sample values."""
        f = estimate.per_sample_f
        if f is None or len(f) < 2:
            raise InsufficientSamplesError("variance of f needs at least two retained samples")
        var = float(np.var(f, ddof=1))
        mean = float(np.mean(f))
        return var, (var / mean if mean > 0 else 0.0)

    @staticmethod
    def mc_error_curve(
        rc: ReactionCoordinate,
        access: TransitionAccess,
        stationary_sampler: StationarySampler,
        m_list: Sequence[int],
        n_trials: int,
        seed: int,
        quad: Optional[LossQuadConfig] = None,
        max_workers: int = 1,
        reference_factor: int = REFERENCE_FACTOR
    ) -> pd.DataFrame:
        """
        Relative expected error E|I(f) - I_M(f)| / I(f) for each M.

        I(f) is estimated on a pool of reference_factor * max(m_list)
        stationary points; every trial averages a subsample of that pool.
        The reference and its standard error are stored in frame.attrs.
        """
        quad = quad or LossQuadConfig(seed=seed)
        quadrature = LossService.level_set_quadrature(rc, quad, access.stationary, max_workers)
        m_ref = reference_factor * max(m_list)
        xs = stationary_sampler(m_ref, derive_seed(seed, REFERENCE_KEY))
        f = LossService._outer(
            lambda x: LossService.integrand_f(x, rc, access, quad, quadrature), xs, max_workers
        )

        reference = float(f.mean())
        std = float(f.std(ddof=1))
        var = std ** 2
        scale = reference if reference > 0 else 1.0

        rows: List[Dict] = []
        for m in m_list:
            errors = [
                abs(reference - f[stream(seed, TRIAL_KEY, m, trial).choice(m_ref, m, replace=False)].mean())
                for trial in range(n_trials)
            ]
            rows.append({
                'M': int(m),
                'rel_error': float(np.mean(errors)) / scale,
                'var_over_sqrt_m': var / np.sqrt(m) / scale,
                'std_over_sqrt_m': std / np.sqrt(m) / scale
            })
            logger.debug("M=%d relative error %.4g", m, rows[-1]['rel_error'])

        frame = pd.DataFrame(rows, columns=MC_ERROR_COLUMNS)
        frame.attrs['reference'] = reference
        frame.attrs['reference_std_error'] = std / np.sqrt(m_ref)
        frame.attrs['reference_m'] = m_ref
        return frame

    @staticmethod
    def error_rate(frame: pd.DataFrame) -> float:
        """Log-log slope of rel_error against M."""
        slope, _ = np.polyfit(np.log(frame['M']), np.log(frame['rel_error']), 1)
        return float(slope)

    @staticmethod
    def loss_row(
        rc: ReactionCoordinate,
        estimate: LossEstimate,
        sigma,
        tau: float,
        seed: int
    ) -> Dict:
        if estimate.per_sample_f is not None and estimate.m >= 2:
            var_f, rel_var_f = LossService.variance_of_f(estimate)
        else:
            var_f, rel_var_f = float("nan"), float("nan")
        return {
            'rc_id': rc.name,
            'param': rc.param,
            'sigma': str(getattr(sigma, 'value', sigma)),
            'tau': tau,
            'M': estimate.m,
            'loss': estimate.value,
            'std_error': estimate.std_error,
            'var_f': var_f,
            'rel_var_f': rel_var_f,
            'seed': seed
        }

    @staticmethod
    def results_frame(rows: Sequence[Dict]) -> pd.DataFrame:
        return pd.DataFrame(list(rows), columns=LOSS_COLUMNS)
