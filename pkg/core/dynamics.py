"""
Overdamped Langevin dynamics dX = -grad V(X) dt + sqrt(2/beta) dW: Euler-Maruyama
integration, burst sampling of transition densities, Gibbs densities and
Metropolis sampling of the stationary law.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from core.errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    IntegrationError,
    first_bad_row,
)
from core.rng import stream

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_BETA = 1.0
DEFAULT_TAU = 0.1
CIRCULAR_BOX = ((-2.0, 2.0), (-2.0, 2.0))

# Stiffness guard
STIFF_THRESHOLD = 0.5
SUBSTEPS = 10

# Gibbs normalization, midpoint nodes per axis by dimension
GIBBS_NODES = {1: 4096, 2: 512, 3: 64}

# Metropolis
BURN_IN = 10_000
MAX_CHAINS = 64
TUNING_ROUNDS = 60
TUNING_STEPS = 200
TARGET_ACCEPTANCE = (0.2, 0.4)
ACCEPTANCE_LIMITS = (0.05, 0.8)
ACF_THRESHOLD = 0.1
PILOT_STEPS = 2000


@dataclass(frozen=True, eq=False)
class Potential:
    """Energy V with its gradient; both broadcast over leading axes of x."""
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    domain_box: np.ndarray

    def __post_init__(self):
        box = np.asarray(self.domain_box, dtype=float).reshape(-1, 2)
        if np.any(box[:, 1] <= box[:, 0]):
            raise DomainError(f"degenerate domain box {box.tolist()}")
        object.__setattr__(self, "domain_box", box)

    @property
    def dim(self) -> int:
        return self.domain_box.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.domain_box[:, 1] - self.domain_box[:, 0]))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.domain_box[:, 0]) & (x <= self.domain_box[:, 1]), axis=-1)


class CircularPotentialParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma_radial: float = Field(gt=0, allow_inf_nan=False)


class SdeConfig(BaseModel):
    """Integrator settings; tau must be a whole number of steps."""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(DEFAULT_BETA, gt=0, allow_inf_nan=False)
    dt: float = Field(DEFAULT_DT, gt=0, allow_inf_nan=False)
    tau: float = Field(DEFAULT_TAU, gt=0, allow_inf_nan=False)
    seed: int = Field(0, ge=0)
    substep: bool = True

    @model_validator(mode="after")
    def check_lag(self):
        steps = self.tau / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0) or round(steps) < 1:
            raise ValueError(f"tau={self.tau} is not a positive integer multiple of dt={self.dt}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.tau / self.dt))


@dataclass(frozen=True, eq=False)
class BurstEnsemble:
    """Endpoints of independent tau-length runs from a common start point."""
    start: np.ndarray
    endpoints: np.ndarray
    tau: float
    seed: int
    meta: Optional[SdeConfig] = None

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float).ravel()
        endpoints = np.atleast_2d(np.asarray(self.endpoints, dtype=float))
        if endpoints.shape[0] < 1:
            raise DomainError("a burst needs at least one endpoint")
        if endpoints.shape[1] != start.size:
            raise DimensionError(start.size, endpoints.shape[1], "endpoint")
        if not np.all(np.isfinite(endpoints)):
            raise IntegrationError(endpoints[first_bad_row(np.all(np.isfinite(endpoints), axis=1))])
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "endpoints", endpoints)

    @property
    def n(self) -> int:
        return self.endpoints.shape[0]

    @property
    def dim(self) -> int:
        return self.start.size

    def to_csv(self, path) -> Path:
        path = Path(path)
        columns = [f"x0_{i + 1}" for i in range(self.dim)] + ["tau", "seed"]
        head = pd.DataFrame([[*self.start, self.tau, int(self.seed)]], columns=columns)
        head["seed"] = head["seed"].astype("uint64")
        head.to_csv(path, index=False, float_format="%.17g")
        pd.DataFrame(self.endpoints).to_csv(path, mode="a", header=False, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path, config: Optional[SdeConfig] = None) -> "BurstEnsemble":
        head = pd.read_csv(path, nrows=1)
        endpoints = pd.read_csv(path, skiprows=2, header=None).to_numpy(dtype=float)
        start = head[[c for c in head.columns if c.startswith("x0_")]].to_numpy(dtype=float)[0]
        tau = float(head["tau"].iloc[0])
        seed = int(head["seed"].iloc[0])
        if config is not None and (config.tau != tau or config.seed != seed):
            raise ConfigurationError(f"{path} was written with tau={tau}, seed={seed}")
        return cls(start=start, endpoints=endpoints, tau=tau, seed=seed, meta=config)


# ------------------------------------------------------------------ potentials

@lru_cache(maxsize=None)
def circular_potential(sigma_radial: float, box=CIRCULAR_BOX) -> Potential:
    """V(x) = cos(5 phi) + sigma (r - 1)^2 with five wells on the unit circle."""
    sigma = CircularPotentialParams(sigma_radial=sigma_radial).sigma_radial

    def value(x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        phi = np.arctan2(x[..., 1], x[..., 0])
        return np.cos(5.0 * phi) + sigma * (r - 1.0) ** 2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        r_sq = x[..., 0] ** 2 + x[..., 1] ** 2
        r = np.sqrt(r_sq)
        phi = np.arctan2(x[..., 1], x[..., 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            angular = -5.0 * np.sin(5.0 * phi) / r_sq
            radial = 2.0 * sigma * (r - 1.0) / r
        gx = angular * -x[..., 1] + radial * x[..., 0]
        gy = angular * x[..., 0] + radial * x[..., 1]
        return np.stack([gx, gy], axis=-1)

    return Potential(f"circular(sigma={sigma:g})", value, gradient, np.array(box))


@lru_cache(maxsize=None)
def quadratic_potential(dim: int = 2, half_width: float = 5.0) -> Potential:
    """V(x) = |x|^2 / 2, the Ornstein-Uhlenbeck process."""
    def value(x):
        return 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)

    def gradient(x):
        return np.array(x, dtype=float)

    return Potential(f"quadratic(dim={dim})", value, gradient, np.tile([-half_width, half_width], (dim, 1)))


@lru_cache(maxsize=None)
def double_well_potential(barrier: float = 1.0, half_width: float = 2.0) -> Potential:
    """V(x) = barrier (x^2 - 1)^2 on the line."""
    def value(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return barrier * (x ** 2 - 1.0) ** 2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return 4.0 * barrier * x * (x ** 2 - 1.0)

    return Potential(f"double_well(barrier={barrier:g})", value, gradient, np.array([[-half_width, half_width]]))


@lru_cache(maxsize=None)
def zero_potential(dim: int = 2, half_width: float = 2.0) -> Potential:
    def value(x):
        return np.zeros(np.asarray(x).shape[:-1])

    def gradient(x):
        return np.zeros(np.asarray(x).shape)

    return Potential(f"zero(dim={dim})", value, gradient, np.tile([-half_width, half_width], (dim, 1)))


POTENTIALS = {
    'circular': circular_potential,
    'quadratic': quadratic_potential,
    'double_well': double_well_potential,
    'zero': zero_potential,
}


def potential_by_name(name: str, **params) -> Potential:
    if name not in POTENTIALS:
        raise ConfigurationError(f"unknown potential '{name}', expected one of {sorted(POTENTIALS)}")
    return POTENTIALS[name](**params)


# ------------------------------------------------------------------ stationary law

@dataclass(frozen=True, eq=False)
class GibbsDensity:
    """exp(-beta V) / Z with Z from midpoint quadrature on the domain box."""
    potential: Potential
    beta: float
    log_z: float

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return -self.beta * self.potential.value(x) - self.log_z

    def outside(self, x: np.ndarray) -> np.ndarray:
        return ~self.potential.contains(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.potential.dim:
            raise DimensionError(self.potential.dim, x.shape[-1])
        outside = self.outside(x)
        if np.any(outside):
            logger.warning(
                "%d point(s) outside the quadrature box of %s; density is extrapolated",
                int(np.sum(outside)), self.potential.name
            )
        return np.exp(self.log_density(x))


def midpoint_grid(box: np.ndarray, nodes: int):
    """Cell centres of a uniform grid on `box` and the cell volume."""
    box = np.asarray(box, dtype=float)
    axes = [lo + (hi - lo) * (np.arange(nodes) + 0.5) / nodes for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    centres = np.stack([m.ravel() for m in mesh], axis=-1)
    return centres, float(np.prod((box[:, 1] - box[:, 0]) / nodes))


class LangevinService:
    """Euler-Maruyama integration and stationary sampling."""

    @staticmethod
    def _gradient(potential: Potential, x: np.ndarray, batched: bool) -> np.ndarray:
        grad = np.asarray(potential.gradient(x), dtype=float)
        finite = np.all(np.isfinite(grad), axis=-1)
        if not np.all(finite):
            row = first_bad_row(np.atleast_1d(finite))
            point = np.atleast_2d(x)[row]
            raise IntegrationError(point, row if batched else None)
        return grad

    @staticmethod
    def _drift(x: np.ndarray, potential: Potential, config: SdeConfig, batched: bool) -> np.ndarray:
        grad = LangevinService._gradient(potential, x, batched)
        moved = x - grad * config.dt
        if not config.substep:
            return moved

        stiff = np.atleast_1d(np.linalg.norm(grad, axis=-1) * config.dt > STIFF_THRESHOLD)
        if not np.any(stiff):
            return moved

        logger.debug("sub-stepping %d stiff point(s)", int(np.sum(stiff)))
        h = config.dt / SUBSTEPS
        y = np.atleast_2d(x)[stiff]
        for _ in range(SUBSTEPS):
            y = y - LangevinService._gradient(potential, y, batched) * h
        moved = np.atleast_2d(moved)
        moved[stiff] = y
        return moved if batched else moved[0]

    @staticmethod
    def em_step(x, potential: Potential, config: SdeConfig, noise) -> np.ndarray:
        """
        One Euler-Maruyama step x - grad V(x) dt + sqrt(2 dt / beta) noise.

        With config.substep, points where |grad V| dt exceeds 0.5 take their
        drift in ten sub-steps of dt/10 before the full noise increment.
        """
        x = np.asarray(x, dtype=float)
        noise = np.asarray(noise, dtype=float)
        if noise.shape != x.shape:
            raise DimensionError(x.shape[-1], noise.shape[-1], "noise")
        if x.shape[-1] != potential.dim:
            raise DimensionError(potential.dim, x.shape[-1])
        batched = x.ndim > 1
        moved = LangevinService._drift(x, potential, config, batched)
        return moved + np.sqrt(2.0 * config.dt / config.beta) * noise

    @staticmethod
    def integrate(x0: np.ndarray, potential: Potential, config: SdeConfig, noise: np.ndarray) -> np.ndarray:
        """Propagate a batch (N, d) through noise of shape (N, steps, d)."""
        x = np.array(x0, dtype=float)
        for k in range(noise.shape[1]):
            x = LangevinService.em_step(x, potential, config, noise[:, k])
        return x

    @staticmethod
    def simulate_burst(x0, potential: Potential, config: SdeConfig, n_replicas: int) -> BurstEnsemble:
        """n_replicas endpoints of the time-tau law started at x0."""
        if n_replicas < 1:
            raise DomainError(f"n_replicas must be >= 1, got {n_replicas}")
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != potential.dim:
            raise DimensionError(potential.dim, x0.size)

        noise = np.stack([
            stream(config.seed, replica).standard_normal((config.n_steps, potential.dim))
            for replica in range(n_replicas)
        ])
        start = np.tile(x0, (n_replicas, 1))
        endpoints = LangevinService.integrate(start, potential, config, noise)
        return BurstEnsemble(start=x0, endpoints=endpoints, tau=config.tau, seed=config.seed, meta=config)

    @staticmethod
    def simulate_trajectory(
        x0,
        potential: Potential,
        config: SdeConfig,
        n_steps: int,
        record_every: int = 1,
        chunk: int = 10_000
    ) -> np.ndarray:
        """Single long trajectory, recorded every `record_every` steps."""
        rng = stream(config.seed, 0)
        x = np.asarray(x0, dtype=float).ravel()
        frames = []
        done = 0
        while done < n_steps:
            size = min(chunk, n_steps - done)
            noise = rng.standard_normal((size, potential.dim))
            for k in range(size):
                x = LangevinService.em_step(x, potential, config, noise[k])
                if (done + k + 1) % record_every == 0:
                    frames.append(x)
            done += size
        return np.array(frames).reshape(-1, potential.dim)

    @staticmethod
    def ou_second_moment(x0, dt: float, beta: float, steps: int) -> float:
        """E|X_k|^2 of the Euler-Maruyama chain for V = |x|^2 / 2."""
        x0 = np.asarray(x0, dtype=float)
        decay = (1.0 - dt) ** (2 * steps)
        noise = x0.size * 2.0 * dt / beta
        return float(decay * np.dot(x0, x0) + noise * (1.0 - decay) / (1.0 - (1.0 - dt) ** 2))

    @staticmethod
    def gibbs(potential: Potential, beta: float) -> GibbsDensity:
        return _gibbs(potential, float(beta))

    @staticmethod
    def gibbs_density(potential: Potential, beta: float, x) -> np.ndarray:
        """Stationary density exp(-beta V(x)) / Z."""
        return _gibbs(potential, float(beta))(x)

    @staticmethod
    def sample_stationary(
        potential: Potential,
        beta: float,
        n_samples: int,
        seed: int,
        burn_in: int = BURN_IN
    ) -> np.ndarray:
        """
        Random-walk Metropolis samples of exp(-beta V) truncated to the domain box.

        Proposals outside the box are rejected, so the samples follow the
        Gibbs law conditioned on the box. The mass outside is dropped rather
        than folded back, which matters only when exp(-beta V) is not small
        at the box boundary.

        Runs up to 64 chains in lockstep from the grid minimum of V. The
        proposal scale is tuned towards 20-40% acceptance, and kept samples
        are spaced by the first lag at which the autocorrelation of V(X)
        drops below 0.1 (of the coordinates when V is constant).

        Returns:
            Array of shape (n_samples, dim)
        """
        if n_samples < 1:
            raise DomainError(f"n_samples must be >= 1, got {n_samples}")
        rng = stream(seed)
        box = potential.domain_box
        n_chains = min(MAX_CHAINS, n_samples)

        def log_target(x):
            inside = potential.contains(x)
            out = np.full(x.shape[0], -np.inf)
            out[inside] = -beta * potential.value(x[inside])
            return out

        def sweep(x, log_p, scale, steps, record=None):
            accepted = 0
            for k in range(steps):
                proposal = x + scale * rng.standard_normal(x.shape)
                log_q = log_target(proposal)
                accept = np.log(rng.random(n_chains)) < log_q - log_p
                x = np.where(accept[:, None], proposal, x)
                log_p = np.where(accept, log_q, log_p)
                accepted += int(accept.sum())
                if record is not None:
                    record.append(x.copy())
            return x, log_p, accepted / (steps * n_chains)

        grid, _ = midpoint_grid(box, 64 if potential.dim <= 2 else 16)
        x = np.tile(grid[np.argmin(potential.value(grid))], (n_chains, 1))
        log_p = log_target(x)

        width = float(np.min(box[:, 1] - box[:, 0]))
        scale = 0.1 * width
        for _ in range(TUNING_ROUNDS):
            x, log_p, rate = sweep(x, log_p, scale, TUNING_STEPS)
            if TARGET_ACCEPTANCE[0] <= rate <= TARGET_ACCEPTANCE[1]:
                break
            scale = min(scale * np.exp(2.0 * (rate - 0.3)), width)

        x, log_p, rate = sweep(x, log_p, scale, burn_in)
        if not ACCEPTANCE_LIMITS[0] <= rate <= ACCEPTANCE_LIMITS[1]:
            raise ConfigurationError(
                f"Metropolis acceptance {rate:.3f} outside {ACCEPTANCE_LIMITS} for {potential.name}"
            )

        pilot = []
        x, log_p, _ = sweep(x, log_p, scale, PILOT_STEPS, record=pilot)
        lag = _thinning_lag(np.array(pilot), potential)
        logger.info(
            "Metropolis on %s: scale %.3g, acceptance %.2f, thinning %d",
            potential.name, scale, rate, lag
        )

        per_chain = -(-n_samples // n_chains)
        kept = []
        for _ in range(per_chain):
            x, log_p, _ = sweep(x, log_p, scale, lag)
            kept.append(x.copy())
        return np.array(kept).reshape(-1, potential.dim)[:n_samples]


@lru_cache(maxsize=64)
def _gibbs(potential: Potential, beta: float) -> GibbsDensity:
    nodes = GIBBS_NODES.get(potential.dim, 32)
    centres, cell = midpoint_grid(potential.domain_box, nodes)
    log_z = float(logsumexp(-beta * potential.value(centres)) + np.log(cell))
    logger.debug("log Z of %s at beta=%g: %.6f (%d nodes/axis)", potential.name, beta, log_z, nodes)
    return GibbsDensity(potential, beta, log_z)


def _autocorrelation(series: np.ndarray, lag: int) -> float:
    centred = series - series.mean(axis=0)
    var = np.mean(centred ** 2)
    return float(np.mean(centred[:-lag] * centred[lag:]) / var)


def _thinning_lag(pilot: np.ndarray, potential: Potential) -> int:
    """First lag where the chain-averaged autocorrelation falls below 0.1."""
    energy = potential.value(pilot)
    if np.ptp(energy) > 0:
        observables = [energy]
    else:
        observables = [pilot[..., i] for i in range(potential.dim)]
    observables = [o for o in observables if np.ptp(o) > 0]
    if not observables:
        return 1

    max_lag = pilot.shape[0] // 4
    for lag in range(1, max_lag):
        if max(_autocorrelation(o, lag) for o in observables) < ACF_THRESHOLD:
            return lag
    logger.warning("autocorrelation stays above %.2f up to lag %d", ACF_THRESHOLD, max_lag)
    return max_lag
