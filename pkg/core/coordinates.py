"""
Candidate reaction coordinates and samplers of the level-set measures mu_z.

Every coordinate here is scalar valued. mu_z is normalized to a probability
measure on each level set.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.linalg import null_space
from scipy.optimize import linprog

from core.errors import DomainError, EmptyLevelSetError, SingularityError, check_dimension
from core.rng import stream

logger = logging.getLogger(__name__)

R_MAX = 2.0
LEVEL_SET_NODES = 2048
EMPTY_MASS = 1e-300
DEFAULT_N_Z = 21
SUPPORT_SCAN = 256
MAX_REJECTION_ROUNDS = 200


class RcKind(str, Enum):
    LINEAR_TORUS_ALPHA = "linear-torus-alpha"
    LINEAR_TORUS = "linear-torus"
    POLAR_ANGLE = "polar-angle"
    POLAR_RADIUS = "polar-radius"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class LevelSetSample:
    z: float
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise DomainError("level-set weights must be nonnegative with positive total")
        object.__setattr__(self, "weights", weights / weights.sum())

    def mean(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.points)))


@dataclass(frozen=True, eq=False)
class ReactionCoordinate:
    """
    Scalar observable on the state space.

    `sampler(z, n, seed)` is required for custom coordinates; the built-in
    kinds are sampled by ReactionCoordinateService.sample_level_set.
    """
    name: str
    kind: RcKind
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    range: Tuple[float, float]
    param: float = float("nan")
    weights: Optional[np.ndarray] = None
    sampler: Optional[Callable[[float, int, int], LevelSetSample]] = None

    def __call__(self, x) -> np.ndarray:
        return self.eval(x)

    @property
    def measure(self) -> float:
        """Lebesgue measure |Z| of the range."""
        return float(self.range[1] - self.range[0])


class ReactionCoordinateService:

    @staticmethod
    def linear_rc(weights: Sequence[float], scale: float = 1.0, name: Optional[str] = None) -> ReactionCoordinate:
        """theta(x) = (w . x) / scale on the torus [-pi, pi)^n."""
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or not np.any(w != 0):
            raise DomainError(f"linear coordinate needs a nonzero weight vector, got {w.tolist()}")
        a = w / scale
        bound = float(np.pi * np.abs(a).sum())

        def value(x):
            x = np.asarray(x, dtype=float)
            check_dimension(x, a.size)
            return x @ a

        def gradient(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(a, x.shape).copy()

        label = name or "linear(" + ",".join(f"{v:g}" for v in w) + ")"
        return ReactionCoordinate(
            label, RcKind.LINEAR_TORUS, a.size, value, gradient, (-bound, bound), weights=a
        )

    @staticmethod
    def linear_rc_alpha(alpha: float) -> ReactionCoordinate:
        """theta_alpha(x) = (cos a x_1 + sin a x_2) / (pi (|cos a| + |sin a|)), range [-1, 1]."""
        if not -np.pi < alpha < np.pi:
            raise DomainError(f"alpha must lie in (-pi, pi), got {alpha}")
        c, s = np.cos(alpha), np.sin(alpha)
        base = ReactionCoordinateService.linear_rc((c, s), scale=np.pi * (abs(c) + abs(s)))
        return ReactionCoordinate(
            f"alpha={alpha:.6g}", RcKind.LINEAR_TORUS_ALPHA, 2, base.eval, base.grad, (-1.0, 1.0),
            param=float(alpha), weights=base.weights
        )

    @staticmethod
    def polar_rc(which: str, r_max: float = R_MAX) -> ReactionCoordinate:
        """Polar angle phi = atan2(x_2, x_1) or radius r = |x| in the plane."""
        def radius(x):
            x = np.asarray(x, dtype=float)
            check_dimension(x, 2)
            return np.hypot(x[..., 0], x[..., 1])

        def checked_radius(x):
            r = radius(x)
            if np.any(r == 0):
                raise SingularityError("polar coordinate is singular at the origin")
            return r

        if which == "angle":
            def value(x):
                checked_radius(x)
                x = np.asarray(x, dtype=float)
                phi = np.arctan2(x[..., 1], x[..., 0])
                return np.where(phi >= np.pi, phi - 2.0 * np.pi, phi)

            def gradient(x):
                r = checked_radius(x)
                x = np.asarray(x, dtype=float)
                return np.stack([-x[..., 1], x[..., 0]], axis=-1) / (r ** 2)[..., None]

            return ReactionCoordinate("phi", RcKind.POLAR_ANGLE, 2, value, gradient, (-np.pi, np.pi))

        if which == "radius":
            def gradient(x):
                r = checked_radius(x)
                return np.asarray(x, dtype=float) / r[..., None]

            return ReactionCoordinate("r", RcKind.POLAR_RADIUS, 2, radius, gradient, (0.0, float(r_max)))

        raise DomainError(f"polar coordinate must be 'angle' or 'radius', got '{which}'")

    @staticmethod
    def level_grid(
        rc: ReactionCoordinate,
        n_z: int = DEFAULT_N_Z,
        support: Optional[Tuple[float, float]] = None
    ) -> np.ndarray:
        """Midpoint levels strictly inside the range, or inside `support` when given."""
        lo, hi = rc.range if support is None else support
        return lo + (hi - lo) * (np.arange(n_z) + 0.5) / n_z

    @staticmethod
    def sample_level_set_linear(rc: ReactionCoordinate, z: float, n: int, seed: int) -> LevelSetSample:
        """
        Uniform samples on the polytope {x in [-pi, pi]^d : a . x = z}.

        The section is parametrized as x0 + U t with U an orthonormal basis
        of the hyperplane; t is drawn uniformly from its bounding box and
        points outside the torus box are rejected.
        """
        if rc.kind not in (RcKind.LINEAR_TORUS, RcKind.LINEAR_TORUS_ALPHA):
            raise DomainError(f"{rc.name} is not a linear torus coordinate")
        a = rc.weights
        rng = stream(seed)
        x0 = z * a / np.dot(a, a)

        if a.size == 1:
            if abs(x0[0]) > np.pi:
                raise EmptyLevelSetError(z)
            return LevelSetSample(z, np.tile(x0, (n, 1)), np.full(n, 1.0 / n))

        basis = null_space(a[None, :])
        lo, hi = ReactionCoordinateService._section_box(basis, x0, z)

        if a.size == 2:
            t = rng.uniform(lo[0], hi[0], size=(n, 1))
            points = x0 + t @ basis.T
        else:
            points = ReactionCoordinateService._reject(basis, x0, lo, hi, n, rng, z)

        # project back onto the hyperplane
        points = points + np.outer(z - points @ a, a / np.dot(a, a))
        return LevelSetSample(z, points, np.full(n, 1.0 / n))

    @staticmethod
    def _section_box(basis: np.ndarray, x0: np.ndarray, z: float):
        """Bounding box of {t : -pi <= x0 + U t <= pi}."""
        k = basis.shape[1]
        if k == 1:
            u = basis[:, 0]
            lo, hi = -np.inf, np.inf
            for ui, xi in zip(u, x0):
                if abs(ui) < 1e-15:
                    if abs(xi) > np.pi:
                        raise EmptyLevelSetError(z)
                    continue
                bounds = sorted(((-np.pi - xi) / ui, (np.pi - xi) / ui))
                lo, hi = max(lo, bounds[0]), min(hi, bounds[1])
            if lo > hi:
                raise EmptyLevelSetError(z)
            return np.array([lo]), np.array([hi])

        a_ub = np.vstack([basis, -basis])
        b_ub = np.concatenate([np.pi - x0, np.pi + x0])
        lo, hi = np.empty(k), np.empty(k)
        for j in range(k):
            c = np.zeros(k)
            c[j] = 1.0
            low = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * k, method="highs")
            high = linprog(-c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * k, method="highs")
            if low.status != 0 or high.status != 0:
                raise EmptyLevelSetError(z)
            lo[j], hi[j] = low.x[j], high.x[j]
        return lo, hi

    @staticmethod
    def _reject(basis, x0, lo, hi, n, rng, z) -> np.ndarray:
        kept = []
        total = 0
        for _ in range(MAX_REJECTION_ROUNDS):
            t = rng.uniform(lo, hi, size=(2 * n, lo.size))
            x = x0 + t @ basis.T
            inside = np.all(np.abs(x) <= np.pi, axis=1)
            kept.append(x[inside])
            total += int(inside.sum())
            if total >= n:
                return np.concatenate(kept)[:n]
        raise EmptyLevelSetError(z, "level set has negligible volume")

    @staticmethod
    def _polar_curve(rc: ReactionCoordinate, z: float, nodes: int):
        """Parameter nodes, points and Hausdorff-corrected weight factor of a polar level set."""
        if rc.kind == RcKind.POLAR_ANGLE:
            nodes_t = np.linspace(0.0, rc.range[1], nodes)
            curve = np.stack([nodes_t * np.cos(z), nodes_t * np.sin(z)], axis=-1)
            return nodes_t, curve, nodes_t
        if rc.kind == RcKind.POLAR_RADIUS:
            if z <= 0:
                raise EmptyLevelSetError(z, "radius level set is degenerate")
            nodes_t = np.linspace(-np.pi, np.pi, nodes)
            curve = np.stack([z * np.cos(nodes_t), z * np.sin(nodes_t)], axis=-1)
            return nodes_t, curve, np.ones(nodes)
        raise DomainError(f"{rc.name} has no weighted level-set sampler")

    @staticmethod
    def level_mass(
        rc: ReactionCoordinate,
        z: float,
        stationary_density: Callable[[np.ndarray], np.ndarray],
        nodes: int = LEVEL_SET_NODES
    ) -> float:
        """Unnormalized marginal density of rc under pi at level z."""
        nodes_t, curve, factor = ReactionCoordinateService._polar_curve(rc, z, nodes)
        return float(trapezoid(stationary_density(curve) * factor, nodes_t))

    @staticmethod
    def level_support(
        rc: ReactionCoordinate,
        stationary_density: Callable[[np.ndarray], np.ndarray],
        floor: float,
        n_scan: int = SUPPORT_SCAN
    ):
        """
        Smallest interval of the range holding every level whose marginal
        reaches floor * max. Coordinates without weighted level sets keep
        their full range.
        """
        lo, hi = rc.range
        if floor <= 0 or rc.kind not in (RcKind.POLAR_ANGLE, RcKind.POLAR_RADIUS):
            return lo, hi
        levels = lo + (hi - lo) * (np.arange(n_scan) + 0.5) / n_scan
        mass = np.array([ReactionCoordinateService.level_mass(rc, z, stationary_density) for z in levels])
        kept = np.flatnonzero(mass >= floor * mass.max())
        half = 0.5 * (hi - lo) / n_scan
        return max(lo, levels[kept[0]] - half), min(hi, levels[kept[-1]] + half)

    @staticmethod
    def sample_level_set_weighted(
        rc: ReactionCoordinate,
        z: float,
        stationary_density: Callable[[np.ndarray], np.ndarray],
        n: int,
        seed: int,
        nodes: int = LEVEL_SET_NODES
    ) -> LevelSetSample:
        """
        Inverse-CDF samples of mu_z on the one-dimensional level sets of the
        polar coordinates.

        For the angle the level set is the ray t (cos z, sin z), t in (0, r_max],
        with density proportional to pi * t (the 1/|grad phi| factor). For the
        radius it is the circle of radius z with density proportional to pi.
        """
        nodes_t, curve, factor = ReactionCoordinateService._polar_curve(rc, z, nodes)
        density = stationary_density(curve) * factor

        cdf = cumulative_trapezoid(density, nodes_t, initial=0.0)
        mass = cdf[-1]
        if not mass >= EMPTY_MASS:
            raise EmptyLevelSetError(z, "level set carries no stationary mass")

        u = (1.0 - stream(seed).random(n)) * mass
        t = np.interp(u, cdf, nodes_t)
        if rc.kind == RcKind.POLAR_ANGLE:
            points = np.stack([t * np.cos(z), t * np.sin(z)], axis=-1)
        else:
            points = np.stack([z * np.cos(t), z * np.sin(t)], axis=-1)
        return LevelSetSample(z, points, np.full(n, 1.0 / n))

    @staticmethod
    def sample_level_set(
        rc: ReactionCoordinate,
        z: float,
        n: int,
        seed: int,
        stationary_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ) -> LevelSetSample:
        """Dispatch to the sampler matching the coordinate kind."""
        if rc.kind in (RcKind.LINEAR_TORUS, RcKind.LINEAR_TORUS_ALPHA):
            return ReactionCoordinateService.sample_level_set_linear(rc, z, n, seed)
        if rc.kind in (RcKind.POLAR_ANGLE, RcKind.POLAR_RADIUS):
            if stationary_density is None:
                raise DomainError(f"{rc.name} level sets need a stationary density")
            return ReactionCoordinateService.sample_level_set_weighted(rc, z, stationary_density, n, seed)
        if rc.sampler is None:
            raise DomainError(f"custom coordinate {rc.name} has no level-set sampler")
        return rc.sampler(z, n, seed)
