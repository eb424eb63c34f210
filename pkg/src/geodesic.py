#geodesic.py
# The Legendre transform potential psi(s, x) = (u0 + s*udot0)*(x) and its singular locus.
import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.constants import Constants
from src.convex_analysis import (MaximizerSet, check_strictly_convex, conjugate_grid, default_resolution,
                                 find_convex_lifespan, LifespanResult)
from src.errors import InputError
from src.fields import Polynomial, ScalarFieldOnP, smooth_field
from src.numerics import fd_gradient, fd_hessian
from src.polytope import DelzantPolytope


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Cauchy data: u0 = u_G + F on P and a velocity udot0 smooth up to the boundary."""
    polytope: DelzantPolytope
    u0: ScalarFieldOnP
    udot0: ScalarFieldOnP
    resolution: Optional[int] = None

    def __post_init__(self):
        if self.u0.polytope is not self.polytope or self.udot0.polytope is not self.polytope:
            raise InputError("ProblemData:: u0 and udot0 must live on the problem polytope")
        if self.u0.guillemin != 1.0:
            raise InputError("ProblemData:: u0 must be the Guillemin potential plus a smooth part")
        check_strictly_convex(self.u0)
        if not self.udot0.is_smooth:
            raise InputError("ProblemData:: the velocity must be smooth up to the boundary")

    @cached_property
    def lifespan(self) -> LifespanResult:
        return find_convex_lifespan(self.u0, self.udot0)

    @property
    def t_cvx(self) -> float:
        return self.lifespan.value

    @cached_property
    def ray(self) -> "GeodesicRay":
        return GeodesicRay(self)

    def u_s(self, s: float) -> ScalarFieldOnP:
        return self.u0 + s * self.udot0

    def psi0(self, x) -> float:
        """psi_0 = u0*, pinning the additive constant of the initial Kahler potential."""
        return self.ray.psi(0.0, x)[0]


def velocity_from_kahler_data(problem: Union[ProblemData, DelzantPolytope],
                              phidot0: Union[Polynomial, ScalarFieldOnP]) -> ScalarFieldOnP:
    """udot0 = -phidot0 o (grad psi0)^-1, with phidot0 already written in the moment variable y."""
    polytope = getattr(problem, "polytope", problem)
    if isinstance(phidot0, Polynomial):
        phidot0 = smooth_field(polytope, phidot0)
    return -phidot0


def _psi_row(problem: ProblemData, s: float, xs: np.ndarray, resolution: Optional[int]) -> List[MaximizerSet]:
    return conjugate_grid(problem.u_s(s), xs, resolution)


def _derivative_row(ray: "GeodesicRay", s: float, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    parts = [ray.x_derivatives(s, x) for x in xs]
    return np.array([p[0] for p in parts]), np.array([p[1] for p in parts])


class GeodesicRay:
    def __init__(self, problem: ProblemData, resolution: Optional[int] = None):
        self.problem = problem
        self.resolution = resolution or problem.resolution or default_resolution(problem.polytope)
        self.logger = logging.getLogger(__name__)
        # (s, x) -> MaximizerSet, least recently used entries evicted first
        self._cache: "OrderedDict[Tuple[float, tuple], MaximizerSet]" = OrderedDict()
        self.cache_size = Constants.RAY_CACHE_SIZE

    @property
    def dimension(self) -> int:
        return self.problem.polytope.dimension

    def _x(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dimension,):
            raise InputError(f"GeodesicRay:: x of shape {x.shape} for dimension {self.dimension}")
        return x

    @property
    def scan_spacing(self) -> float:
        lo, hi = self.problem.polytope.bounding_box()
        return float(np.max(hi - lo)) / self.resolution

    def default_singular_tol(self) -> float:
        return Constants.SINGULAR_TOL_FACTOR * self.scan_spacing

    def psi(self, s: float, x) -> Tuple[float, MaximizerSet]:
        if s < 0:
            raise InputError(f"GeodesicRay.psi:: s must be nonnegative, got {s}")
        x = self._x(x)
        key = (float(s), tuple(x.tolist()))
        result = self._cache.get(key)
        if result is None:
            result = conjugate_grid(self.problem.u_s(s), x[None, :], self.resolution)[0]
            self._cache[key] = result
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return result.value, result

    def psi0(self, x) -> float:
        return self.psi(0.0, x)[0]

    def phi(self, s: float, x) -> float:
        """phi_s = psi_s - psi_0."""
        return self.psi(s, x)[0] - self.psi(0.0, x)[0]

    def psi_sets(self, s_values: Sequence[float], xs, n_jobs: int = 1) -> List[List[MaximizerSet]]:
        """Maximizer sets over an (s, x) grid; rows follow ``s_values``."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        if any(s < 0 for s in s_values):
            raise InputError("GeodesicRay.psi_sets:: s grid has negative entries")
        return Parallel(n_jobs=n_jobs)(delayed(_psi_row)(self.problem, float(s), xs, self.resolution)
                                       for s in s_values)

    def psi_grid(self, s_values: Sequence[float], xs, n_jobs: int = 1) -> np.ndarray:
        rows = self.psi_sets(s_values, xs, n_jobs)
        return np.array([[m.value for m in row] for row in rows])

    def lipschitz_constants(self) -> Tuple[float, float]:
        """(max_P |y|, max_P |udot0|): Lipschitz bounds of psi in x and in s."""
        lo, hi = self.problem.udot0.extrema()
        return self.problem.polytope.max_norm(), max(abs(lo), abs(hi))

    def _curvature(self, s: float, sets: Sequence[MaximizerSet]) -> np.ndarray:
        """Diagonal of (hess u_s)^-1 at each set's maximizers: the x-curvature of smooth psi."""
        u_s = self.problem.u_s(s)
        out = np.zeros((len(sets), self.dimension))
        for k, m in enumerate(sets):
            interior = m.points[np.all(self.problem.polytope.facet_values(m.points) > 0, axis=1)]
            if len(interior) == 0:
                continue
            hess = u_s.hessian(interior).reshape(len(interior), self.dimension, self.dimension)
            eig = np.linalg.eigvalsh(hess)[:, 0]
            good = eig > 0
            if np.any(good):
                out[k] = np.max(np.diagonal(np.linalg.inv(hess[good]), axis1=1, axis2=2), axis=0)
        return out

    def singular_mask(self, s: float, xs, tol: Optional[float] = None,
                      radius: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """Kink detection for a batch of x at fixed s.

        With ``radius == 0`` a point is singular when its maximizer set has
        diameter > tol. With ``radius > 0`` a kink anywhere within ``radius``
        along a coordinate axis is reported: the coordinate jump of the
        maximizers across the stencil x +- radius*e_i must exceed
        tol + 2*radius*(largest smooth curvature at the stencil ends), the
        most a differentiable psi could move its gradient.
        """
        tol = self.default_singular_tol() if tol is None else tol
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        u_s = self.problem.u_s(s)
        center = conjugate_grid(u_s, xs, self.resolution)
        diameters = np.array([m.diameter for m in center])
        flags = diameters > tol
        excess = diameters.copy()
        if radius > 0:
            for i in range(self.dimension):
                e = np.zeros(self.dimension)
                e[i] = radius
                minus = conjugate_grid(u_s, xs - e, self.resolution)
                plus = conjugate_grid(u_s, xs + e, self.resolution)
                jump = np.array([p.points[:, i].max() - m.points[:, i].min() for m, p in zip(minus, plus)])
                allowance = 2.0 * radius * np.maximum(self._curvature(s, minus)[:, i], self._curvature(s, plus)[:, i])
                over = jump - allowance
                flags |= over > tol
                excess = np.maximum(excess, over)
        return flags, excess

    def singular_indicator(self, s: float, x, tol: Optional[float] = None,
                           radius: float = 0.0) -> Tuple[bool, float]:
        """True when psi is not differentiable at (s, x) (non-unique maximizer)."""
        x = self._x(x)
        if radius == 0.0:
            _, m = self.psi(s, x)
            tol = self.default_singular_tol() if tol is None else tol
            return m.diameter > tol, m.diameter
        flags, excess = self.singular_mask(s, x[None, :], tol, radius)
        return bool(flags[0]), float(excess[0])

    def hrma_residual(self, s: float, x, h: Optional[float] = None) -> float:
        """det of the central-difference (s, x) Hessian of psi.

        Stencils that would reach s < 0 fall back to forward differences in s
        (first-order accurate).
        """
        x = self._x(x)
        step = self.x_step(x) if h is None else h
        lower = np.concatenate([[0.0], np.full(self.dimension, -np.inf)])

        def joint(point):
            return self.psi(point[0], point[1:])[0]

        hess = fd_hessian(joint, np.concatenate([[s], x]), step, lower=lower)
        return float(np.linalg.det(hess))

    def x_step(self, x) -> float:
        return Constants.FD_STEP * (1.0 + float(np.max(np.abs(x))))

    def x_derivatives(self, s: float, x, h: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Central-difference gradient and Hessian of psi(s, .) at x."""
        x = self._x(x)
        step = self.x_step(x) if h is None else h

        def section(q):
            return self.psi(s, q)[0]

        return fd_gradient(section, x, step), fd_hessian(section, x, step)

    def derivative_grid(self, s_values: Sequence[float], xs, n_jobs: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """x-gradients (S, X, n) and x-Hessians (S, X, n, n) of psi over an (s, x) grid."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        rows = Parallel(n_jobs=n_jobs)(delayed(_derivative_row)(self, float(s), xs) for s in s_values)
        return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])

    def singular_locus_scan(self, s_values: Sequence[float], xs, tol: Optional[float] = None,
                            radius: float = 0.0) -> pd.DataFrame:
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dimension)
        rows = []
        for s in s_values:
            flags, excess = self.singular_mask(float(s), xs, tol, radius)
            for x, flag, d in zip(xs, flags, excess):
                rows.append([float(s)] + x.tolist() + [bool(flag), float(d)])
        columns = ["s"] + [f"x{i + 1}" if self.dimension > 1 else "x" for i in range(self.dimension)]
        self.logger.info("GeodesicRay.singular_locus_scan:: %d of %d points singular",
                         sum(r[-2] for r in rows), len(rows))
        return pd.DataFrame(rows, columns=columns + ["singular", "diameter"])
