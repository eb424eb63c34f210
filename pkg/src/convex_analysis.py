#convex_analysis.py
# Legendre-Fenchel duality on a polytope, subdifferentials and the convex lifespan.
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist

from src.constants import Constants
from src.errors import InputError, NumericalDomainError, PreconditionError
from src.fields import ScalarFieldOnP
from src.numerics import generalized_max_eigenvalues, min_eigenvalue
from src.polytope import DelzantPolytope

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolytopeGrid:
    points: np.ndarray      # (k, n) grid nodes inside P
    index: np.ndarray       # (k,) flat positions in the bounding-box grid
    shape: Tuple[int, ...]  # bounding-box grid shape
    spacing: np.ndarray     # (n,) node spacing


@dataclass(frozen=True)
class MaximizerSet:
    points: np.ndarray
    value: float
    diameter: float

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class LifespanResult:
    value: float
    binding_point: Optional[np.ndarray]
    rel_accuracy: float


def default_resolution(polytope: DelzantPolytope) -> int:
    return Constants.LEGENDRE_RESOLUTION.get(polytope.dimension, Constants.LEGENDRE_RESOLUTION_HIGH_DIM)


def polytope_grid(polytope: DelzantPolytope, resolution: int, collar: float = 0.0) -> PolytopeGrid:
    """Uniform bounding-box grid with ``resolution`` intervals per axis, restricted to P.

    With ``collar > 0`` only nodes at distance >= collar from the boundary are kept.
    """
    lo, hi = polytope.bounding_box()
    axes = [np.linspace(a, b, resolution + 1) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, polytope.dimension)
    if collar > 0:
        keep = polytope.boundary_distance(mesh) >= collar
    else:
        keep = polytope.contains(mesh)
    index = np.flatnonzero(keep)
    if index.size == 0:
        raise InputError(f"polytope_grid:: no grid node survives (resolution {resolution}, collar {collar})")
    return PolytopeGrid(mesh[index], index, tuple(len(a) for a in axes), (hi - lo) / resolution)


def _objective(g: ScalarFieldOnP, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=1) - g.value(y)


def _newton(g: ScalarFieldOnP, xs: np.ndarray, ys: np.ndarray):
    """Batched damped Newton ascent of <x, y> - g(y) from interior starts.

    Returns refined points and a mask of entries where Newton was applicable
    (interior iterate with positive definite Hessian throughout).
    """
    polytope = g.polytope
    v = polytope.normal_matrix
    ys = ys.copy()
    ok = np.all(polytope.facet_values(ys) > 0, axis=1)
    active = ok.copy()
    for _ in range(Constants.NEWTON_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        y = ys[idx]
        x = xs[idx]
        value, grad, hess = g.evaluate(y)
        pd = np.linalg.eigvalsh(hess)[:, 0] > 0
        ok[idx[~pd]] = False
        active[idx[~pd]] = False
        idx, y, x, value, grad, hess = idx[pd], y[pd], x[pd], value[pd], grad[pd], hess[pd]
        if idx.size == 0:
            break
        d = np.linalg.solve(hess, (x - grad)[..., None])[..., 0]
        f0 = np.sum(x * y, axis=1) - value
        rate = d @ v.T
        room = polytope.facet_values(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            limits = np.where(rate < 0, 0.99 * room / -rate, np.inf)
        t = np.minimum(1.0, np.min(limits, axis=1))
        for _ in range(60):
            trial = y + t[:, None] * d
            f1 = np.sum(x * trial, axis=1) - g.value(trial)
            worse = f1 < f0 - 4 * np.finfo(float).eps * (1.0 + np.abs(f0))
            if not np.any(worse):
                break
            t = np.where(worse, 0.5 * t, t)
        step = t[:, None] * d
        ys[idx] = y + step
        done = np.linalg.norm(step, axis=1) <= Constants.NEWTON_STEP_TOL * (1.0 + np.linalg.norm(y, axis=1))
        active[idx[done]] = False
    return ys, ok


def _zoom(g: ScalarFieldOnP, x: np.ndarray, y0: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """Shrinking local grid search, valid on the boundary and for flat Hessians."""
    polytope = g.polytope
    n = polytope.dimension
    best = y0
    width = spacing.copy()
    offsets = np.linspace(-1.0, 1.0, Constants.ZOOM_POINTS)
    stencil = np.stack(np.meshgrid(*([offsets] * n), indexing="ij"), axis=-1).reshape(-1, n)
    for _ in range(Constants.ZOOM_ROUNDS):
        trial = best + stencil * width
        trial = trial[polytope.contains(trial)]
        scores = _objective(g, x[None, :], trial)
        best = trial[int(np.argmax(scores))]
        width = width * 0.5
    return best


def conjugate_grid(g: ScalarFieldOnP, xs, resolution: Optional[int] = None,
                   tol: Optional[float] = None) -> List[MaximizerSet]:
    """sup_y <x, y> - g(y) and its maximizers for every x in ``xs`` (shape (k, n)).

    With ``tol`` every maximizer whose objective lies within ``tol`` of the
    supremum is returned; by default only numerical ties are kept.
    """
    polytope = g.polytope
    n = polytope.dimension
    xs = np.asarray(xs, dtype=float).reshape(-1, n)
    grid = polytope_grid(polytope, resolution or default_resolution(polytope))
    gvals = g.value(grid.points)
    if not np.all(np.isfinite(gvals)):
        raise NumericalDomainError("conjugate_grid:: evaluator returned non-finite values on the scan grid")

    pairs_x, pairs_y, owner = [], [], []
    size = int(np.prod(grid.shape))
    chunk = max(1, 2 ** 22 // max(size, 1))
    for start in range(0, len(xs), chunk):
        block = xs[start:start + chunk]
        scores = block @ grid.points.T - gvals
        box = np.full((len(block), size), -np.inf)
        box[:, grid.index] = scores
        box = box.reshape((len(block),) + grid.shape)
        peaks = ndimage.maximum_filter(box, size=(1,) + (3,) * n, mode="constant", cval=-np.inf)
        local = (box == peaks).reshape(len(block), size)[:, grid.index]
        for row in range(len(block)):
            best = scores[row].max()
            slack = max(1e-3 * (1.0 + abs(best)), tol or 0.0)
            cand = np.flatnonzero(local[row] & (scores[row] >= best - slack))
            if cand.size == 0:
                cand = np.array([int(np.argmax(scores[row]))])
            cand = cand[np.argsort(-scores[row][cand], kind="stable")][:Constants.MAX_CANDIDATES]
            for c in cand:
                pairs_x.append(block[row])
                pairs_y.append(grid.points[c])
                owner.append(start + row)

    pairs_x = np.array(pairs_x)
    refined, newton_ok = _newton(g, pairs_x, np.array(pairs_y))
    for k in np.flatnonzero(~newton_ok):
        refined[k] = _zoom(g, pairs_x[k], refined[k], grid.spacing)
    values = _objective(g, pairs_x, refined)

    owner = np.array(owner)
    results = []
    for i in range(len(xs)):
        mine = np.flatnonzero(owner == i)
        results.append(_maximizer_set(refined[mine], values[mine], tol))
    return results


def _maximizer_set(points: np.ndarray, values: np.ndarray, tol: Optional[float] = None) -> MaximizerSet:
    best = float(np.max(values))
    tie = tol if tol is not None else max(Constants.TIE_ABS_TOL, Constants.TIE_REL_TOL * abs(best))
    keep = points[values >= best - tie]
    merged = []
    for p in keep:
        if all(np.linalg.norm(p - q) > Constants.CLUSTER_MERGE_TOL for q in merged):
            merged.append(p)
    merged = np.array(merged)
    diameter = float(np.max(pdist(merged))) if len(merged) > 1 else 0.0
    return MaximizerSet(merged, best, diameter)


def legendre_on_polytope(g: ScalarFieldOnP, x, tol: Optional[float] = None,
                         resolution: Optional[int] = None) -> MaximizerSet:
    """sup_{y in P} <x, y> - g(y) with every maximizer found.

    ``tol`` is a value gap: points whose objective is within ``tol`` of the
    supremum are returned too.
    """
    return conjugate_grid(g, np.atleast_1d(np.asarray(x, dtype=float)), resolution, tol)[0]


def kahler_potential(u: ScalarFieldOnP, x, resolution: Optional[int] = None) -> float:
    """psi(x) = u*(x), the Legendre dual of a symplectic potential."""
    return legendre_on_polytope(u, x, resolution=resolution).value


def dual_gradient_check(u: ScalarFieldOnP, y, resolution: Optional[int] = None) -> float:
    """|grad psi(grad u(y)) - y| with grad psi from central differences of u*."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_star = np.atleast_1d(u.gradient(y))
    n = y.size
    h = 1e-5 * (1.0 + np.abs(x_star))
    stencil = np.vstack([x_star + h * e for e in np.eye(n)] + [x_star - h * e for e in np.eye(n)])
    values = np.array([m.value for m in conjugate_grid(u, stencil, resolution)])
    grad_psi = (values[:n] - values[n:]) / (2 * h)
    return float(np.linalg.norm(grad_psi - y))


def min_hessian_eigenvalue(g: ScalarFieldOnP, y) -> float:
    return min_eigenvalue(np.atleast_2d(g.hessian(y)))


def _require_positive_definite(where: str, points: np.ndarray, hess: np.ndarray) -> None:
    eig0 = np.linalg.eigvalsh(hess)[:, 0]
    if np.any(eig0 <= 0):
        bad = points[int(np.argmin(eig0))]
        raise PreconditionError(f"{where}:: u0 is not strictly convex at {bad.tolist()} "
                                f"(min eigenvalue {float(eig0.min()):.3e})")


def check_strictly_convex(u0: ScalarFieldOnP, resolution: Optional[int] = None) -> None:
    """Raise PreconditionError unless the Hessian of u0 is positive definite on the collar grid."""
    if resolution is None:
        resolution = min(Constants.LIFESPAN_RESOLUTION, default_resolution(u0.polytope))
    points = lifespan_grid(u0.polytope, resolution).points
    hess = u0.hessian(points).reshape(len(points), u0.polytope.dimension, -1)
    _require_positive_definite("check_strictly_convex", points, hess)


def lifespan_grid(polytope: DelzantPolytope, resolution: int = Constants.LIFESPAN_RESOLUTION) -> PolytopeGrid:
    """Interior grid kept a quarter spacing away from the boundary."""
    lo, hi = polytope.bounding_box()
    return polytope_grid(polytope, resolution, collar=float(np.max(hi - lo)) / (4 * resolution))


def _lifespan_rates(u0: ScalarFieldOnP, udot0: ScalarFieldOnP, points: np.ndarray) -> np.ndarray:
    h0 = u0.hessian(points).reshape(len(points), u0.polytope.dimension, -1)
    h1 = udot0.hessian(points).reshape(h0.shape)
    _require_positive_definite("convex_lifespan", points, h0)
    return generalized_max_eigenvalues(-h1, h0)


def find_convex_lifespan(u0: ScalarFieldOnP, udot0: ScalarFieldOnP,
                         resolution: int = Constants.LIFESPAN_RESOLUTION,
                         rel_accuracy: float = Constants.LIFESPAN_REL_ACCURACY) -> LifespanResult:
    """Largest T with u0 + s*udot0 convex on P for all s < T, and the point that binds it."""
    polytope = u0.polytope
    grid = lifespan_grid(polytope, resolution)
    rates = _lifespan_rates(u0, udot0, grid.points)
    k = int(np.argmax(rates))
    if rates[k] <= 0:
        logger.info("find_convex_lifespan:: no binding point, lifespan is infinite")
        return LifespanResult(math.inf, None, rel_accuracy)

    best, best_rate = grid.points[k], float(rates[k])
    width = grid.spacing.copy()
    n = polytope.dimension
    offsets = np.linspace(-1.0, 1.0, Constants.ZOOM_POINTS)
    stencil = np.stack(np.meshgrid(*([offsets] * n), indexing="ij"), axis=-1).reshape(-1, n)
    for _ in range(Constants.ZOOM_ROUNDS):
        trial = best + stencil * width
        trial = trial[polytope.boundary_distance(trial) > 0]
        trial_rates = _lifespan_rates(u0, udot0, trial)
        j = int(np.argmax(trial_rates))
        previous = best_rate
        if trial_rates[j] > best_rate:
            best, best_rate = trial[j], float(trial_rates[j])
        width = width / 4
        if abs(best_rate - previous) <= 0.1 * rel_accuracy * best_rate and np.all(width < rel_accuracy * grid.spacing):
            break
    logger.info("find_convex_lifespan:: T=%.6f at y*=%s", 1.0 / best_rate, best.tolist())
    return LifespanResult(1.0 / best_rate, best, rel_accuracy)


def convex_lifespan(u0: ScalarFieldOnP, udot0: ScalarFieldOnP,
                    resolution: int = Constants.LIFESPAN_RESOLUTION) -> float:
    return find_convex_lifespan(u0, udot0, resolution).value


def hessian_eigenvalue_profile(u0: ScalarFieldOnP, udot0: ScalarFieldOnP, s: float,
                               resolution: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest Hessian eigenvalue of u0 + s*udot0 over an interior grid of P."""
    polytope = u0.polytope
    grid = lifespan_grid(polytope, resolution)
    hess = (u0 + s * udot0).hessian(grid.points).reshape(len(grid.points), polytope.dimension, -1)
    return grid.points, np.linalg.eigvalsh(hess)[:, 0]
