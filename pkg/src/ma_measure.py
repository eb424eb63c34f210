#ma_measure.py
# Alexandrov Monge-Ampere measures of piecewise-linear convex functions on a grid.
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from src.constants import Constants
from src.errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PLConvexFunction:
    axes: Tuple[np.ndarray, ...]   # grid coordinates per dimension
    values: np.ndarray             # envelope values, shape of the grid
    gradients: np.ndarray          # (F, m) gradients of the lower hull facets
    facets: np.ndarray             # (F, m+1) node indices of each lower facet
    is_vertex: np.ndarray          # (K,) node is a vertex of the lower hull

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)

    def interior_nodes(self) -> np.ndarray:
        """Mask of nodes strictly inside the box."""
        mask = np.ones(self.shape, dtype=bool)
        for axis in range(self.dimension):
            index = [slice(None)] * self.dimension
            index[axis] = 0
            mask[tuple(index)] = False
            index[axis] = -1
            mask[tuple(index)] = False
        return mask.ravel()


@dataclass(frozen=True)
class MADecomposition:
    points: np.ndarray        # (A, m) atom locations
    masses: np.ndarray        # (A,)
    singular: np.ndarray      # (A,) bool
    total_mass: float
    singular_mass: float
    half_width: float = 0.0   # 95% confidence half-width (Monte Carlo only)

    @property
    def regular_mass(self) -> float:
        return self.total_mass - self.singular_mass

    def to_frame(self) -> pd.DataFrame:
        m = self.points.shape[1]
        names = ["s", "x"] if m == 2 else ["s"] + [f"x{i}" for i in range(1, m)]
        frame = pd.DataFrame(self.points, columns=names)
        frame["mass"] = self.masses
        frame["singular_flag"] = self.singular.astype(int)
        return frame


def pl_convexify(axes: Sequence[Sequence[float]], samples) -> PLConvexFunction:
    """Lower convex envelope of grid samples, restricted to the grid nodes."""
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    m = len(axes)
    values = np.asarray(samples, dtype=float)
    shape = tuple(len(a) for a in axes)
    if values.shape != shape:
        raise InputError(f"pl_convexify:: samples of shape {values.shape} for grid {shape}")
    if any(n < 2 for n in shape):
        raise InputError(f"pl_convexify:: need at least {m + 1} affinely independent nodes")
    if not np.all(np.isfinite(values)):
        raise InputError("pl_convexify:: non-finite samples")
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    z = values.ravel()
    try:
        hull = ConvexHull(np.column_stack([nodes, z]))
    except QhullError:
        # flat graph: one affine piece, no vertices carry mass
        design = np.column_stack([nodes, np.ones(len(nodes))])
        coef = np.linalg.lstsq(design, z, rcond=None)[0]
        if np.max(np.abs(design @ coef - z)) > 1e-9 * (1.0 + np.max(np.abs(z))):
            raise InputError("pl_convexify:: degenerate sample set, hull construction failed")
        return PLConvexFunction(axes, values.copy(), coef[None, :m], np.zeros((0, m + 1), dtype=int),
                                np.zeros(len(nodes), dtype=bool))
    eq = hull.equations
    lower = eq[:, m] < -1e-9
    gradients = -eq[lower, :m] / eq[lower, m][:, None]
    offsets = -eq[lower, m + 1] / eq[lower, m]
    facets = hull.simplices[lower]
    is_vertex = np.zeros(len(nodes), dtype=bool)
    is_vertex[np.unique(facets)] = True

    envelope = z.copy()
    rest = np.flatnonzero(~is_vertex)
    for start in range(0, len(rest), 256):
        idx = rest[start:start + 256]
        planes = nodes[idx] @ gradients.T + offsets[None, :]
        envelope[idx] = np.minimum(z[idx], planes.max(axis=1))
    logger.debug("pl_convexify:: %d nodes, %d lower facets, %d hull vertices",
                 len(nodes), len(facets), int(is_vertex.sum()))
    return PLConvexFunction(axes, envelope.reshape(shape), gradients, facets, is_vertex)


def _polygon_areas(groups: List[np.ndarray]) -> np.ndarray:
    """Areas of convex polygons given by (unordered) vertex lists, batched by size."""
    areas = np.zeros(len(groups))
    sizes = np.array([len(g) for g in groups])
    for k in np.unique(sizes):
        if k < 3:
            continue
        which = np.flatnonzero(sizes == k)
        pts = np.stack([groups[i] for i in which])
        center = pts.mean(axis=1, keepdims=True)
        angle = np.arctan2(pts[..., 1] - center[..., 1], pts[..., 0] - center[..., 0])
        order = np.argsort(angle, axis=1, kind="stable")
        pts = np.take_along_axis(pts, order[..., None], axis=1)
        nxt = np.roll(pts, -1, axis=1)
        areas[which] = 0.5 * np.abs(np.sum(pts[..., 0] * nxt[..., 1] - nxt[..., 0] * pts[..., 1], axis=1))
    return areas


def alexandrov_measure(f: PLConvexFunction, samples: int = 200000, seed: int = 0) -> MADecomposition:
    """Atomic MA measure at interior hull vertices: mass = area of the subdifferential.

    Exact (polar polygon areas) for m = 2; Monte Carlo slope sampling otherwise.
    Nodes on the box boundary are excluded.
    """
    if f.dimension != 2:
        logger.warning("alexandrov_measure:: dimension %d, falling back to Monte Carlo slope sampling", f.dimension)
        return slope_sweep_mass(f, samples=samples, seed=seed)
    nodes = f.nodes
    interior = f.interior_nodes() & f.is_vertex
    if len(f.facets) == 0 or not np.any(interior):
        return MADecomposition(np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=bool), 0.0, 0.0)
    owner = f.facets.ravel()
    facet_id = np.repeat(np.arange(len(f.facets)), f.facets.shape[1])
    keep = interior[owner]
    owner, facet_id = owner[keep], facet_id[keep]
    order = np.argsort(owner, kind="stable")
    owner, facet_id = owner[order], facet_id[order]
    vertices, starts = np.unique(owner, return_index=True)
    groups = np.split(f.gradients[facet_id], starts[1:])
    masses = _polygon_areas(groups)
    positive = masses > 0
    points = nodes[vertices[positive]]
    masses = masses[positive]
    return MADecomposition(points, masses, np.zeros(len(masses), dtype=bool), float(np.sum(masses)), 0.0)


def slope_sweep_mass(f: PLConvexFunction, slopes: Optional[np.ndarray] = None, samples: int = 200000,
                     seed: int = 0) -> MADecomposition:
    """Subdifferential-image measure by slope sampling.

    A slope p lies in the subdifferential image of the interior iff the node
    minimizing f(z) - <p, z> is interior. ``slopes`` gives an explicit
    (deterministic) sweep; otherwise slopes are drawn uniformly from the
    bounding box of the hull gradients with a fixed seed.
    """
    nodes = f.nodes
    z = f.values.ravel()
    interior = f.interior_nodes()
    lo, hi = f.gradients.min(axis=0), f.gradients.max(axis=0)
    volume = float(np.prod(hi - lo))
    if slopes is None:
        rng = np.random.default_rng(seed)
        slopes = lo + (hi - lo) * rng.random((samples, f.dimension))
        random = True
    else:
        slopes = np.asarray(slopes, dtype=float)
        random = False
    hits = np.zeros(len(nodes))
    chunk = max(1, 2 ** 22 // len(nodes))
    for start in range(0, len(slopes), chunk):
        p = slopes[start:start + chunk]
        winner = np.argmin(z[None, :] - p @ nodes.T, axis=1)
        np.add.at(hits, winner[interior[winner]], 1.0)
    fraction = hits.sum() / len(slopes)
    total = fraction * volume
    half_width = 1.96 * np.sqrt(fraction * (1 - fraction) / len(slopes)) * volume if random else 0.0
    atoms = np.flatnonzero(hits)
    masses = hits[atoms] / len(slopes) * volume
    return MADecomposition(nodes[atoms], masses, np.zeros(len(atoms), dtype=bool), float(total), 0.0,
                           float(half_width))


def classify(decomposition: MADecomposition, indicator: Callable[[np.ndarray], np.ndarray]) -> MADecomposition:
    """Flag atoms with a batched singular-set indicator."""
    flags = np.asarray(indicator(decomposition.points), dtype=bool) if len(decomposition.points) else \
        np.zeros(0, dtype=bool)
    return replace(decomposition, singular=flags, singular_mass=float(np.sum(decomposition.masses[flags])))


def mass_split(f: PLConvexFunction, decomposition: MADecomposition,
               indicator: Callable[[np.ndarray], np.ndarray]) -> Tuple[float, float]:
    """(regular_mass, singular_mass) of the decomposition under the indicator."""
    flagged = classify(decomposition, indicator)
    return flagged.regular_mass, flagged.singular_mass
