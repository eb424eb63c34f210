#polytope.py
# Delzant lattice polytopes P = {y : <y, v_j> - lambda_j >= 0}
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import Delaunay, HalfspaceIntersection
from scipy.special import xlogy

from src.constants import Constants
from src.errors import DomainError, InputError

logger = logging.getLogger(__name__)

PRESETS = {
    "segment": ([[1], [-1]], [0, -1]),
    "square": ([[1, 0], [0, 1], [-1, 0], [0, -1]], [0, 0, -1, -1]),
    "simplex2": ([[1, 0], [0, 1], [-1, -1]], [0, 0, -1]),
}


@dataclass(frozen=True)
class LatticeSet:
    level: int
    points: np.ndarray

    def __len__(self):
        return len(self.points)

    def as_tuples(self) -> List[Tuple[int, ...]]:
        return [tuple(int(c) for c in p) for p in self.points]


@dataclass(frozen=True, eq=False)
class DelzantPolytope:
    normals: Tuple[Tuple[int, ...], ...]
    offsets: Tuple[int, ...]
    vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        normals = tuple(tuple(int(c) for c in v) for v in self.normals)
        offsets = tuple(int(c) for c in self.offsets)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        if not normals or len(normals) != len(offsets):
            raise InputError("DelzantPolytope:: need one offset per facet normal "
                             f"({len(normals)} normals, {len(offsets)} offsets)")
        dims = {len(v) for v in normals}
        if len(dims) != 1 or 0 in dims:
            raise InputError(f"DelzantPolytope:: facet normals have inconsistent lengths {sorted(dims)}")
        for v in normals:
            if math.gcd(*v) != 1:
                raise InputError(f"DelzantPolytope:: normal {v} is not primitive")
        object.__setattr__(self, "_v", np.array(normals, dtype=float))
        object.__setattr__(self, "_lam", np.array(offsets, dtype=float))
        self._check_bounded()
        vertices = self._exact_vertices() if self.dimension <= 2 else self._numeric_vertices()
        object.__setattr__(self, "vertices", vertices)
        self._check_delzant()

    @classmethod
    def preset(cls, name: str) -> "DelzantPolytope":
        if name not in PRESETS:
            raise InputError(f"DelzantPolytope.preset:: unknown preset '{name}' "
                             f"(known: {', '.join(sorted(PRESETS))})")
        normals, offsets = PRESETS[name]
        return cls(tuple(map(tuple, normals)), tuple(offsets))

    @property
    def dimension(self) -> int:
        return len(self.normals[0])

    @property
    def facet_count(self) -> int:
        return len(self.normals)

    @property
    def normal_matrix(self) -> np.ndarray:
        return self._v

    # validation

    def _check_bounded(self):
        a_ub = -self._v
        b_ub = -self._lam
        for i in range(self.dimension):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dimension)
                c[i] = sign
                res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * self.dimension)
                if res.status == 2:
                    raise InputError("DelzantPolytope:: facet inequalities are infeasible (empty polytope)")
                if res.status == 3:
                    raise InputError(f"DelzantPolytope:: polytope is unbounded along coordinate {i}")
        center, radius = self.chebyshev_center()
        if radius <= 0:
            raise InputError("DelzantPolytope:: polytope has empty interior")

    def chebyshev_center(self) -> Tuple[np.ndarray, float]:
        norms = np.linalg.norm(self._v, axis=1)
        c = np.zeros(self.dimension + 1)
        c[-1] = -1.0
        a_ub = np.hstack([-self._v, norms[:, None]])
        res = linprog(c, A_ub=a_ub, b_ub=-self._lam, bounds=[(None, None)] * self.dimension + [(0, None)])
        return res.x[:-1], float(res.x[-1])

    def _exact_vertices(self) -> np.ndarray:
        n = self.dimension
        found = set()
        for combo in itertools.combinations(range(self.facet_count), n):
            rows = [self.normals[j] for j in combo]
            rhs = [self.offsets[j] for j in combo]
            if n == 1:
                point = (Fraction(rhs[0], rows[0][0]),)
            else:
                det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
                if det == 0:
                    continue
                point = (Fraction(rhs[0] * rows[1][1] - rhs[1] * rows[0][1], det),
                         Fraction(rows[0][0] * rhs[1] - rows[1][0] * rhs[0], det))
            if all(sum(p * c for p, c in zip(point, v)) - lam >= 0 for v, lam in zip(self.normals, self.offsets)):
                found.add(point)
        vertices = np.array(sorted(found), dtype=float)
        if n == 2:
            center = vertices.mean(axis=0)
            order = np.argsort(np.arctan2(vertices[:, 1] - center[1], vertices[:, 0] - center[0]))
            vertices = vertices[order]
        return vertices

    def _numeric_vertices(self) -> np.ndarray:
        center, _ = self.chebyshev_center()
        halfspaces = np.hstack([-self._v, self._lam[:, None]])
        hs = HalfspaceIntersection(halfspaces, center)
        return np.unique(np.round(hs.intersections, 12), axis=0)

    def _check_delzant(self):
        n = self.dimension
        for vertex in self.vertices:
            active = [j for j, l in enumerate(self.facet_values(vertex)) if abs(l) <= 1e-9]
            if len(active) != n:
                raise InputError(f"DelzantPolytope:: vertex {vertex.tolist()} lies on {len(active)} facets, "
                                 f"expected {n}")
            if n <= 2:
                det = round(abs(np.linalg.det(self._v[active])))
                if det != 1:
                    raise InputError(f"DelzantPolytope:: normals at vertex {vertex.tolist()} do not span Z^{n}")
        if n > 2:
            logger.warning("DelzantPolytope.__init__:: smoothness of vertex cones not checked for n=%d", n)

    # geometry

    def _points(self, y) -> np.ndarray:
        arr = np.asarray(y, dtype=float)
        if arr.shape[-1:] != (self.dimension,) and not (self.dimension == 1 and arr.ndim == 0):
            raise InputError(f"DelzantPolytope:: point of shape {arr.shape} does not match dimension {self.dimension}")
        return arr.reshape(1) if arr.ndim == 0 else arr

    def facet_values(self, y) -> np.ndarray:
        """(l_1(y), ..., l_d(y)); batched over leading axes."""
        return self._points(y) @ self._v.T - self._lam

    def contains(self, y, tol: float = Constants.MEMBERSHIP_TOL) -> np.ndarray:
        return np.all(self.facet_values(y) >= -tol * (1.0 + np.abs(self._lam)), axis=-1)

    def boundary_distance(self, y) -> np.ndarray:
        """Euclidean distance to the boundary; negative (signed) outside P."""
        scaled = self.facet_values(y) / np.linalg.norm(self._v, axis=1)
        return np.min(scaled, axis=-1)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def simplices(self) -> List[np.ndarray]:
        if self.dimension == 1:
            return [np.array([[self.vertices[0, 0]], [self.vertices[-1, 0]]])]
        if self.dimension == 2:
            v = self.vertices
            return [np.array([v[0], v[k], v[k + 1]]) for k in range(1, len(v) - 1)]
        return [self.vertices[s] for s in Delaunay(self.vertices).simplices]

    def lattice_points(self, level: int) -> LatticeSet:
        """All alpha in Z^n with alpha/N in P, lexicographically sorted."""
        if int(level) != level or level < 1:
            raise InputError(f"DelzantPolytope.lattice_points:: level must be a positive integer, got {level}")
        level = int(level)
        lo, hi = self.bounding_box()
        ranges = [range(math.floor(level * a - 1e-9), math.ceil(level * b + 1e-9) + 1) for a, b in zip(lo, hi)]
        normals = np.array(self.normals, dtype=np.int64)
        offsets = level * np.array(self.offsets, dtype=np.int64)
        candidates = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, self.dimension)
        keep = np.all(candidates @ normals.T - offsets >= 0, axis=1)
        return LatticeSet(level, candidates[keep])

    # Guillemin potential

    def guillemin(self, y):
        """u_G = sum_k l_k log l_k with its gradient and Hessian at interior points.

        Returns scalars/(n,)/(n, n) for a single point and stacked arrays for a batch.
        """
        single = np.asarray(y, dtype=float).ndim <= 1
        pts = self._points(y).reshape(-1, self.dimension)
        l = self.facet_values(pts)
        if np.any(l <= 0):
            raise DomainError("DelzantPolytope.guillemin:: point on or outside the boundary "
                              f"(min facet value {float(np.min(l)):.3e})")
        value = np.sum(l * np.log(l), axis=1)
        gradient = (1.0 + np.log(l)) @ self._v
        hessian = np.einsum("mk,ki,kj->mij", 1.0 / l, self._v, self._v)
        if single:
            return float(value[0]), gradient[0], hessian[0]
        return value, gradient, hessian

    def guillemin_value(self, y) -> np.ndarray:
        """u_G extended continuously to the closed polytope (0 log 0 = 0)."""
        l = np.maximum(self.facet_values(y), 0.0)
        return np.sum(xlogy(l, l), axis=-1)


def polytope_from_config(entry) -> DelzantPolytope:
    if isinstance(entry, str):
        return DelzantPolytope.preset(entry)
    return DelzantPolytope(tuple(map(tuple, entry["normals"])), tuple(entry["offsets"]))
