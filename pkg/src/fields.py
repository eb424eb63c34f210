#fields.py
# Scalar fields on a polytope: Guillemin part plus a smooth polynomial part.
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.special import xlogy

from src.errors import InputError, NumericalDomainError
from src.polytope import DelzantPolytope


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial sum_e c_e y^e, terms stored as ((e_1, ..., e_n), c)."""
    dimension: int
    terms: Tuple[Tuple[Tuple[int, ...], float], ...] = ()

    def __post_init__(self):
        merged = {}
        for exps, coef in self.terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.dimension or any(e < 0 for e in exps):
                raise InputError(f"Polynomial:: bad exponent {exps} for dimension {self.dimension}")
            merged[exps] = merged.get(exps, 0.0) + float(coef)
        object.__setattr__(self, "terms", tuple(sorted((e, c) for e, c in merged.items() if c != 0.0)))

    @classmethod
    def from_table(cls, dimension: int, table: Iterable[Sequence]) -> "Polynomial":
        """Build from ``[[coef, [e_1, ..., e_n]], ...]`` as written in study files."""
        return cls(dimension, tuple((tuple(exps), coef) for coef, exps in table))

    @classmethod
    def zero(cls, dimension: int) -> "Polynomial":
        return cls(dimension)

    @classmethod
    def affine(cls, slope: Sequence[float], intercept: float = 0.0) -> "Polynomial":
        n = len(slope)
        terms = [((0,) * n, intercept)]
        terms += [(tuple(int(i == k) for i in range(n)), a) for k, a in enumerate(slope)]
        return cls(n, tuple(terms))

    @property
    def degree(self) -> int:
        return max((sum(e) for e, _ in self.terms), default=0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(self.dimension, self.terms + other.terms)

    def __mul__(self, scalar: float) -> "Polynomial":
        return Polynomial(self.dimension, tuple((e, c * scalar) for e, c in self.terms))

    __rmul__ = __mul__

    def __neg__(self) -> "Polynomial":
        return self * -1.0

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def _powers(self, pts, exps, shift):
        # y_i^(e_i - shift_i) times the falling-factorial coefficient
        out = np.ones(pts.shape[0])
        for i, (e, k) in enumerate(zip(exps, shift)):
            if e < k:
                return None
            factor = 1.0
            for j in range(k):
                factor *= e - j
            out = out * factor * pts[:, i] ** (e - k)
        return out

    def evaluate(self, pts: np.ndarray):
        """Values (m,), gradients (m, n) and Hessians (m, n, n) at a batch of points."""
        m, n = pts.shape
        value = np.zeros(m)
        grad = np.zeros((m, n))
        hess = np.zeros((m, n, n))
        eye = np.eye(n, dtype=int)
        for exps, coef in self.terms:
            value += coef * self._powers(pts, exps, (0,) * n)
            for i in range(n):
                g = self._powers(pts, exps, eye[i])
                if g is not None:
                    grad[:, i] += coef * g
                for j in range(i, n):
                    h = self._powers(pts, exps, eye[i] + eye[j])
                    if h is not None:
                        hess[:, i, j] += coef * h
                        if i != j:
                            hess[:, j, i] += coef * h
        return value, grad, hess

    def __call__(self, y) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(y, dtype=float))
        return self.evaluate(pts)[0]


@dataclass(frozen=True, eq=False)
class ScalarFieldOnP:
    """g = c * u_G + F with F polynomial; c = 0 means smooth up to the boundary."""
    polytope: DelzantPolytope
    guillemin: float = 0.0
    smooth: Polynomial = None

    def __post_init__(self):
        n = self.polytope.dimension
        if self.smooth is None:
            object.__setattr__(self, "smooth", Polynomial.zero(n))
        if self.smooth.dimension != n:
            raise InputError(f"ScalarFieldOnP:: polynomial dimension {self.smooth.dimension} "
                             f"on a {n}-dimensional polytope")
        if self.guillemin < 0:
            raise InputError(f"ScalarFieldOnP:: negative Guillemin coefficient {self.guillemin}")

    @property
    def is_smooth(self) -> bool:
        return self.guillemin == 0.0

    # arithmetic: u_s = u0 + s * udot0 stays a field

    def __add__(self, other: "ScalarFieldOnP") -> "ScalarFieldOnP":
        if other.polytope is not self.polytope:
            raise InputError("ScalarFieldOnP:: fields live on different polytopes")
        return ScalarFieldOnP(self.polytope, self.guillemin + other.guillemin, self.smooth + other.smooth)

    def __mul__(self, scalar: float) -> "ScalarFieldOnP":
        if self.guillemin and scalar < 0:
            raise InputError("ScalarFieldOnP:: negative multiple of a Guillemin-singular field")
        return ScalarFieldOnP(self.polytope, self.guillemin * scalar, self.smooth * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarFieldOnP":
        return self * -1.0

    def _batch(self, y):
        arr = np.asarray(y, dtype=float)
        n = self.polytope.dimension
        single = arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == n)
        return arr.reshape(-1, n), single

    def evaluate(self, y):
        """(value, gradient, Hessian) at interior points; single point or batch."""
        pts, single = self._batch(y)
        value, grad, hess = self.smooth.evaluate(pts)
        if self.guillemin:
            gv, gg, gh = self.polytope.guillemin(pts)
            value = value + self.guillemin * gv
            grad = grad + self.guillemin * gg
            hess = hess + self.guillemin * gh
        if not np.all(np.isfinite(value)):
            raise NumericalDomainError("ScalarFieldOnP.evaluate:: non-finite value")
        if single:
            return float(value[0]), grad[0], hess[0]
        return value, grad, hess

    def value(self, y):
        """Values on the closed polytope, using the continuous extension of u_G."""
        pts, single = self._batch(y)
        value = self.smooth(pts)
        if self.guillemin:
            value = value + self.guillemin * self.polytope.guillemin_value(pts)
        return float(value[0]) if single else value

    def gradient(self, y):
        return self.evaluate(y)[1]

    def hessian(self, y):
        return self.evaluate(y)[2]

    def tangent_exponent(self, y, a) -> np.ndarray:
        """g(y) + <a - y, grad g(y)> for a batch of interior y and a fixed a in P.

        The Guillemin part is evaluated in the cancelled form
        sum_k [l_k(a) log l_k(y) + l_k(a) - l_k(y)], which stays finite when a
        sits on a facet. For convex g the result never exceeds g(a).
        """
        pts, _ = self._batch(y)
        a = np.asarray(a, dtype=float).reshape(-1)
        value, grad, _ = self.smooth.evaluate(pts)
        out = value + np.sum((a - pts) * grad, axis=1)
        if self.guillemin:
            la = np.maximum(self.polytope.facet_values(a), 0.0)
            ly = self.polytope.facet_values(pts)
            out = out + self.guillemin * np.sum(xlogy(la, ly) + la - ly, axis=1)
        return out

    def extrema(self, resolution: int = 64) -> Tuple[float, float]:
        """(min, max) of the field over a sample grid of P including its vertices."""
        from src.convex_analysis import polytope_grid

        pts = np.vstack([polytope_grid(self.polytope, resolution).points, self.polytope.vertices])
        values = self.value(pts)
        return float(np.min(values)), float(np.max(values))


def guillemin_field(polytope: DelzantPolytope, smooth: Polynomial = None) -> ScalarFieldOnP:
    return ScalarFieldOnP(polytope, 1.0, smooth)


def smooth_field(polytope: DelzantPolytope, smooth: Polynomial) -> ScalarFieldOnP:
    return ScalarFieldOnP(polytope, 0.0, smooth)
