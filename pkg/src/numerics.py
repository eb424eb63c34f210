#numerics.py
# Shared numerical kernels: adaptive polytope quadrature, stable log-sum-exp,
# finite-difference derivatives and symmetric eigen-solves.
import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from src.constants import Constants
from src.errors import ConsistencyError, InputError, QuadratureError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureResult:
    value: Union[float, np.ndarray]
    error_estimate: Union[float, np.ndarray]
    panels_used: int


@lru_cache(maxsize=None)
def _gauss_rule(order: int, dim: int):
    """Tensor Gauss-Legendre rule on the unit cube [0, 1]^dim."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    nodes = np.array(list(itertools.product(x, repeat=dim)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return nodes, weights


def _collapse(simplex: np.ndarray, t: np.ndarray):
    """Collapsed-coordinate map from the unit cube onto a simplex, with its Jacobian."""
    dim = simplex.shape[1]
    origin = simplex[0]
    edges = simplex[1:] - origin
    lam = np.empty_like(t)
    remaining = np.ones(t.shape[0])
    jac = np.ones(t.shape[0])
    for k in range(dim):
        lam[:, k] = remaining * t[:, k]
        jac *= remaining
        remaining = remaining * (1.0 - t[:, k])
    points = origin + lam @ edges
    return points, jac * abs(np.linalg.det(edges))


class _Panel:
    __slots__ = ("simplex", "lo", "hi", "value", "error")

    def __init__(self, simplex, lo, hi, value, error):
        self.simplex = simplex
        self.lo = lo
        self.hi = hi
        self.value = value
        self.error = error


def _panel_estimate(f, simplex, lo, hi, order, pair_order):
    dim = simplex.shape[1]
    estimates = []
    for k in (order, pair_order):
        nodes, weights = _gauss_rule(k, dim)
        t = lo + (hi - lo) * nodes
        points, jac = _collapse(simplex, t)
        values = np.atleast_2d(np.asarray(f(points), dtype=float))
        estimates.append(values @ (weights * jac * np.prod(hi - lo)))
    return estimates[0], np.abs(estimates[0] - estimates[1])


def integrate_on_polytope(f: Callable[[np.ndarray], np.ndarray], polytope, rel_tol: float = Constants.QUADRATURE_REL_TOL,
                          *, scale: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                          order: int = Constants.GAUSS_ORDER, pair_order: int = Constants.GAUSS_PAIR_ORDER,
                          budget: int = Constants.PANEL_BUDGET, initial_depth: int = 2) -> QuadratureResult:
    """Integrate ``f`` over the polytope by adaptive Gauss panels.

    ``f`` maps an ``(m, n)`` array of points to ``(m,)`` values, or to ``(c, m)``
    for ``c`` integrands sharing the same nodes. The polytope is split into
    simplices, each simplex is pulled back to the unit cube through collapsed
    coordinates and the cube is bisected on the panel with the largest
    ``order``/``pair_order`` discrepancy until every component satisfies
    ``error <= max(rel_tol * scale, abs_floor)``; ``scale`` defaults to ``|value|``.
    """
    simplices = [np.asarray(s, dtype=float) for s in polytope.simplices()]
    dim = simplices[0].shape[1]
    splits = 2 ** initial_depth
    heap = []
    counter = itertools.count()
    total = None
    total_err = None
    for simplex in simplices:
        for cell in itertools.product(range(splits), repeat=dim):
            lo = np.array(cell, dtype=float) / splits
            hi = lo + 1.0 / splits
            value, error = _panel_estimate(f, simplex, lo, hi, order, pair_order)
            total = value if total is None else total + value
            total_err = error if total_err is None else total_err + error
            heapq.heappush(heap, (-float(np.max(error)), next(counter), _Panel(simplex, lo, hi, value, error)))

    def converged():
        magnitude = np.abs(total) if scale is None else np.abs(np.asarray(scale(total), dtype=float))
        return np.all(total_err <= np.maximum(rel_tol * magnitude, Constants.QUADRATURE_ABS_FLOOR))

    while not converged():
        if len(heap) >= budget:
            squeeze = lambda v: float(v[0]) if np.size(v) == 1 else v
            raise QuadratureError(
                f"integrate_on_polytope:: panel budget {budget} exhausted "
                f"(error {squeeze(total_err)} > rel_tol {rel_tol})",
                estimate=squeeze(total), error_estimate=squeeze(total_err), rel_tol=rel_tol)
        _, _, panel = heapq.heappop(heap)
        total = total - panel.value
        total_err = total_err - panel.error
        mid = 0.5 * (panel.lo + panel.hi)
        for corner in itertools.product((0, 1), repeat=dim):
            corner = np.array(corner)
            lo = np.where(corner == 0, panel.lo, mid)
            hi = np.where(corner == 0, mid, panel.hi)
            value, error = _panel_estimate(f, panel.simplex, lo, hi, order, pair_order)
            total = total + value
            total_err = total_err + error
            heapq.heappush(heap, (-float(np.max(error)), next(counter), _Panel(panel.simplex, lo, hi, value, error)))
    # subtraction of retired panels can leave tiny negative residues
    total_err = np.abs(total_err)
    if np.size(total) == 1:
        return QuadratureResult(float(total[0]), float(total_err[0]), len(heap))
    return QuadratureResult(np.asarray(total), np.asarray(total_err), len(heap))


def log_sum_exp(exponents: Sequence[float], weights: Optional[Sequence[float]] = None) -> float:
    """log(sum_i w_i exp(a_i)) with a max shift and compensated summation."""
    a = np.asarray(exponents, dtype=float).ravel()
    if a.size == 0:
        raise InputError("log_sum_exp:: empty exponent list")
    if weights is not None:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != a.shape:
            raise InputError(f"log_sum_exp:: {a.size} exponents but {w.size} weights")
        if np.any(w <= 0):
            raise InputError("log_sum_exp:: weights must be positive")
        a = a + np.log(w)
    top = float(np.max(a))
    if top == -math.inf:
        return -math.inf
    return top + math.log(math.fsum(np.exp(a - top)))


def log_sum_exp_rows(exponents: np.ndarray) -> np.ndarray:
    """Row-wise log_sum_exp of a 2-D array, same summation as the scalar form."""
    a = np.atleast_2d(np.asarray(exponents, dtype=float))
    if a.shape[1] == 0:
        raise InputError("log_sum_exp_rows:: empty exponent rows")
    top = np.max(a, axis=1)
    shifted = np.exp(a - top[:, None])
    return top + np.log(np.array([math.fsum(row) for row in shifted]))


def fd_gradient(f: Callable[[np.ndarray], float], point, h) -> np.ndarray:
    """Central-difference gradient of a scalar function, ``h`` scalar or per coordinate."""
    p = np.asarray(point, dtype=float)
    dim = p.size
    steps = np.broadcast_to(np.asarray(h, dtype=float), (dim,))
    e = np.eye(dim)
    grad = np.empty(dim)
    for i in range(dim):
        grad[i] = (float(f(p.copy() + steps[i] * e[i])) - float(f(p.copy() - steps[i] * e[i]))) / (2 * steps[i])
    return grad


def fd_hessian(f: Callable[[np.ndarray], float], point, h, lower=None) -> np.ndarray:
    """Central-difference Hessian of a scalar function.

    ``h`` may be a scalar or a per-coordinate vector. Coordinates whose
    central stencil would cross ``lower`` switch to forward differences
    (first-order accurate).
    """
    p = np.asarray(point, dtype=float)
    dim = p.size
    steps = np.broadcast_to(np.asarray(h, dtype=float), (dim,)).copy()
    forward = np.zeros(dim, dtype=bool)
    if lower is not None:
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
        forward = p - 2.0 * steps < lo
    e = np.eye(dim)

    def at(*shifts):
        q = p.copy()
        for i, k in shifts:
            q = q + k * steps[i] * e[i]
        return float(f(q))

    f0 = at()
    hess = np.empty((dim, dim))
    for i in range(dim):
        if forward[i]:
            hess[i, i] = (at((i, 2)) - 2.0 * at((i, 1)) + f0) / steps[i] ** 2
        else:
            hess[i, i] = (at((i, 1)) - 2.0 * f0 + at((i, -1))) / steps[i] ** 2
        for j in range(i + 1, dim):
            if forward[i] and forward[j]:
                val = (at((i, 1), (j, 1)) - at((i, 1)) - at((j, 1)) + f0) / (steps[i] * steps[j])
            elif forward[i]:
                val = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((j, 1)) + at((j, -1))) / (2 * steps[i] * steps[j])
            elif forward[j]:
                val = (at((i, 1), (j, 1)) - at((i, -1), (j, 1)) - at((i, 1)) + at((i, -1))) / (2 * steps[i] * steps[j])
            else:
                val = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1))
                       + at((i, -1), (j, -1))) / (4 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess


def check_symmetric(matrix: np.ndarray, tol: float = Constants.HESSIAN_SYMMETRY_TOL) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    gap = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if gap > tol:
        raise ConsistencyError(f"check_symmetric:: asymmetry {gap:.3e} exceeds {tol:.1e}")
    return 0.5 * (m + m.T)


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(linalg.eigh(check_symmetric(matrix), eigvals_only=True)[0])


def generalized_max_eigenvalues(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of each pencil a v = lambda b v, b positive definite.

    ``a`` and ``b`` are stacks of shape (k, n, n); b = L L^T is factored and
    the symmetric part of L^-1 a L^-T is diagonalized.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise InputError(f"generalized_max_eigenvalues:: pencil shapes {a.shape} and {b.shape} do not match")
    inv = np.linalg.inv(np.linalg.cholesky(b))
    reduced = inv @ a @ np.swapaxes(inv, -1, -2)
    reduced = 0.5 * (reduced + np.swapaxes(reduced, -1, -2))
    return np.linalg.eigvalsh(reduced)[:, -1]
