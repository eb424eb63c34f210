#quantize.py
# Toric Toeplitz quantization: norming constants, eigenvalues and the level-N potentials.
#
# Normalization: Q(alpha) is the pushforward integral over P against dy exactly,
# with no 1/vol, N^n or (2 pi)^n factors. Any constant rescaling moves phi_N by
# O(log N / N) and disappears in the limit.
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import integrate

from src.constants import Constants
from src.errors import InputError
from src.geodesic import ProblemData
from src.numerics import fd_gradient, fd_hessian, integrate_on_polytope, log_sum_exp, log_sum_exp_rows
from src.polytope import LatticeSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SpectralLevel:
    N: int
    lattice: LatticeSet
    log_q: np.ndarray
    mu: np.ndarray
    q_err: np.ndarray
    _lookup: Dict[Tuple[int, ...], int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_lookup", {a: k for k, a in enumerate(self.lattice.as_tuples())})

    @property
    def alphas(self) -> np.ndarray:
        return self.lattice.points

    @property
    def q(self) -> np.ndarray:
        return np.exp(self.log_q)

    def index(self, alpha) -> int:
        key = tuple(int(a) for a in np.atleast_1d(alpha))
        if key not in self._lookup:
            raise InputError(f"SpectralLevel.index:: {key} is not a lattice point of level {self.N}")
        return self._lookup[key]

    def norming_constant(self, alpha) -> float:
        return float(self.q[self.index(alpha)])

    def eigenvalue(self, alpha) -> float:
        return float(self.mu[self.index(alpha)])


def _check_alpha(problem: ProblemData, N: int, alpha) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.int64))
    polytope = problem.polytope
    if alpha.shape != (polytope.dimension,):
        raise InputError(f"quantize:: alpha {alpha.tolist()} does not match dimension {polytope.dimension}")
    normals = np.array(polytope.normals, dtype=np.int64)
    if np.any(normals @ alpha - N * np.array(polytope.offsets, dtype=np.int64) < 0):
        raise InputError(f"quantize:: alpha={alpha.tolist()} is not in N P for N={N}")
    return alpha


def _constant_velocity(problem: ProblemData) -> Optional[float]:
    poly = problem.udot0.smooth
    if poly.degree == 0:
        return sum(c for _, c in poly.terms)
    return None


def _alpha_integrals(problem: ProblemData, N: int, alpha: np.ndarray, rel_tol: float,
                     velocity_bound: float) -> Tuple[float, float, float]:
    """(log Q, mu, relative error of Q) for one lattice point, from shared quadrature nodes."""
    a = alpha / N
    # for convex u0 the tangent exponent never exceeds u0(a)
    shift = N * problem.u0.value(a)

    def integrand(y):
        w = np.exp(N * problem.u0.tangent_exponent(y, a) - shift)
        return np.vstack([w, -problem.udot0.value(y) * w])

    result = integrate_on_polytope(integrand, problem.polytope, rel_tol,
                                   scale=lambda v: np.array([abs(v[0]), abs(v[0]) * velocity_bound]))
    weight, moment = result.value
    logger.debug("quantize:: N=%d alpha=%s panels=%d", N, alpha.tolist(), result.panels_used)
    return shift + math.log(weight), moment / weight, float(result.error_estimate[0] / weight)


def build_spectral_level(problem: ProblemData, N: int, rel_tol: float = Constants.QUADRATURE_REL_TOL,
                         n_jobs: int = 1) -> SpectralLevel:
    """Norming constants and Toeplitz eigenvalues for every alpha in N P (parallel over alpha)."""
    lattice = problem.polytope.lattice_points(N)
    lo, hi = problem.udot0.extrema()
    bound = max(abs(lo), abs(hi), 1.0)
    rows = Parallel(n_jobs=n_jobs)(delayed(_alpha_integrals)(problem, N, alpha, rel_tol, bound)
                                   for alpha in lattice.points)
    log_q = np.array([r[0] for r in rows])
    mu = np.array([r[1] for r in rows])
    q_err = np.array([r[2] for r in rows])
    constant = _constant_velocity(problem)
    if constant is not None:
        mu = np.full(len(lattice), -constant)
    logger.info("build_spectral_level:: N=%d, %d lattice points, max rel quadrature error %.2e",
                N, len(lattice), float(q_err.max()))
    return SpectralLevel(N, lattice, log_q, mu, q_err)


def norming_constant(problem: ProblemData, N: int, alpha) -> float:
    alpha = _check_alpha(problem, N, alpha)
    log_q, _, _ = _alpha_integrals(problem, N, alpha, Constants.QUADRATURE_REL_TOL, 1.0)
    return math.exp(log_q)


def toeplitz_eigenvalue(problem: ProblemData, N: int, alpha) -> float:
    alpha = _check_alpha(problem, N, alpha)
    constant = _constant_velocity(problem)
    if constant is not None:
        return -constant
    lo, hi = problem.udot0.extrema()
    _, mu, _ = _alpha_integrals(problem, N, alpha, Constants.QUADRATURE_REL_TOL, max(abs(lo), abs(hi), 1.0))
    return mu


# level-N potentials

def _velocity_at_lattice(problem: ProblemData, level: SpectralLevel) -> np.ndarray:
    return problem.udot0.value(level.alphas / level.N)


def _potential_rows(level: SpectralLevel, coefficients: np.ndarray, xs: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """(1/N) log sum_alpha exp(c_alpha + <x, alpha> - N psi(x)) / Q(alpha), one row per coefficient row."""
    if len(level.lattice) == 0:
        raise InputError("quantize:: empty lattice")
    N = level.N
    linear = xs @ level.alphas.T.astype(float) - level.log_q[None, :]
    out = np.empty((len(coefficients), len(xs)))
    for k, (c, p) in enumerate(zip(coefficients, psi)):
        out[k] = log_sum_exp_rows(c[None, :] + linear - level.N * p[:, None]) / level.N
    return out


def _grid_inputs(problem: ProblemData, s_values, xs):
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    xs = np.asarray(xs, dtype=float).reshape(-1, problem.polytope.dimension)
    return s_values, xs


def phi_N_grid(problem: ProblemData, level: SpectralLevel, s_values, xs,
               psi0: Optional[np.ndarray] = None) -> np.ndarray:
    s_values, xs = _grid_inputs(problem, s_values, xs)
    if psi0 is None:
        psi0 = problem.ray.psi_grid([0.0], xs)[0]
    coefficients = np.outer(s_values, level.N * level.mu)
    return _potential_rows(level, coefficients, xs, np.tile(psi0, (len(s_values), 1)))


def tilde_phi_N_grid(problem: ProblemData, level: SpectralLevel, s_values, xs,
                     psi0: Optional[np.ndarray] = None) -> np.ndarray:
    s_values, xs = _grid_inputs(problem, s_values, xs)
    if psi0 is None:
        psi0 = problem.ray.psi_grid([0.0], xs)[0]
    coefficients = -np.outer(s_values, level.N * _velocity_at_lattice(problem, level))
    return _potential_rows(level, coefficients, xs, np.tile(psi0, (len(s_values), 1)))


def error_grid(problem: ProblemData, level: SpectralLevel, s_values, xs,
               psi_table: Optional[np.ndarray] = None) -> np.ndarray:
    """E_N(s, x) = tilde phi_N - phi_s over a grid; ``psi_table`` holds psi(s, x) rows."""
    s_values, xs = _grid_inputs(problem, s_values, xs)
    if psi_table is None:
        psi_table = problem.ray.psi_grid(s_values, xs)
    coefficients = -np.outer(s_values, level.N * _velocity_at_lattice(problem, level))
    return _potential_rows(level, coefficients, xs, psi_table)


def difference_grid(problem: ProblemData, level: SpectralLevel, s_values, xs,
                    psi_table: Optional[np.ndarray] = None, psi0: Optional[np.ndarray] = None) -> np.ndarray:
    """phi_N - phi_s over a grid."""
    s_values, xs = _grid_inputs(problem, s_values, xs)
    if psi_table is None:
        psi_table = problem.ray.psi_grid(s_values, xs)
    if psi0 is None:
        psi0 = problem.ray.psi_grid([0.0], xs)[0]
    return phi_N_grid(problem, level, s_values, xs, psi0) - (psi_table - psi0[None, :])


def phi_N(problem: ProblemData, level: SpectralLevel, s: float, x) -> float:
    """Quantum analytic continuation potential at level N."""
    return float(phi_N_grid(problem, level, [s], np.atleast_1d(x))[0, 0])


def tilde_phi_N(problem: ProblemData, level: SpectralLevel, s: float, x) -> float:
    """Variant of phi_N with eigenvalues replaced by -udot0(alpha/N)."""
    return float(tilde_phi_N_grid(problem, level, [s], np.atleast_1d(x))[0, 0])


def error_field(problem: ProblemData, level: SpectralLevel, s: float, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi_s = problem.ray.psi(s, x)[0]
    return float(error_grid(problem, level, [s], x, np.array([[psi_s]]))[0, 0])


def difference_field(problem: ProblemData, level: SpectralLevel, s: float, x) -> float:
    """phi_N(s, x) - phi_s(x) at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return phi_N(problem, level, s, x) - problem.ray.phi(s, x)


def _level_section(level: SpectralLevel, s: float):
    """x -> phi_N(s, x) + psi_0(x); the psi_0 shift cancels in every difference with phi_s."""
    coefficients = (s * level.N * level.mu)[None, :]
    flat = np.zeros((1, 1))

    def section(q):
        return float(_potential_rows(level, coefficients, np.atleast_2d(q), flat)[0, 0])
    return section


def _c2_gaps(section, x: np.ndarray, step: float, grad_psi: np.ndarray, hess_psi: np.ndarray) -> Tuple[float, float]:
    grad = fd_gradient(section, x, step) - grad_psi
    hess = fd_hessian(section, x, step) - hess_psi
    return float(np.linalg.norm(grad)), float(np.linalg.norm(hess, 2))


def c2_errors(problem: ProblemData, level: SpectralLevel, s: float, x) -> Tuple[float, float]:
    """(|grad_x (phi_N - phi_s)|, spectral norm of hess_x (phi_N - phi_s)) at one point.

    Both sides use central differences with the ray's x step.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ray = problem.ray
    step = ray.x_step(x)
    grad_psi, hess_psi = ray.x_derivatives(s, x, step)
    return _c2_gaps(_level_section(level, s), x, step, grad_psi, hess_psi)


def c2_error_grid(problem: ProblemData, level: SpectralLevel, s_values, xs,
                  derivatives: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  n_jobs: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian gaps of phi_N - phi_s over a grid, each of shape (S, X).

    ``derivatives`` holds the (gradients, Hessians) of psi from
    ``GeodesicRay.derivative_grid`` so several levels can share them.
    """
    s_values, xs = _grid_inputs(problem, s_values, xs)
    ray = problem.ray
    if derivatives is None:
        derivatives = ray.derivative_grid(s_values, xs, n_jobs)
    grads, hesses = derivatives
    grad_gap = np.empty((len(s_values), len(xs)))
    hess_gap = np.empty_like(grad_gap)
    for i, s in enumerate(s_values):
        section = _level_section(level, float(s))
        for j, x in enumerate(xs):
            grad_gap[i, j], hess_gap[i, j] = _c2_gaps(section, x, ray.x_step(x), grads[i, j], hesses[i, j])
    return grad_gap, hess_gap


def sup_error(problem: ProblemData, level: SpectralLevel, s_grid, x_grid,
              psi_table: Optional[np.ndarray] = None) -> float:
    """sup over the grid of |E_N|."""
    if len(np.atleast_1d(s_grid)) == 0 or len(np.atleast_1d(x_grid)) == 0:
        raise InputError("sup_error:: empty grid")
    return float(np.max(np.abs(error_grid(problem, level, s_grid, x_grid, psi_table))))


def error_bounds(problem: ProblemData, level: SpectralLevel, s_grid, x_grid,
                 psi_table: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """(max E_N, min E_N): the upper (subsolution) side and the lower side separately."""
    table = error_grid(problem, level, s_grid, x_grid, psi_table)
    return float(table.max()), float(table.min())


def rate_fit(levels: Sequence[int], errors: Sequence[float]) -> Tuple[float, float]:
    """Least-squares C in e_N ~ C log N / N, with the largest relative residual."""
    levels = np.asarray(levels, dtype=float)
    errors = np.maximum(np.asarray(errors, dtype=float), Constants.LOG_FLOOR)
    if len(levels) < 3 or len(levels) != len(errors):
        raise InputError("rate_fit:: need at least 3 levels with matching errors")
    if np.any(np.diff(levels) <= 0):
        raise InputError("rate_fit:: levels must be strictly increasing")
    model = np.log(levels) / levels
    c_hat = float(model @ errors / (model @ model))
    residual = float(np.max(np.abs(errors - c_hat * model) / errors))
    return c_hat, residual


def eigenvalue_gap(problem: ProblemData, level: SpectralLevel) -> float:
    """max_alpha |mu_{N,alpha} + udot0(alpha/N)|."""
    return float(np.max(np.abs(level.mu + _velocity_at_lattice(problem, level))))


def quantum_potential_estimate(problem: ProblemData, levels: Sequence[SpectralLevel], l: int,
                               s: float, x) -> float:
    """Running sup of phi_N over the computed levels with N >= l."""
    chosen = [lv for lv in levels if lv.N >= l]
    if not chosen:
        raise InputError(f"quantum_potential_estimate:: no computed level with N >= {l}")
    # continuous grid data: the upper semicontinuous regularization does not change the value
    return max(phi_N(problem, lv, s, x) for lv in chosen)


def q_asymptotic_gap(problem: ProblemData, level: SpectralLevel, min_distance: float = 0.1) -> float:
    """max over interior alpha of |(1/N) log Q(alpha) - u0(alpha/N)|."""
    points = level.alphas / level.N
    interior = problem.polytope.boundary_distance(points) > min_distance
    if not np.any(interior):
        raise InputError(f"q_asymptotic_gap:: no lattice point at distance > {min_distance}")
    gap = level.log_q[interior] / level.N - problem.u0.value(points[interior])
    return float(np.max(np.abs(gap)))


def x_space_eigenvalue(problem: ProblemData, N: int, alpha: int) -> Tuple[float, float]:
    """(Q, mu) from the x-space integrals on the open orbit, one-dimensional problems only.

    Weight e^{alpha x - N psi0(x)} psi0''(x) dx; psi0' and psi0'' come from the
    Legendre maximizer and (u0'')^-1 there. Used as an independent oracle.
    """
    if problem.polytope.dimension != 1:
        raise InputError("x_space_eigenvalue:: only one-dimensional polytopes are supported")
    alpha = int(_check_alpha(problem, N, alpha)[0])
    ray = problem.ray
    shift = N * problem.u0.value(np.array([alpha / N]))

    def parts(x):
        value, m = ray.psi(0.0, np.array([x]))
        exponent = alpha * x - N * value - shift
        y = m.points[0]
        if exponent < -700 or problem.polytope.boundary_distance(y) <= 0:
            return 0.0, 0.0
        weight = math.exp(exponent) / float(problem.u0.hessian(y)[0, 0])
        return weight, -weight * problem.udot0.value(y)

    q = integrate.quad(lambda x: parts(x)[0], -np.inf, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)[0]
    m = integrate.quad(lambda x: parts(x)[1], -np.inf, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)[0]
    return math.exp(shift) * q, m / q
