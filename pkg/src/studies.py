#studies.py
# The convergence, lifespan, Monge-Ampere and spectral-cache studies behind the CLI subcommands.
import logging
import math
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import artifacts
from src.constants import Constants
from src.convex_analysis import find_convex_lifespan, hessian_eigenvalue_profile
from src.errors import InputError, NumericalDomainError
from src.geodesic import GeodesicRay
from src.ma_measure import alexandrov_measure, classify, pl_convexify
from src.quantize import (SpectralLevel, build_spectral_level, c2_error_grid, difference_grid, eigenvalue_gap,
                          error_grid, phi_N_grid, q_asymptotic_gap, rate_fit, tilde_phi_N_grid)
from src.study_config import StudyConfig

logger = logging.getLogger(__name__)


def s_grid(T: float, step: float) -> np.ndarray:
    """0, step, ..., T built from integer multiples (no accumulated drift)."""
    count = int(math.floor(T / step + 1e-9))
    values = step * np.arange(count + 1)
    if T - values[-1] > 1e-12 * max(1.0, T):
        values = np.append(values, T)
    return values


def x_grid(dimension: int, window: float, points: int) -> np.ndarray:
    axis = np.linspace(-window, window, points)
    mesh = np.meshgrid(*([axis] * dimension), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dimension)


def spectral_levels(config: StudyConfig, out_dir: str, n_jobs: int = 1) -> List[SpectralLevel]:
    """Levels of the ladder, read from or added to <out>/spectral-cache."""
    cache_dir = os.path.join(out_dir, Constants.CACHE_DIR)
    os.makedirs(cache_dir, exist_ok=True)
    key = config.problem_key()
    levels = []
    for N in config.levels:
        path = artifacts.level_path(cache_dir, key, N, config.quadrature_tol)
        if os.path.exists(path):
            logger.info("spectral_levels:: N=%d from cache %s", N, path)
            levels.append(artifacts.load_spectral_level(config.problem.polytope, N, path))
            continue
        level = build_spectral_level(config.problem, N, config.quadrature_tol, n_jobs)
        artifacts.save_spectral_level(level, path)
        levels.append(level)
    return levels


def run_spectral_cache(config: StudyConfig, out_dir: str, n_jobs: int = 1) -> List[str]:
    levels = spectral_levels(config, out_dir, n_jobs)
    rows = []
    for level in levels:
        rows.append({"N": level.N, "lattice_points": len(level.lattice),
                     "eigenvalue_gap": eigenvalue_gap(config.problem, level),
                     "max_q_err": float(level.q_err.max())})
        try:
            rows[-1]["q_asymptotic_gap"] = q_asymptotic_gap(config.problem, level)
        except InputError:
            rows[-1]["q_asymptotic_gap"] = float("nan")
    return [artifacts.write_table(pd.DataFrame(rows), out_dir, "spectral_summary.csv")]


def run_convergence_study(config: StudyConfig, out_dir: str, n_jobs: int = 1) -> List[str]:
    """phi_N, tilde phi_N and E_N per level on the (s, x) grid, C2 gaps below T_cvx and the summary table."""
    problem = config.problem
    ray = problem.ray
    s_values = s_grid(config.T, config.s_step)
    xs = x_grid(config.dimension, config.x_window, config.x_points)
    logger.info("run_convergence_study:: %d s values x %d x points, levels %s",
                len(s_values), len(xs), list(config.levels))
    psi_table = ray.psi_grid(s_values, xs, n_jobs=n_jobs)
    psi0 = psi_table[0]
    if not np.all(np.isfinite(psi_table)):
        raise NumericalDomainError("run_convergence_study:: non-finite psi values")

    t_cvx = find_convex_lifespan(problem.u0, problem.udot0, config.lifespan_resolution).value
    smooth_s = s_values[s_values < t_cvx]
    c2_xs = xs[np.unique(np.round(np.linspace(0, len(xs) - 1, min(len(xs), Constants.C2_X_POINTS))).astype(int))]
    derivatives = ray.derivative_grid(smooth_s, c2_xs, n_jobs=n_jobs) if len(smooth_s) else None
    logger.info("run_convergence_study:: C2 gaps on %d s values below T_cvx=%.6g at %d x points",
                len(smooth_s), t_cvx, len(c2_xs))

    files, rows, c2_rows = [], [], []
    for level in spectral_levels(config, out_dir, n_jobs):
        phi = phi_N_grid(problem, level, s_values, xs, psi0)
        tilde = tilde_phi_N_grid(problem, level, s_values, xs, psi0)
        error = error_grid(problem, level, s_values, xs, psi_table)
        diff = difference_grid(problem, level, s_values, xs, psi_table, psi0)
        frame = artifacts.grid_frame(s_values, xs, {"phi": psi_table - psi0[None, :], "phi_N": phi,
                                                    "tilde_phi_N": tilde, "E_N": error, "phi_N_minus_phi": diff})
        files.append(artifacts.write_table(frame, out_dir, f"converge_N{level.N}.csv"))
        rows.append({"N": level.N, "sup_error": float(np.max(np.abs(error))), "max_E": float(error.max()),
                     "min_E": float(error.min()), "sup_phi_N_error": float(np.max(np.abs(diff))),
                     "eigenvalue_gap": eigenvalue_gap(problem, level)})
        if derivatives is not None:
            grad_gap, hess_gap = c2_error_grid(problem, level, smooth_s, c2_xs, derivatives)
            rows[-1].update(sup_grad_error=float(grad_gap.max()), sup_hess_error=float(hess_gap.max()))
            c2_rows += [{"N": level.N, "s": float(s), "sup_grad_error": float(g.max()), "sup_hess_error": float(h.max())}
                        for s, g, h in zip(smooth_s, grad_gap, hess_gap)]
        else:
            rows[-1].update(sup_grad_error=float("nan"), sup_hess_error=float("nan"))

    summary = pd.DataFrame(rows)
    summary["N_log_N_ratio"] = summary["sup_error"] * summary["N"] / np.log(summary["N"])
    summary["N_times_gap"] = summary["eigenvalue_gap"] * summary["N"]
    fitted = None
    if len(summary) >= 3:
        fitted, residual = rate_fit(summary["N"], summary["sup_error"])
        summary["fitted_C"] = fitted
        summary["fit_residual"] = residual
        logger.info("run_convergence_study:: sup|E_N| ~ %.4g log N / N, max relative residual %.3f",
                    fitted, residual)
    files.append(artifacts.write_table(summary, out_dir, "summary.csv"))
    if c2_rows:
        files.append(artifacts.write_table(pd.DataFrame(c2_rows), out_dir, "c2_errors.csv"))
    if config.plots:
        files.append(artifacts.plot_convergence(summary, out_dir, fitted))
    return files


def run_lifespan_report(config: StudyConfig, out_dir: str, n_jobs: int = 1) -> List[str]:
    """T^cvx with its binding point, the min-eigenvalue profile and a singular scan past T^cvx."""
    problem = config.problem
    result = find_convex_lifespan(problem.u0, problem.udot0, config.lifespan_resolution)
    lo, hi = problem.udot0.extrema()
    # the smooth lifespan of the HRMA equals the convex one
    summary = {"T_cvx": result.value, "T_smooth": result.value, "rel_accuracy": result.rel_accuracy,
               "udot0_min": lo, "udot0_max": hi}
    for i in range(config.dimension):
        summary[f"y_star{i + 1}" if config.dimension > 1 else "y_star"] = \
            float(result.binding_point[i]) if result.binding_point is not None else float("nan")
    files = [artifacts.write_table(pd.DataFrame([summary]), out_dir, "lifespan.csv")]

    horizon = result.value if math.isfinite(result.value) else config.T
    profile = []
    for s in (0.0, 0.5 * horizon, horizon, 1.5 * horizon):
        points, eig = hessian_eigenvalue_profile(problem.u0, problem.udot0, s)
        frame = pd.DataFrame(points, columns=["y"] if config.dimension == 1 else
                             [f"y{i + 1}" for i in range(config.dimension)])
        frame.insert(0, "s", s)
        frame["min_eigenvalue"] = eig
        profile.append(frame)
    files.append(artifacts.write_table(pd.concat(profile, ignore_index=True), out_dir, "lifespan_profile.csv"))

    if math.isfinite(result.value):
        ray = problem.ray
        s_values = result.value * np.linspace(1.1, 1.5, 5)
        xs = x_grid(config.dimension, config.x_window, config.x_points)
        scan = ray.singular_locus_scan(s_values, xs, config.singular_tol)
        files.append(artifacts.write_table(scan, out_dir, "singular_scan.csv"))
    else:
        logger.info("run_lifespan_report:: T_cvx is infinite, no singular scan")
    return files


def _singular_rows(ray: GeodesicRay, s: float, xs: np.ndarray, tol: Optional[float], radius: float):
    return ray.singular_mask(s, xs, tol, radius)[0]


def _atom_indicator(ray: GeodesicRay, tol: Optional[float], radius: float, n_jobs: int):
    """Batched indicator over atoms (s, x...): one singular_mask call per distinct s."""
    def indicator(points: np.ndarray) -> np.ndarray:
        flags = np.zeros(len(points), dtype=bool)
        s_unique, inverse = np.unique(points[:, 0], return_inverse=True)
        groups = [np.flatnonzero(inverse == k) for k in range(len(s_unique))]
        masks = Parallel(n_jobs=n_jobs)(delayed(_singular_rows)(ray, float(s), points[g, 1:], tol, radius)
                                        for s, g in zip(s_unique, groups))
        for g, mask in zip(groups, masks):
            flags[g] = mask
        return flags
    return indicator


def run_ma_audit(config: StudyConfig, out_dir: str, n_jobs: int = 1) -> List[str]:
    """Alexandrov MA measure of the PL-convexified psi on [0, T] x box, over a resolution ladder."""
    problem = config.problem
    ray = problem.ray
    n = config.dimension
    files, rows = [], []
    for T in config.ma_T:
        for res in config.ma_resolutions:
            if n >= 2 and res > 32:
                logger.warning("run_ma_audit:: dimension %d, resolution %d capped at 32", n, res)
                res = 32
            s_axis = np.linspace(0.0, T, res)
            x_axis = np.linspace(-config.ma_x_window, config.ma_x_window, res)
            xs = x_grid(n, config.ma_x_window, res)
            values = ray.psi_grid(s_axis, xs, n_jobs=n_jobs).reshape((res,) * (n + 1))
            convex = pl_convexify([s_axis] + [x_axis] * n, values)
            measure = alexandrov_measure(convex, samples=config.ma_samples, seed=config.seed)
            indicator = _atom_indicator(ray, config.singular_tol, float(x_axis[1] - x_axis[0]), n_jobs)
            measure = classify(measure, indicator)
            frame = measure.to_frame()
            name = f"ma_T{T:g}_R{res}"
            files.append(artifacts.write_table(frame, out_dir, name + ".csv"))
            if config.plots and n == 1:
                files.append(artifacts.plot_ma_atoms(frame, out_dir, name + ".png"))
            share = measure.singular_mass / measure.total_mass if measure.total_mass > 0 else 0.0
            logger.info("run_ma_audit:: T=%g res=%d total=%.6g singular=%.6g (%.1f%%)",
                        T, res, measure.total_mass, measure.singular_mass, 100 * share)
            rows.append({"T": T, "resolution": res, "total_mass": measure.total_mass,
                         "regular_mass": measure.regular_mass, "singular_mass": measure.singular_mass,
                         "singular_share": share, "half_width": measure.half_width, "atoms": len(frame)})

    summary = pd.DataFrame(rows)
    trends: Dict[float, Dict[str, bool]] = {}
    for T, group in summary.groupby("T", sort=False):
        total = group["total_mass"].to_numpy()
        singular = group["singular_mass"].to_numpy()
        trends[T] = {"total_decreasing": bool(np.all(np.diff(total) <= 1e-12)),
                     "singular_stable": bool(np.all(singular[1:] >= 0.9 * singular[:-1]))}
    summary["total_decreasing"] = [trends[t]["total_decreasing"] for t in summary["T"]]
    summary["singular_stable"] = [trends[t]["singular_stable"] for t in summary["T"]]
    files.append(artifacts.write_table(summary, out_dir, "ma_summary.csv"))
    return files
