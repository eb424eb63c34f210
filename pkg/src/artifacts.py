#artifacts.py
# CSV tables, the spectral-level cache, diagnostics and optional plots written under the output directory.
import json
import logging
import os
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from src.constants import Constants
from src.errors import ConsistencyError
from src.polytope import DelzantPolytope
from src.quantize import SpectralLevel

logger = logging.getLogger(__name__)


def ensure_output_dir(path: str) -> str:
    """Create the output directory; OSError propagates (exit code 2 at the CLI)."""
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def write_table(frame: pd.DataFrame, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=Constants.CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info("write_table:: %s (%d rows)", path, len(frame))
    return path


def grid_frame(s_values: Sequence[float], xs: np.ndarray, columns: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Long table of (s, x, value...) rows; ``columns`` hold (S, X) arrays."""
    s_values = np.asarray(s_values, dtype=float)
    xs = np.asarray(xs, dtype=float)
    xs = xs.reshape(len(xs), -1)
    n = xs.shape[1]
    frame = pd.DataFrame({"s": np.repeat(s_values, len(xs))})
    names = ["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]
    for i, name in enumerate(names):
        frame[name] = np.tile(xs[:, i], len(s_values))
    for name, table in columns.items():
        frame[name] = np.asarray(table, dtype=float).ravel()
    return frame


# spectral-level cache

def level_path(cache_dir: str, key: str, N: int, rel_tol: float) -> str:
    return os.path.join(cache_dir, f"level_N{N}_tol{rel_tol:.0e}_{key[:16]}.csv")


def save_spectral_level(level: SpectralLevel, path: str) -> str:
    frame = pd.DataFrame({
        "N": level.N,
        "alpha": [";".join(str(int(a)) for a in row) for row in level.alphas],
        "Q": level.q,
        "log_Q": level.log_q,
        "mu": level.mu,
        "q_err": level.q_err,
    })
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=Constants.CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def load_spectral_level(polytope: DelzantPolytope, N: int, path: str) -> SpectralLevel:
    """Reload a cached level; the stored alpha order must match lattice_points(N)."""
    frame = pd.read_csv(path, dtype={"alpha": str}, float_precision="round_trip")
    lattice = polytope.lattice_points(N)
    stored = [tuple(int(v) for v in a.split(";")) for a in frame["alpha"]]
    if stored != lattice.as_tuples() or np.any(frame["N"].to_numpy() != N):
        raise ConsistencyError(f"cached spectral level {path} does not match N={N} on this polytope")
    return SpectralLevel(N, lattice, frame["log_Q"].to_numpy(dtype=float), frame["mu"].to_numpy(dtype=float),
                         frame["q_err"].to_numpy(dtype=float))


def write_diagnostics(out_dir: str, payload: Dict[str, Any]) -> Optional[str]:
    path = os.path.join(out_dir, Constants.DIAGNOSTICS_FILE)
    try:
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=str)
        return path
    except OSError as e:
        logger.error("write_diagnostics:: could not write %s. Reason = %s", path, e)
        return None


# plots

def plot_convergence(summary: pd.DataFrame, out_dir: str, fitted_c: Optional[float]) -> str:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    levels = summary["N"].to_numpy(dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(levels, summary["sup_error"], "o-", label="sup |E_N|")
    ax.loglog(levels, summary["eigenvalue_gap"], "s--", label="max |mu + udot0|")
    if fitted_c is not None and np.isfinite(fitted_c):
        ax.loglog(levels, fitted_c * np.log(levels) / levels, "k:", label="C log N / N")
    ax.set_xlabel("N")
    ax.legend()
    path = os.path.join(out_dir, "convergence.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ma_atoms(frame: pd.DataFrame, out_dir: str, name: str) -> str:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    regular = frame[frame["singular_flag"] == 0]
    singular = frame[frame["singular_flag"] == 1]
    ax.scatter(regular["x"], regular["s"], s=1, c="tab:blue", label="regular")
    ax.scatter(singular["x"], singular["s"], s=2, c="tab:red", label="singular")
    ax.set_xlabel("x")
    ax.set_ylabel("s")
    ax.legend(markerscale=4)
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
