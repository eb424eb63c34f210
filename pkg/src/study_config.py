#study_config.py
# Study files: JSON validated against init/schema.json, then turned into ProblemData.
import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from jsonschema import Draft7Validator

from src.errors import ConfigError, HrmaLabError
from src.fields import Polynomial, guillemin_field, smooth_field
from src.geodesic import ProblemData
from src.polytope import DelzantPolytope, polytope_from_config

logger = logging.getLogger(__name__)

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'init', 'schema.json')
PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'init')


@dataclass(frozen=True, eq=False)
class StudyConfig:
    raw: Dict[str, Any]
    problem: ProblemData
    levels: Tuple[int, ...]
    T: float
    s_step: float
    x_window: float
    x_points: int
    quadrature_tol: float
    singular_tol: Optional[float]
    legendre_resolution: Optional[int]
    lifespan_resolution: int
    ma_T: Tuple[float, ...]
    ma_resolutions: Tuple[int, ...]
    ma_x_window: float
    ma_samples: int
    output: str
    seed: int = 0
    plots: bool = False
    source: Optional[str] = field(default=None)

    @property
    def dimension(self) -> int:
        return self.problem.polytope.dimension

    def problem_key(self) -> str:
        """sha256 of the canonical problem block and the Legendre resolution."""
        block = {"problem": self.raw["problem"], "legendre_resolution": self.legendre_resolution}
        return hashlib.sha256(json.dumps(block, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_schema(path: str = SCHEMA_PATH) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)


def _fill_defaults(schema: Dict[str, Any], instance: Dict[str, Any]) -> Dict[str, Any]:
    for key, sub in schema.get("properties", {}).items():
        if key not in instance and "default" in sub:
            instance[key] = copy.deepcopy(sub["default"])
        if isinstance(instance.get(key), dict) and sub.get("type") == "object":
            _fill_defaults(sub, instance[key])
    return instance


def _error_keys(error) -> List[str]:
    path = ".".join(str(p) for p in error.absolute_path)
    prefix = path + "." if path else ""
    if error.validator == "required":
        return [prefix + k for k in error.validator_value if k not in error.instance]
    if error.validator == "additionalProperties":
        known = set(error.schema.get("properties", {}))
        return [prefix + k for k in error.instance if k not in known]
    return [path or "<root>"]


def validate_config(config: Any, schema: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Schema check listing every offending key, then defaults, then cross-field checks."""
    schema = schema or load_schema()
    errors = sorted(Draft7Validator(schema).iter_errors(config), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        keys = [k for e in errors for k in _error_keys(e)]
        for e in errors:
            logger.error("validate_config:: %s", e.message)
        raise ConfigError("invalid study file: " + "; ".join(e.message for e in errors), keys=keys)
    config = _fill_defaults(schema, copy.deepcopy(config))

    problems, keys = [], []
    levels = config["levels"]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        problems.append(f"levels must be strictly increasing, got {levels}")
        keys.append("levels")
    if config["T"] <= 0:
        problems.append(f"T must be positive, got {config['T']}")
        keys.append("T")
    if any(t <= 0 for t in config["ma"]["T"]):
        problems.append("ma.T entries must be positive")
        keys.append("ma.T")
    singular = config["tolerances"]["singular"]
    if singular is not None and singular <= 0:
        problems.append("tolerances.singular must be positive")
        keys.append("tolerances.singular")
    if problems:
        for p in problems:
            logger.error("validate_config:: %s", p)
        raise ConfigError("invalid study file: " + "; ".join(problems), keys=keys)
    return config


def velocity_polynomial(polytope: DelzantPolytope, entry) -> Polynomial:
    """Velocity presets: bump = sum y_i(1 - y_i), convex-bump = -bump, zero, linear:a_1,...,a_n[,b]."""
    n = polytope.dimension
    if not isinstance(entry, str):
        return Polynomial.from_table(n, entry)
    if entry == "zero":
        return Polynomial.zero(n)
    if entry in ("bump", "convex-bump"):
        terms = []
        for i in range(n):
            e = tuple(int(k == i) for k in range(n))
            terms += [(e, 1.0), (tuple(2 * v for v in e), -1.0)]
        bump = Polynomial(n, tuple(terms))
        return bump if entry == "bump" else -bump
    if entry.startswith("linear:"):
        try:
            numbers = [float(v) for v in entry[len("linear:"):].split(",")]
        except ValueError:
            raise ConfigError(f"malformed velocity preset {entry!r}", keys=["problem.velocity"])
        if len(numbers) not in (n, n + 1):
            raise ConfigError(f"velocity preset {entry!r} needs {n} or {n + 1} numbers",
                              keys=["problem.velocity"])
        intercept = numbers[n] if len(numbers) == n + 1 else 0.0
        return Polynomial.affine(numbers[:n], intercept)
    raise ConfigError(f"unknown velocity preset {entry!r}", keys=["problem.velocity"])


def build_problem(block: Dict[str, Any], resolution: Optional[int] = None) -> ProblemData:
    try:
        polytope = polytope_from_config(block["polytope"])
        u0 = guillemin_field(polytope, Polynomial.from_table(polytope.dimension, block.get("u0_smooth", [])))
        udot0 = smooth_field(polytope, velocity_polynomial(polytope, block["velocity"]))
        return ProblemData(polytope, u0, udot0, resolution)
    except ConfigError:
        raise
    except (HrmaLabError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid problem block: {e}", keys=["problem"]) from e


def config_from_dict(config: Dict[str, Any], source: Optional[str] = None) -> StudyConfig:
    config = validate_config(config)
    tol = config["tolerances"]
    ma = config["ma"]
    problem = build_problem(config["problem"], tol["legendre_resolution"])
    return StudyConfig(
        raw=config,
        problem=problem,
        levels=tuple(config["levels"]),
        T=float(config["T"]),
        s_step=float(config["s_step"]),
        x_window=float(config["x_window"]),
        x_points=int(config["x_points"]),
        quadrature_tol=float(tol["quadrature"]),
        singular_tol=tol["singular"],
        legendre_resolution=tol["legendre_resolution"],
        lifespan_resolution=int(config["lifespan"]["resolution"]),
        ma_T=tuple(float(t) for t in ma["T"]),
        ma_resolutions=tuple(ma["resolutions"]),
        ma_x_window=float(ma["x_window"]),
        ma_samples=int(ma["samples"]),
        output=config["output"],
        seed=int(config["seed"]),
        plots=bool(config["plots"]),
        source=source,
    )


def resolve_config_path(name: str) -> str:
    """A path, or the name of a file shipped in init/ (``flagship`` -> init/flagship.json)."""
    if os.path.exists(name):
        return name
    for candidate in (os.path.join(PRESET_DIR, name), os.path.join(PRESET_DIR, name + ".json")):
        if os.path.exists(candidate):
            return candidate
    return name


def parse_config(path: str) -> StudyConfig:
    path = resolve_config_path(path)
    logger.info("parse_config:: loading %s", path)
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist at {path}", keys=[])
    try:
        with open(path, 'r') as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"error loading json file from {path}. Reason = {e}", keys=[]) from e
    return config_from_dict(config, source=path)
