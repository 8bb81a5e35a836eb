"""
Experiment configuration
- ExperimentConfig: one flat dataclass shared by every harness command.
- Values come from built-in defaults, then a YAML file, then --set overrides.
"""
import logging
import typing
from dataclasses import dataclass, field, fields, replace
from typing import List, Optional

import yaml

from longtail_model.classifiers import LEARNER_KINDS, LearnerSpec
from longtail_model.estimators import EmConfig
from longtail_model.genmodel import DIRECTION_MODES

logger = logging.getLogger(__name__)

CONFIG_PATH = 'config/experiment_config.yaml'
BOUNDARY_CLASSIFIERS = ('oracle_lda', 'oracle_mda', 'fitted_lda', 'fitted_mda', 'generic_mda')
MAX_REMOVAL_PCT = 90.0


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    # model and sample sizes
    d: int = 50
    mu_norm: float = 2.0
    sigma: float = 1.0
    p: float = 0.9
    n_train: int = 7000
    n_test: int = 3000
    replicates: int = 10
    master_seed: int = 0
    direction: str = 'fixed'
    t: float = 10.0
    nu: Optional[float] = None
    # generic MDA and EM
    k_plus: int = 1
    k_minus: int = 2
    em_max_iter: int = 500
    em_tol: float = 1e-8
    em_restarts: int = 5
    em_variance_floor: Optional[float] = None
    em_init: str = 'kmeans_pp'
    # sweep grid; grid_values wins over the arithmetic grid, both absent means the experiment default
    grid_start: Optional[float] = None
    grid_stop: Optional[float] = None
    grid_step: Optional[float] = None
    grid_values: Optional[List[float]] = None
    # tail shortening
    removal_fractions: List[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 20.0])
    memorization_learner: str = 'interpolating_mda'
    memorization_restarts: int = 3
    interp_variance: float = 0.01
    # decision boundary lattice
    lattice: int = 100
    boundary_classifier: str = 'generic_mda'
    # execution and output
    workers: int = 1
    out_dir: str = 'data/results'

    def __post_init__(self):
        checks = [
            (self.d >= 1, f"d must be at least 1, got {self.d}"),
            (self.mu_norm > 0, f"mu_norm must be positive, got {self.mu_norm}"),
            (self.sigma > 0, f"sigma must be positive, got {self.sigma}"),
            (0.5 < self.p < 1.0, f"p must lie in (1/2, 1), got {self.p}"),
            (self.n_train >= 1, f"n_train must be at least 1, got {self.n_train}"),
            (self.n_test >= 1, f"n_test must be at least 1, got {self.n_test}"),
            (self.replicates >= 2, f"replicates must be at least 2 for confidence intervals, got {self.replicates}"),
            (self.direction in DIRECTION_MODES, f"direction must be one of {DIRECTION_MODES}, got '{self.direction}'"),
            (self.t > 2, f"t must exceed 2, got {self.t}"),
            (self.nu is None or self.nu > 0, f"nu must be positive, got {self.nu}"),
            (self.k_plus >= 1 and self.k_minus >= 1, "k_plus and k_minus must be at least 1"),
            (self.memorization_learner in LEARNER_KINDS,
             f"memorization_learner must be one of {LEARNER_KINDS}, got '{self.memorization_learner}'"),
            (self.memorization_restarts >= 1, "memorization_restarts must be at least 1"),
            (self.interp_variance > 0, f"interp_variance must be positive, got {self.interp_variance}"),
            (self.lattice >= 2, f"lattice must be at least 2, got {self.lattice}"),
            (self.boundary_classifier in BOUNDARY_CLASSIFIERS,
             f"boundary_classifier must be one of {BOUNDARY_CLASSIFIERS}, got '{self.boundary_classifier}'"),
            (self.workers >= 1, f"workers must be at least 1, got {self.workers}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            self.em_config()
        except ValueError as e:
            raise ConfigError(f"Invalid EM settings: {e}") from e
        self._check_grid()
        for pct in self.removal_fractions:
            if not 0 <= pct <= MAX_REMOVAL_PCT:
                raise ConfigError(f"removal_fractions must lie in [0, {MAX_REMOVAL_PCT:g}], got {pct}")

    def _check_grid(self):
        arithmetic = (self.grid_start, self.grid_stop, self.grid_step)
        if any(v is not None for v in arithmetic):
            if any(v is None for v in arithmetic):
                raise ConfigError("grid_start, grid_stop and grid_step must be given together")
            if not self.grid_start < self.grid_stop:
                raise ConfigError(f"grid_start must be below grid_stop, got {self.grid_start} >= {self.grid_stop}")
            if not self.grid_step > 0:
                raise ConfigError(f"grid_step must be positive, got {self.grid_step}")
        if self.grid_values is not None and len(self.grid_values) == 0:
            raise ConfigError("grid_values must not be empty")

    def em_config(self):
        return EmConfig(max_iter=self.em_max_iter, tol=self.em_tol, restarts=self.em_restarts,
                        variance_floor=self.em_variance_floor, init=self.em_init)

    def learner(self, kind, p=None):
        """LearnerSpec of the given kind with this config's hyperparameters."""
        return LearnerSpec(kind, sigma=self.sigma, p=self.p if p is None else p,
                           k_plus=self.k_plus, k_minus=self.k_minus, em_config=self.em_config(),
                           interp_variance=self.interp_variance)

    def with_overrides(self, **overrides):
        return replace(self, **coerce_values(overrides))


def _field_types():
    return {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name, value, ftype):
    if typing.get_origin(ftype) is typing.Union:
        if value is None:
            return None
        ftype = next(a for a in typing.get_args(ftype) if a is not type(None))
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected {ftype}, got boolean {value}")
    try:
        if ftype is int:
            if float(value) != int(float(value)):
                raise ConfigError(f"{name}: expected an integer, got {value}")
            return int(float(value))
        if ftype is float:
            return float(value)
        if ftype is str:
            if not isinstance(value, str):
                raise ConfigError(f"{name}: expected a string, got {value!r}")
            return value
        if typing.get_origin(ftype) is list:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name}: expected a list, got {value!r}")
            return [float(v) for v in value]
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{name}: cannot interpret {value!r}: {e}") from e
    return value


def coerce_values(values):
    """Check key names and convert raw YAML values to the field types."""
    types = _field_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    return {key: _coerce(key, value, types[key]) for key, value in values.items()}


def parse_set_overrides(assignments):
    """
    Parse --set arguments of the form key=value.
    Values are read as YAML scalars or flow lists, e.g. p=0.95 or grid_values=[10, 100].
    """
    overrides = {}
    for item in assignments or []:
        key, sep, raw = item.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"Expected key=value, got '{item}'")
        try:
            overrides[key] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse value for '{key}': {e}") from e
    return overrides


def read_config_file(config_path):
    """Load the flat YAML mapping of a config file."""
    try:
        with open(config_path, 'r') as f:
            raw = yaml.safe_load(f)
    except Exception as e:
        raise RuntimeError(f"Failed to load experiment config: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise RuntimeError(f"Failed to load experiment config: {config_path} is not a key/value mapping")
    return raw


def load_experiment_config(config_path=None, overrides=None):
    """
    Build an ExperimentConfig.
    Args:
        config_path: Optional YAML file; its keys must be ExperimentConfig fields
        overrides: Optional dict applied after the file
    Returns:
        ExperimentConfig
    """
    values = read_config_file(config_path) if config_path else {}
    values.update(overrides or {})
    config = ExperimentConfig(**coerce_values(values))
    logger.debug("Experiment config: %s", config)
    return config
