"""
Model and run configuration
---------------------------
Loads ModelSpec documents (JSON or TOML) and assembles the RunConfig used by the
CLI from built-in defaults, environment variables (a ``.env`` file is honoured),
an optional run-config document and command-line flags, in that order.
"""

import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from jmirt_architecture import (
    ConfigurationError,
    FitVariant,
    FixedEffectsDesign,
    ModelSpec,
    RandomEffectsDesign,
)

logger = logging.getLogger("jmirt.config")

ENV_PREFIX = "JMIRT_"


def _load_document(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"configuration file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e


def load_model_spec(path) -> ModelSpec:
    """Load a ModelSpec from a JSON or TOML document (chosen by suffix)."""
    spec = ModelSpec.from_dict(_load_document(path))
    logger.info(f"Loaded model specification from {path}.")
    return spec


def save_model_spec(spec: ModelSpec, path) -> None:
    """Write a ModelSpec as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(spec.to_dict(), indent=2))


def default_model_spec(variant: FitVariant = FitVariant.EXT, n_items: int = 3, n_categories: int = 4) -> ModelSpec:
    """
    The specification used for the simulated settings: eta = beta_1 t + beta_2 w
    (+ lambda' v(t)) + b_0, one binary baseline covariate, cubic splines with
    12 basis functions. simpleJMIRT has a single cause and no v(t).
    """
    return ModelSpec(
        n_items=n_items,
        categories_per_item=[n_categories] * n_items,
        n_causes=2 if variant == FitVariant.EXT else 1,
        n_baseline_covariates=1,
        fixed_effects=FixedEffectsDesign(intercept=False, time_slope=True, baseline_covariates=[1]),
        random_effects=RandomEffectsDesign(intercept=True, time_slope=False),
        hazard_covariates=variant == FitVariant.EXT,
    )


def with_schedule(spec: ModelSpec, **overrides) -> ModelSpec:
    """Return a copy of spec whose schedule fields are replaced by the non-None overrides."""
    values = vars(spec.schedule).copy()
    values.update({k: v for k, v in overrides.items() if v is not None})
    data = spec.to_dict()
    data["schedule"] = values
    return ModelSpec.from_dict(data)


@dataclass
class RunConfig:
    """Everything a CLI subcommand needs besides the model specification."""

    subcommand: str = ""
    setting: Optional[str] = None
    model_spec_path: Optional[str] = None
    data_path: Optional[str] = None
    data_format: str = "csv"
    output_dir: str = "output"
    seed: Optional[int] = None
    n_subjects: int = 500
    chains: int = 1
    workers: int = 1
    replications: int = 2
    variant: FitVariant = FitVariant.EXT
    compare_simple: bool = False
    random_items: bool = False
    emit_profile: bool = False
    profile_item: int = 1
    chain_files: list = field(default_factory=list)
    incidence: bool = False
    trace: bool = False
    schedule_overrides: Dict[str, Optional[int]] = field(default_factory=dict)
    log_level: str = "INFO"

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigurationError(f"'{self.subcommand}' needs a seed (--seed or {ENV_PREFIX}SEED)")
        return self.seed


_ENV_FIELDS = {
    "SEED": ("seed", int),
    "WORKERS": ("workers", int),
    "CHAINS": ("chains", int),
    "OUTPUT_DIR": ("output_dir", str),
    "LOG_LEVEL": ("log_level", str),
}


def _apply(config: RunConfig, values: Dict[str, Any], source: str) -> None:
    known = {f.name for f in fields(RunConfig)}
    for key, value in values.items():
        if key not in known:
            raise ConfigurationError(f"unknown run-config key '{key}' in {source}")
        if key == "variant" and not isinstance(value, FitVariant):
            try:
                value = FitVariant(value)
            except ValueError:
                raise ConfigurationError(f"unknown model variant '{value}'") from None
        if key == "schedule_overrides":
            merged = dict(config.schedule_overrides)
            merged.update({k: v for k, v in value.items() if v is not None})
            value = merged
        setattr(config, key, value)


def load_run_config(cli_values: Dict[str, Any], run_config_path: Optional[str] = None) -> RunConfig:
    """
    Build a RunConfig: defaults < environment (.env) < run-config file < CLI flags.

    cli_values holds only the flags the user actually passed (None values are skipped).
    """
    load_dotenv()
    config = RunConfig()
    env_values = {}
    for suffix, (name, kind) in _ENV_FIELDS.items():
        raw = os.getenv(ENV_PREFIX + suffix)
        if raw:
            try:
                env_values[name] = kind(raw)
            except ValueError:
                raise ConfigurationError(f"{ENV_PREFIX}{suffix}={raw!r} is not a valid {kind.__name__}") from None
    _apply(config, env_values, "environment")
    if run_config_path:
        _apply(config, _load_document(run_config_path), run_config_path)
    _apply(config, {k: v for k, v in cli_values.items() if v is not None}, "command line")
    if config.chains < 1 or config.workers < 1:
        raise ConfigurationError("chains and workers must be at least 1")
    return config


def resolve_schedule(spec: ModelSpec, config: RunConfig) -> ModelSpec:
    """Apply the run's schedule overrides to the model specification."""
    overrides = {k: v for k, v in config.schedule_overrides.items() if v is not None}
    if not overrides:
        return spec
    logger.info(f"Schedule overrides: {overrides}")
    return with_schedule(spec, **overrides)
