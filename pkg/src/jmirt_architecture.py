"""
extJMIRT Architecture
---------------------
This module defines the core data structures used throughout the extJMIRT system,
including observed subjects, the model specification, points in parameter space,
chain output and the summaries and reports built from chains.
"""

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

# Category code used in memory for an item that was not answered at an attended visit.
MISSING_CATEGORY = 0


# --- Exceptions ---
class JmirtError(Exception):
    """Base class for all errors raised by extJMIRT."""


class ConfigurationError(JmirtError, ValueError):
    """Invalid model specification, schedule or call arguments."""


class DomainRangeError(JmirtError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class DatasetParseError(JmirtError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DatasetValidationError(JmirtError, ValueError):
    """A dataset parsed correctly but breaks a data invariant."""

    def __init__(self, report: "ValidationReport"):
        super().__init__(f"dataset failed validation: {report.describe()}")
        self.report = report


class NumericError(JmirtError, ArithmeticError):
    """A numerical routine failed (Cholesky failure, NaN, non-finite hazard)."""


class InitializationError(JmirtError, RuntimeError):
    """The sampler cannot start from the supplied state."""


# --- Enums ---
class FitVariant(Enum):
    """Model variants the CLI can fit."""

    EXT = "extJMIRT"
    SIMPLE = "simpleJMIRT"


class ViolationType(Enum):
    """Enumeration of the data invariants a dataset can break."""

    VISIT_ORDER = "visit_order"
    VISIT_AFTER_DROPOUT = "visit_after_dropout"
    MULTIPLE_CAUSES = "multiple_causes"
    CATEGORY_RANGE = "category_range"
    DIMENSION = "dimension"
    NEGATIVE_TIME = "negative_time"
    NON_FINITE = "non_finite"
    DUPLICATE_ID = "duplicate_id"


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --- Observed data ---
@dataclass(frozen=True, eq=False)
class SubjectData:
    """
    One subject: ordinal item responses at visit times, baseline covariates,
    the observed (dropout or censoring) time and the cause indicators.

    responses is an N_i x K integer matrix of 1-based categories;
    MISSING_CATEGORY marks an item left unanswered at an attended visit.
    """

    id: int
    visit_times: np.ndarray
    responses: np.ndarray
    baseline_covariates: np.ndarray
    observed_time: float
    cause_indicators: np.ndarray
    longitudinal_covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        times = _readonly(self.visit_times).reshape(-1)
        responses = np.array(self.responses, dtype=int, copy=True)
        if responses.ndim == 1:
            responses = responses.reshape(len(times), -1) if len(times) else responses.reshape(0, 0)
        responses.setflags(write=False)
        if self.longitudinal_covariates is None:
            visit_cov = np.zeros((len(times), 0))
        else:
            visit_cov = np.array(self.longitudinal_covariates, dtype=float, copy=True)
            if visit_cov.ndim == 1:
                visit_cov = visit_cov.reshape(len(times), -1)
        visit_cov.setflags(write=False)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "visit_times", times)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "baseline_covariates", _readonly(self.baseline_covariates).reshape(-1))
        object.__setattr__(self, "observed_time", float(self.observed_time))
        object.__setattr__(self, "cause_indicators", _readonly(self.cause_indicators, dtype=int).reshape(-1))
        object.__setattr__(self, "longitudinal_covariates", visit_cov)

    @property
    def n_visits(self) -> int:
        return len(self.visit_times)

    @property
    def event_cause(self) -> Optional[int]:
        """0-based index of the observed cause, or None when censored."""
        hits = np.flatnonzero(self.cause_indicators == 1)
        return int(hits[0]) if len(hits) else None

    def to_dict(self) -> Dict:
        """Convert SubjectData to a dictionary (missing responses become None)."""
        return {
            "id": self.id,
            "visit_times": self.visit_times.tolist(),
            "responses": [
                [None if c == MISSING_CATEGORY else int(c) for c in row]
                for row in self.responses
            ],
            "baseline_covariates": self.baseline_covariates.tolist(),
            "observed_time": self.observed_time,
            "cause_indicators": self.cause_indicators.tolist(),
            "longitudinal_covariates": self.longitudinal_covariates.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict):
        """Create a SubjectData from a dictionary."""
        responses = [
            [MISSING_CATEGORY if c is None else c for c in row]
            for row in data.get("responses", [])
        ]
        visit_cov = data.get("longitudinal_covariates")
        return cls(
            id=data["id"],
            visit_times=data.get("visit_times", []),
            responses=responses,
            baseline_covariates=data.get("baseline_covariates", []),
            observed_time=data["observed_time"],
            cause_indicators=data.get("cause_indicators", []),
            longitudinal_covariates=visit_cov if visit_cov else None,
        )


@dataclass
class DataViolation:
    """One broken data invariant, located by subject (and visit or item when relevant)."""

    subject_id: Optional[int]
    violation_type: ViolationType
    message: str
    visit_index: Optional[int] = None
    item_index: Optional[int] = None

    def to_dict(self) -> Dict:
        return {
            "subject_id": self.subject_id,
            "violation_type": self.violation_type.value,
            "message": self.message,
            "visit_index": self.visit_index,
            "item_index": self.item_index,
        }


@dataclass
class ValidationReport:
    """Outcome of validating a dataset against a model specification."""

    violations: List[DataViolation] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def describe(self, limit: int = 5) -> str:
        if self.is_valid:
            return "pass"
        shown = "; ".join(
            f"subject {v.subject_id}: {v.message}" for v in self.violations[:limit]
        )
        extra = len(self.violations) - limit
        return shown + (f" (+{extra} more)" if extra > 0 else "")

    def to_dict(self) -> Dict:
        return {
            "is_valid": self.is_valid,
            "violations": [v.to_dict() for v in self.violations],
        }


# --- Model specification ---
@dataclass
class FixedEffectsDesign:
    """Columns of the fixed-effect row x_i(t)."""

    intercept: bool = False
    time_slope: bool = True
    baseline_covariates: List[int] = field(default_factory=lambda: [1])  # 1-based into w_i
    visit_covariates: List[int] = field(default_factory=list)  # 1-based into per-visit covariates

    @property
    def n_columns(self) -> int:
        return (
            int(self.intercept)
            + int(self.time_slope)
            + len(self.baseline_covariates)
            + len(self.visit_covariates)
        )

    def column_names(self) -> List[str]:
        names = []
        if self.intercept:
            names.append("intercept")
        if self.time_slope:
            names.append("time")
        names += [f"w{c}" for c in self.baseline_covariates]
        names += [f"u{c}" for c in self.visit_covariates]
        return names


@dataclass
class RandomEffectsDesign:
    """Columns of the random-effect row z_i(t)."""

    intercept: bool = True
    time_slope: bool = False

    @property
    def n_columns(self) -> int:
        return int(self.intercept) + int(self.time_slope)


@dataclass
class SplineConfig:
    """B-spline configuration of every cause's log baseline hazard."""

    degree: int = 3
    n_basis: int = 12
    penalty_order: int = 2
    domain_max: Optional[float] = None  # None: max observed time of the fitted data


@dataclass
class PriorConfig:
    """Prior hyperparameters."""

    beta_variance: float = 100.0
    lambda_variance: float = 100.0
    gamma_variance: float = 100.0
    alpha_variance: float = 100.0
    discrimination_upper: float = 5.0
    threshold_bound: float = 10.0
    tau_shape: float = 1.0
    tau_rate: float = 0.005
    D0: Optional[List[List[float]]] = None  # None: identity

    def __post_init__(self):
        positive = [
            self.beta_variance,
            self.lambda_variance,
            self.gamma_variance,
            self.alpha_variance,
            self.discrimination_upper,
            self.threshold_bound,
            self.tau_shape,
            self.tau_rate,
        ]
        if any(not np.isfinite(v) or v <= 0 for v in positive):
            raise ConfigurationError("prior variances, bounds and Gamma hyperparameters must be positive")

    def scale_matrix(self, q: int) -> np.ndarray:
        if self.D0 is None:
            return np.eye(q)
        D0 = np.array(self.D0, dtype=float)
        if D0.shape != (q, q):
            raise ConfigurationError(f"D0 must be {q}x{q}, got {D0.shape}")
        return D0


@dataclass
class SamplerSchedule:
    """Iteration schedule: A adaptive, B burn-in, I sampling, thinning T."""

    adaptive: int = 1500
    burn_in: int = 1500
    iterations: int = 10000
    thin: int = 10
    adapt_window: int = 50
    progress_every: int = 1000

    def __post_init__(self):
        if min(self.adaptive, self.burn_in) < 0 or self.iterations <= 0 or self.thin <= 0:
            raise ConfigurationError("schedule lengths must be non-negative and I, T positive")
        if self.iterations % self.thin:
            raise ConfigurationError(
                f"sampling iterations ({self.iterations}) must be divisible by thinning ({self.thin})"
            )
        if self.adapt_window <= 0:
            raise ConfigurationError("adapt_window must be positive")

    @property
    def total(self) -> int:
        return self.adaptive + self.burn_in + self.iterations

    @property
    def n_retained(self) -> int:
        return self.iterations // self.thin


def _dataclass_from_dict(cls, data: Optional[Dict]):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class ModelSpec:
    """Counts, design, spline, prior, identification and schedule of a joint model."""

    n_items: int
    categories_per_item: List[int]
    n_causes: int = 2
    n_baseline_covariates: int = 1
    fixed_effects: FixedEffectsDesign = field(default_factory=FixedEffectsDesign)
    random_effects: RandomEffectsDesign = field(default_factory=RandomEffectsDesign)
    spline: SplineConfig = field(default_factory=SplineConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    schedule: SamplerSchedule = field(default_factory=SamplerSchedule)
    fixed_item: int = 1  # 1-based item whose discrimination is fixed
    fixed_threshold: int = 1  # 1-based threshold of that item fixed
    fixed_discrimination_value: float = 1.0
    fixed_threshold_value: float = 0.0
    hazard_covariates: bool = True  # False freezes lambda at 0 and drops v(t)
    store_random_effects: bool = False

    def __post_init__(self):
        self.categories_per_item = [int(L) for L in self.categories_per_item]
        if self.n_items < 1 or len(self.categories_per_item) != self.n_items:
            raise ConfigurationError("categories_per_item must list L_k for each of the K items")
        if any(L < 2 for L in self.categories_per_item):
            raise ConfigurationError("every item needs at least 2 categories")
        if self.n_causes < 1:
            raise ConfigurationError("at least one cause of dropout is required")
        if self.n_baseline_covariates < 0:
            raise ConfigurationError("n_baseline_covariates must be non-negative")
        if self.spline.n_basis < self.spline.degree + 1:
            raise ConfigurationError(
                f"n_basis ({self.spline.n_basis}) must be at least degree + 1 ({self.spline.degree + 1})"
            )
        if self.spline.n_basis <= self.spline.penalty_order:
            raise ConfigurationError("n_basis must exceed the penalty order")
        if not 1 <= self.fixed_item <= self.n_items:
            raise ConfigurationError(f"fixed_item {self.fixed_item} outside 1..{self.n_items}")
        if not 1 <= self.fixed_threshold <= self.categories_per_item[self.fixed_item - 1] - 1:
            raise ConfigurationError("fixed_threshold outside the thresholds of the fixed item")
        if not 0 < self.fixed_discrimination_value <= self.priors.discrimination_upper:
            raise ConfigurationError("fixed discrimination must lie in (0, upper bound]")
        bad_w = [c for c in self.fixed_effects.baseline_covariates if not 1 <= c <= self.n_baseline_covariates]
        if bad_w:
            raise ConfigurationError(f"fixed-effect covariate columns {bad_w} outside w_1..w_G")
        if self.n_random < 1:
            raise ConfigurationError("at least one random effect is required")

    @property
    def n_fixed(self) -> int:
        """p, the length of beta."""
        return self.fixed_effects.n_columns

    @property
    def n_random(self) -> int:
        """q, the length of b_i."""
        return self.random_effects.n_columns

    @property
    def fixed_item_index(self) -> int:
        return self.fixed_item - 1

    @property
    def fixed_threshold_index(self) -> int:
        return self.fixed_threshold - 1

    def to_dict(self) -> Dict:
        return {
            "n_items": self.n_items,
            "categories_per_item": list(self.categories_per_item),
            "n_causes": self.n_causes,
            "n_baseline_covariates": self.n_baseline_covariates,
            "fixed_effects": vars(self.fixed_effects).copy(),
            "random_effects": vars(self.random_effects).copy(),
            "spline": vars(self.spline).copy(),
            "priors": vars(self.priors).copy(),
            "schedule": vars(self.schedule).copy(),
            "fixed_item": self.fixed_item,
            "fixed_threshold": self.fixed_threshold,
            "fixed_discrimination_value": self.fixed_discrimination_value,
            "fixed_threshold_value": self.fixed_threshold_value,
            "hazard_covariates": self.hazard_covariates,
            "store_random_effects": self.store_random_effects,
        }

    @classmethod
    def from_dict(cls, data: Dict):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelSpec keys: {sorted(unknown)}")
        kwargs = dict(data)
        kwargs["fixed_effects"] = _dataclass_from_dict(FixedEffectsDesign, data.get("fixed_effects"))
        kwargs["random_effects"] = _dataclass_from_dict(RandomEffectsDesign, data.get("random_effects"))
        kwargs["spline"] = _dataclass_from_dict(SplineConfig, data.get("spline"))
        kwargs["priors"] = _dataclass_from_dict(PriorConfig, data.get("priors"))
        kwargs["schedule"] = _dataclass_from_dict(SamplerSchedule, data.get("schedule"))
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigurationError(f"incomplete model specification: {e}") from e


# --- Parameters ---
@dataclass(frozen=True, eq=False)
class ItemParams:
    """Graded response item: discrimination a_k and L_k - 1 thresholds, strictly decreasing."""

    a: float
    thresholds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=float).reshape(-1))

    @property
    def n_categories(self) -> int:
        return len(self.thresholds) + 1

    def is_valid(self, upper: float = np.inf) -> bool:
        ordered = bool(np.all(np.diff(self.thresholds) < 0))
        return 0 < self.a <= upper and ordered and bool(np.all(np.isfinite(self.thresholds)))


@dataclass(frozen=True, eq=False)
class CauseParams:
    """Per-cause survival parameters: gamma_p, alpha_p, spline coefficients and tau_p."""

    gamma: np.ndarray
    alpha: np.ndarray
    spline_coeffs: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).reshape(-1))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).reshape(-1))
        object.__setattr__(self, "spline_coeffs", np.asarray(self.spline_coeffs, dtype=float).reshape(-1))
        object.__setattr__(self, "tau", float(self.tau))


@dataclass(frozen=True, eq=False)
class ParameterState:
    """One full point in parameter space, random effects included."""

    beta: np.ndarray
    lam: np.ndarray
    items: Tuple[ItemParams, ...]
    random_effects: np.ndarray
    D: np.ndarray
    causes: Tuple[CauseParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float).reshape(-1))
        object.__setattr__(self, "items", tuple(self.items))
        b = np.asarray(self.random_effects, dtype=float)
        object.__setattr__(self, "random_effects", b.reshape(b.shape[0], -1) if b.ndim != 2 else b)
        object.__setattr__(self, "D", np.atleast_2d(np.asarray(self.D, dtype=float)))
        object.__setattr__(self, "causes", tuple(self.causes))

    @property
    def discriminations(self) -> np.ndarray:
        return np.array([item.a for item in self.items])


# --- Chain output and summaries ---
@dataclass
class ChainOutput:
    """Thinned post-burn-in draws of one chain with acceptance statistics."""

    parameter_names: List[str]
    draws: np.ndarray  # (retained draws, monitored parameters)
    acceptance_rates: Dict[str, float]
    proposal_covariances: Dict[str, List[List[float]]]
    seed: int
    schedule: SamplerSchedule
    random_effects_mean: Optional[np.ndarray] = None
    random_effects_draws: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[1] != len(self.parameter_names):
            raise ConfigurationError("draw columns must match parameter names")
        if any(not 0.0 <= r <= 1.0 for r in self.acceptance_rates.values()):
            raise ConfigurationError("acceptance rates must lie in [0, 1]")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.parameter_names.index(name)]

    def metadata_dict(self) -> Dict:
        """Run metadata written next to the draws (seed, schedule, acceptance)."""
        return {
            "seed": self.seed,
            "schedule": vars(self.schedule).copy(),
            "acceptance_rates": dict(self.acceptance_rates),
            "proposal_covariances": self.proposal_covariances,
            "parameter_names": list(self.parameter_names),
            "metadata": self.metadata,
        }


@dataclass
class PosteriorSummary:
    """Posterior mean, sd and equal-tailed 95% interval per parameter."""

    parameter_names: List[str]
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def index(self, name: str) -> int:
        return self.parameter_names.index(name)

    def row(self, name: str) -> Dict[str, float]:
        i = self.index(name)
        return {
            "mean": float(self.mean[i]),
            "sd": float(self.sd[i]),
            "lower": float(self.lower[i]),
            "upper": float(self.upper[i]),
        }

    def to_dict(self) -> Dict:
        return {name: self.row(name) for name in self.parameter_names}

    @classmethod
    def from_dict(cls, data: Dict):
        names = list(data)
        return cls(
            parameter_names=names,
            mean=np.array([data[n]["mean"] for n in names]),
            sd=np.array([data[n]["sd"] for n in names]),
            lower=np.array([data[n]["lower"] for n in names]),
            upper=np.array([data[n]["upper"] for n in names]),
        )


@dataclass
class ReplicationRow:
    """Replication metrics of a single parameter."""

    parameter: str
    true_value: Optional[float]
    bias: float
    rmse: float
    coverage: float
    mean_estimate: float
    n_used: int


@dataclass
class ReplicationReport:
    """Bias, RMSE and coverage across replications, plus failure count."""

    rows: List[ReplicationRow]
    n_replications: int
    n_failed: int = 0

    def row(self, parameter: str) -> ReplicationRow:
        for r in self.rows:
            if r.parameter == parameter:
                return r
        raise KeyError(parameter)

    def to_dict(self) -> Dict:
        return {
            "n_replications": self.n_replications,
            "n_failed": self.n_failed,
            "rows": [vars(r).copy() for r in self.rows],
        }
