"""
Simulator
---------
Generates datasets from the extended joint model. Latent cause-specific dropout
times are drawn by inverting the cumulative hazard (GK-15 on panels, Brent root
finding), the observed time is the minimum of those and administrative
censoring, and item responses are drawn from the graded response model at the
true latent trait, whose v(t) uses the exact generating log baseline hazards.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad
from scipy.optimize import fsolve, root_scalar

from grm import sample_category
from jmirt_architecture import (
    ConfigurationError,
    FitVariant,
    ItemParams,
    ModelSpec,
    NumericError,
    SubjectData,
)
from latent_process import fixed_effect_row, random_effect_row
from model_config import default_model_spec
from survival import integrate

logger = logging.getLogger("jmirt.simulator")

INVERSION_PANELS = 8
INVERSION_XTOL = 1e-8
SETTING_LABELS = ("I", "IIa", "IIb", "III", "III-data")


@dataclass(frozen=True)
class OffsetWeibullHazard:
    """
    h0(t) = scale * ((t + 1) / (horizon + 1)) ** shape.

    Finite and positive at t = 0; shape 0 gives a constant hazard and scale 0
    an impossible cause.
    """

    scale: float
    shape: float
    horizon: float

    def log_hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.scale <= 0:
            return np.full(t.shape, -np.inf) if t.ndim else -np.inf
        return np.log(self.scale) + self.shape * np.log((t + 1.0) / (self.horizon + 1.0))

    def hazard(self, t):
        return self.scale * ((np.asarray(t, dtype=float) + 1.0) / (self.horizon + 1.0)) ** self.shape

    def cumulative(self, t):
        """Closed-form integral of h0 over [0, t]."""
        t = np.asarray(t, dtype=float)
        norm = self.scale * (self.horizon + 1.0) ** (-self.shape)
        if np.isclose(self.shape, -1.0):
            return norm * np.log1p(t)
        k = self.shape + 1.0
        return norm * ((t + 1.0) ** k - 1.0) / k

    def to_dict(self) -> Dict:
        return {"form": "offset_weibull", "scale": self.scale, "shape": self.shape, "horizon": self.horizon}


@dataclass(frozen=True)
class TrueModel:
    """Generating model: structural parameters, baseline hazards, visits and censoring."""

    label: str
    beta: Tuple[float, ...]
    lam: Tuple[float, ...]
    items: Tuple[ItemParams, ...]
    D: Tuple[Tuple[float, ...], ...]
    gamma: Tuple[Tuple[float, ...], ...]  # per cause, length G
    alpha: Tuple[Tuple[float, ...], ...]  # per cause, length q
    hazards: Tuple[OffsetWeibullHazard, ...]
    censoring_time: float = 20.0
    visit_times: Tuple[float, ...] = tuple(float(t) for t in range(20))
    covariate_prob: float = 0.5
    n_subjects: int = 500
    target_shares: Tuple[float, ...] = (0.45, 0.45)
    calibration: Dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.censoring_time <= 0:
            raise ConfigurationError("censoring time must be positive")
        n_causes = len(self.hazards)
        if not (len(self.lam) == len(self.gamma) == len(self.alpha) == n_causes):
            raise ConfigurationError("lambda, gamma, alpha and hazards must have one entry per cause")
        if any(not item.is_valid() for item in self.items):
            raise ConfigurationError("every item needs a > 0 and strictly decreasing thresholds")
        np.linalg.cholesky(np.array(self.D))

    @property
    def n_causes(self) -> int:
        return len(self.hazards)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_baseline_covariates(self) -> int:
        return len(self.gamma[0])

    def spec(self, variant: FitVariant = FitVariant.EXT) -> ModelSpec:
        """The model specification that fits data generated by this model."""
        return default_model_spec(variant, n_items=self.n_items, n_categories=self.items[0].n_categories)

    def log_baseline(self, p: int, t):
        return self.hazards[p].log_hazard(t)

    def true_v(self, t: float) -> float:
        """lambda' v(t) with exact log hazards; causes with lambda_p = 0 contribute nothing."""
        return float(sum(l * self.log_baseline(p, t) for p, l in enumerate(self.lam) if l != 0))

    def truth(self, variant: FitVariant = FitVariant.EXT) -> Dict[str, Optional[float]]:
        """True values keyed by monitored parameter name; None where the fitted model has no true counterpart."""
        values: Dict[str, Optional[float]] = {f"beta[{j + 1}]": v for j, v in enumerate(self.beta)}
        if variant == FitVariant.EXT:
            values.update({f"lambda[{p + 1}]": v for p, v in enumerate(self.lam)})
        values.update({f"a[{k + 1}]": item.a for k, item in enumerate(self.items)})
        for k, item in enumerate(self.items):
            values.update({f"d[{k + 1},{l + 1}]": float(d) for l, d in enumerate(item.thresholds)})
        D = np.array(self.D)
        values.update({f"D[{i + 1},{j + 1}]": float(D[i, j]) for i in range(len(D)) for j in range(i, len(D))})
        if variant == FitVariant.EXT:
            for p in range(self.n_causes):
                values.update({f"gamma[{p + 1},{g + 1}]": v for g, v in enumerate(self.gamma[p])})
                values.update({f"alpha[{p + 1},{j + 1}]": v for j, v in enumerate(self.alpha[p])})
        else:
            values.update({f"gamma[1,{g + 1}]": None for g in range(self.n_baseline_covariates)})
            values.update({f"alpha[1,{j + 1}]": None for j in range(len(self.D))})
        return values

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "beta": list(self.beta),
            "lambda": list(self.lam),
            "items": [{"a": item.a, "thresholds": item.thresholds.tolist()} for item in self.items],
            "D": [list(row) for row in self.D],
            "gamma": [list(g) for g in self.gamma],
            "alpha": [list(a) for a in self.alpha],
            "hazards": [h.to_dict() for h in self.hazards],
            "censoring_time": self.censoring_time,
            "visit_times": list(self.visit_times),
            "covariate_prob": self.covariate_prob,
            "n_subjects": self.n_subjects,
            "target_shares": list(self.target_shares),
            "calibration": self.calibration,
        }


# --- Event times ---
def event_time_from_uniform(
    log_hazard: Callable[[np.ndarray], np.ndarray], u: float, horizon: float
) -> Optional[float]:
    """
    Solve H(t) + log u = 0 on (0, horizon], H the integral of exp(log_hazard).

    Returns None when H(horizon) < -log u, i.e. the event falls beyond censoring.
    """
    if not 0.0 < u <= 1.0:
        raise ConfigurationError(f"u={u} outside (0, 1]")
    target = -np.log(u)
    if target == 0.0:
        return 0.0

    def cumulative(t: float) -> float:
        with np.errstate(divide="ignore"):
            value = integrate(lambda s: np.exp(log_hazard(s)), t, panels=INVERSION_PANELS)
        if not np.isfinite(value):
            raise NumericError(f"non-finite cumulative hazard at t={t}")
        return value

    if cumulative(horizon) < target:
        return None
    result = root_scalar(lambda t: cumulative(t) - target, bracket=[0.0, horizon], method="brentq", xtol=INVERSION_XTOL)
    return float(result.root)


def _linear_shift(model: TrueModel, p: int, w: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(model.gamma[p], w) + np.dot(model.alpha[p], b))


def simulate_event_time(
    model: TrueModel, p: int, w: np.ndarray, b: np.ndarray, rng: np.random.Generator
) -> Optional[float]:
    """Latent dropout time from cause p (0-based), or None beyond censoring."""
    u = 1.0 - rng.random()  # (0, 1]
    hazard = model.hazards[p]
    if hazard.scale <= 0:
        return None
    shift = _linear_shift(model, p, w, b)
    return event_time_from_uniform(lambda s: hazard.log_hazard(s) + shift, u, model.censoring_time)


def simulate_subject(model: TrueModel, subject_id: int, rng: np.random.Generator) -> SubjectData:
    spec = model.spec()
    w = rng.binomial(1, model.covariate_prob, size=model.n_baseline_covariates).astype(float)
    D = np.array(model.D)
    b = np.linalg.cholesky(D) @ rng.standard_normal(len(D))

    latent = [simulate_event_time(model, p, w, b, rng) for p in range(model.n_causes)]
    delta = np.zeros(model.n_causes, dtype=int)
    observed = model.censoring_time
    for p, t in enumerate(latent):
        if t is not None and t < observed:
            observed = t
            delta[:] = 0
            delta[p] = 1

    times = np.array([t for t in model.visit_times if t <= observed])
    skeleton = SubjectData(
        id=subject_id,
        visit_times=times,
        responses=np.zeros((len(times), model.n_items), dtype=int),
        baseline_covariates=w,
        observed_time=observed,
        cause_indicators=delta,
    )
    responses = np.zeros((len(times), model.n_items), dtype=int)
    for j, t in enumerate(times):
        eta = (
            fixed_effect_row(spec, skeleton, t, visit_index=j) @ np.array(model.beta)
            + random_effect_row(spec, t) @ b
            + model.true_v(t)
        )
        responses[j] = [sample_category(item, eta, rng) for item in model.items]
    return replace(skeleton, responses=responses)


def subject_rng(seed: int, subject_id: int) -> np.random.Generator:
    """Counter-based stream of one subject, independent of simulation order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(subject_id,)))


def simulate_dataset(model: TrueModel, n: Optional[int] = None, seed: int = 0) -> List[SubjectData]:
    n = model.n_subjects if n is None else n
    dataset = [simulate_subject(model, i, subject_rng(seed, i)) for i in range(1, n + 1)]
    shares = np.mean([s.cause_indicators for s in dataset], axis=0) if dataset else []
    logger.info(f"Simulated {n} subjects from setting {model.label}; cause shares {np.round(shares, 3).tolist()}.")
    return dataset


# --- Calibration ---
def _cause_probabilities(model: TrueModel, scales: np.ndarray, n_nodes: int = 20) -> np.ndarray:
    """P(dropout from each cause before C), integrating over w (exact) and b (Gauss-Hermite)."""
    D = np.array(model.D)
    if D.shape != (1, 1):
        raise ConfigurationError("calibration supports a single random intercept")
    nodes, weights = hermegauss(n_nodes)
    weights = weights / weights.sum()
    sd = np.sqrt(D[0, 0])
    hazards = [replace(h, scale=float(c)) for h, c in zip(model.hazards, scales)]
    G = model.n_baseline_covariates
    result = np.zeros(model.n_causes)
    for w in product([0.0, 1.0], repeat=G):
        w = np.array(w)
        w_prob = np.prod(np.where(w == 1.0, model.covariate_prob, 1.0 - model.covariate_prob))
        for x, weight in zip(nodes, weights):
            b = np.array([sd * x])
            factors = [np.exp(_linear_shift(model, p, w, b)) for p in range(model.n_causes)]

            def survival(t: float) -> float:
                return np.exp(-sum(f * h.cumulative(t) for f, h in zip(factors, hazards)))

            for p, (f, h) in enumerate(zip(factors, hazards)):
                value, _ = quad(lambda t: f * h.hazard(t) * survival(t), 0.0, model.censoring_time)
                result[p] += w_prob * weight * value
    return result


def calibrate_baseline_scales(model: TrueModel) -> np.ndarray:
    """
    Baseline hazard scales giving the model's target cause shares. Causes with
    a zero target keep scale 0.
    """
    targets = np.array(model.target_shares, dtype=float)
    if len(targets) != model.n_causes or targets.sum() >= 1.0:
        raise ConfigurationError("target shares need one entry per cause and must leave room for censoring")
    active = targets > 0
    start = np.full(active.sum(), np.log(-np.log(1.0 - targets.sum()) / model.censoring_time / active.sum()))

    def residual(log_scales: np.ndarray) -> np.ndarray:
        scales = np.zeros(model.n_causes)
        scales[active] = np.exp(log_scales)
        return _cause_probabilities(model, scales)[active] - targets[active]

    solution, info, status, message = fsolve(residual, start, full_output=True, xtol=1e-10)
    if status != 1:
        raise NumericError(f"baseline hazard calibration failed: {message}")
    scales = np.zeros(model.n_causes)
    scales[active] = np.exp(solution)
    logger.info(f"Calibrated baseline scales {scales.tolist()} for setting {model.label}.")
    return scales


# --- Settings ---
SETTING_I_ITEMS = (
    ItemParams(a=1.0, thresholds=(0.0, -1.440, -1.962)),
    ItemParams(a=0.851, thresholds=(1.011, 0.466, -0.440)),
    ItemParams(a=1.237, thresholds=(1.043, 0.214, -0.621)),
)
SETTING_LAMBDA = {"I": (-0.25, 0.1), "IIa": (0.0, 0.0), "IIb": (0.0, 0.1), "III": (-0.25, 0.1), "III-data": (-0.25, 0.1)}
HAZARD_SHAPES = (1.5, -0.3)  # late (cause 1) and early (cause 2) dropout


@lru_cache(maxsize=None)
def setting(label: str) -> TrueModel:
    """Generating model of a simulation setting (I, IIa, IIb, III / III-data)."""
    if label not in SETTING_LAMBDA:
        raise ConfigurationError(f"unknown setting '{label}', expected one of {list(SETTING_LABELS)}")
    C = 20.0
    draft = TrueModel(
        label=label,
        beta=(0.15, 0.4),
        lam=SETTING_LAMBDA[label],
        items=SETTING_I_ITEMS,
        D=((1.5**2,),),
        gamma=((-1.0,), (-0.75,)),
        alpha=((-0.25,), (0.25,)),
        hazards=tuple(OffsetWeibullHazard(scale=0.05, shape=k, horizon=C) for k in HAZARD_SHAPES),
        censoring_time=C,
    )
    scales = calibrate_baseline_scales(draft)
    calibrated = replace(draft, hazards=tuple(replace(h, scale=float(c)) for h, c in zip(draft.hazards, scales)))
    achieved = _cause_probabilities(calibrated, scales)
    return replace(calibrated, calibration={"scales": scales.tolist(), "achieved_shares": achieved.tolist()})


def random_item_params(
    n_items: int, n_categories: int, rng: np.random.Generator, fixed_item: int = 1
) -> Tuple[ItemParams, ...]:
    """
    Random GRM items: uniform threshold gaps summed into a decreasing, centred
    sequence and log-normal discriminations. The identified item gets a = 1 and
    first threshold 0.
    """
    if n_categories < 2:
        raise ConfigurationError("items need at least 2 categories")
    items = []
    for k in range(n_items):
        gaps = rng.uniform(0.3, 1.2, size=n_categories - 1)
        thresholds = -np.cumsum(gaps)
        thresholds -= thresholds.mean()
        a = float(np.exp(rng.normal(0.0, 0.25)))
        if k == fixed_item - 1:
            a = 1.0
            thresholds = thresholds - thresholds[0]
        items.append(ItemParams(a=a, thresholds=thresholds))
    return tuple(items)


def with_random_items(model: TrueModel, seed: int) -> TrueModel:
    rng = np.random.default_rng(seed)
    items = random_item_params(model.n_items, model.items[0].n_categories, rng)
    return replace(model, items=items)


def write_manifest(model: TrueModel, path, seed: int, n_subjects: int, extra: Optional[Dict] = None) -> Path:
    """Truth manifest next to a simulated dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "setting": model.label,
        "seed": seed,
        "n_subjects": n_subjects,
        "model": model.to_dict(),
        "truth": model.truth(FitVariant.EXT),
    }
    document.update(extra or {})
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(document, indent=2))
    logger.info(f"Wrote truth manifest to {path}.")
    return path
