"""
MCMC Engine
-----------
Log-posterior of the joint model and its Metropolis-within-Gibbs sampler.

Each iteration updates, in order: the (beta, lambda) block, one block per item
(a_k and its free thresholds), every subject's random effects (vectorized,
one accept/reject per subject), a Gibbs draw of D, then for every cause the
(gamma_p, alpha_p) block, the spline coefficients and a Gibbs draw of tau_p.
Random-walk proposal scales are tuned during the first A iterations and frozen
afterwards.
"""

import logging
import time
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import gamma as gamma_dist
from scipy.stats import invwishart

from bspline_hazard import PenaltyMatrix, build_basis, eval_basis_matrix, penalty
from grm import log_category_probs, threshold_table
from jmirt_architecture import (
    MISSING_CATEGORY,
    CauseParams,
    ChainOutput,
    ConfigurationError,
    FitVariant,
    InitializationError,
    ItemParams,
    ModelSpec,
    NumericError,
    ParameterState,
    PosteriorSummary,
    PriorConfig,
    SamplerSchedule,
    SubjectData,
)
from latent_process import log_density_random_effects, stack_design
from survival import SurvivalDesign

logger = logging.getLogger("jmirt.mcmc")

RANDOM_EFFECTS_BLOCK = "b"
TARGET_RATE_MULTIVARIATE = 0.234
TARGET_RATE_SCALAR = 0.44
LOG_SCALE_BOUNDS = (-10.0, 5.0)
SHAPE_RIDGE = 1e-8
_LOG_2PI = np.log(2.0 * np.pi)


# --- Data ---
class FitData:
    """
    A validated dataset with everything the sampler evaluates repeatedly:
    design rows at visits, basis values at visits, observed responses as flat
    arrays, and the survival quadrature design.
    """

    def __init__(self, dataset: Sequence[SubjectData], spec: ModelSpec):
        if not dataset:
            raise ConfigurationError("cannot fit an empty dataset")
        self.dataset = list(dataset)
        self.spec = spec
        domain_max = spec.spline.domain_max or max(s.observed_time for s in self.dataset)
        self.basis = build_basis(domain_max, spec.spline.n_basis, spec.spline.degree)
        self.penalty: PenaltyMatrix = penalty(spec.spline.n_basis, spec.spline.penalty_order)
        self.design = stack_design(spec, self.dataset)
        self.basis_at_visits = eval_basis_matrix(self.basis, self.design.times)

        responses = [s.responses for s in self.dataset if s.n_visits]
        grid = np.vstack(responses) if responses else np.zeros((0, spec.n_items), dtype=int)
        rows, items = np.nonzero(grid != MISSING_CATEGORY)
        self.obs_row = rows
        self.obs_item = items
        self.obs_category = grid[rows, items]
        self.obs_subject = self.design.subject_index[rows]
        self.item_obs = [np.flatnonzero(items == k) for k in range(spec.n_items)]
        self.survival = SurvivalDesign(self.dataset, self.basis)

    @property
    def n_subjects(self) -> int:
        return len(self.dataset)

    def event_counts(self) -> np.ndarray:
        return self.survival.delta.sum(axis=0)


# --- Parameter naming ---
class ParameterCodec:
    """Monitored parameter names and conversion between ParameterState and a draw row."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        names = [f"beta[{j + 1}]" for j in range(spec.n_fixed)]
        if spec.hazard_covariates:
            names += [f"lambda[{p + 1}]" for p in range(spec.n_causes)]
        names += [f"a[{k + 1}]" for k in range(spec.n_items)]
        names += [
            f"d[{k + 1},{l + 1}]" for k, L in enumerate(spec.categories_per_item) for l in range(L - 1)
        ]
        q = spec.n_random
        names += [f"D[{i + 1},{j + 1}]" for i in range(q) for j in range(i, q)]
        G = spec.n_baseline_covariates
        U = spec.spline.n_basis
        for p in range(spec.n_causes):
            names += [f"gamma[{p + 1},{g + 1}]" for g in range(G)]
            names += [f"alpha[{p + 1},{j + 1}]" for j in range(q)]
            names += [f"gamma_h0[{p + 1},{u + 1}]" for u in range(U)]
            names.append(f"tau[{p + 1}]")
        self.names: List[str] = names

    def flatten(self, state: ParameterState) -> np.ndarray:
        values = list(state.beta)
        if self.spec.hazard_covariates:
            values += list(state.lam)
        values += [item.a for item in state.items]
        for item in state.items:
            values += list(item.thresholds)
        values += list(state.D[np.triu_indices(self.spec.n_random)])
        for cause in state.causes:
            values += list(cause.gamma) + list(cause.alpha) + list(cause.spline_coeffs) + [cause.tau]
        return np.array(values, dtype=float)

    def unflatten(self, values: Union[Mapping[str, float], np.ndarray], n_subjects: int = 0) -> ParameterState:
        """Rebuild a state from a draw row or a name -> value mapping; random effects are zero."""
        if not isinstance(values, Mapping):
            values = dict(zip(self.names, np.asarray(values, dtype=float)))
        missing = [n for n in self.names if n not in values]
        if missing:
            raise ConfigurationError(f"missing parameters {missing[:5]}")
        spec = self.spec
        q, G, U = spec.n_random, spec.n_baseline_covariates, spec.spline.n_basis
        get = lambda name: float(values[name])
        D = np.zeros((q, q))
        for i in range(q):
            for j in range(i, q):
                D[i, j] = D[j, i] = get(f"D[{i + 1},{j + 1}]")
        lam = (
            [get(f"lambda[{p + 1}]") for p in range(spec.n_causes)]
            if spec.hazard_covariates
            else np.zeros(spec.n_causes)
        )
        return ParameterState(
            beta=[get(f"beta[{j + 1}]") for j in range(spec.n_fixed)],
            lam=lam,
            items=[
                ItemParams(
                    a=get(f"a[{k + 1}]"),
                    thresholds=[get(f"d[{k + 1},{l + 1}]") for l in range(L - 1)],
                )
                for k, L in enumerate(spec.categories_per_item)
            ],
            random_effects=np.zeros((n_subjects, q)),
            D=D,
            causes=[
                CauseParams(
                    gamma=[get(f"gamma[{p + 1},{g + 1}]") for g in range(G)],
                    alpha=[get(f"alpha[{p + 1},{j + 1}]") for j in range(q)],
                    spline_coeffs=[get(f"gamma_h0[{p + 1},{u + 1}]") for u in range(U)],
                    tau=get(f"tau[{p + 1}]"),
                )
                for p in range(spec.n_causes)
            ],
        )


def state_from_summary(summary: PosteriorSummary, spec: ModelSpec, n_subjects: int = 0) -> ParameterState:
    """Posterior-mean point estimate as a ParameterState (random effects at zero)."""
    return ParameterCodec(spec).unflatten(dict(zip(summary.parameter_names, summary.mean)), n_subjects)


# --- Targets ---
class BlockTarget(ABC):
    """
    What mh_update needs from a target: read and write a block's coordinates
    and evaluate the block's conditional log density up to a constant.
    """

    @abstractmethod
    def get_block(self, state, block: str) -> np.ndarray:
        pass

    @abstractmethod
    def set_block(self, state, block: str, values: np.ndarray):
        pass

    @abstractmethod
    def block_log_target(self, block: str, state) -> float:
        pass

    def reflect(self, block: str, values: np.ndarray) -> np.ndarray:
        return values


def _normal_log_prior(values: np.ndarray, variance: float) -> float:
    values = np.asarray(values, dtype=float)
    return float(-0.5 * np.sum(values**2) / variance - 0.5 * values.size * (_LOG_2PI + np.log(variance)))


def _reflect_into(value: float, upper: float) -> float:
    """Fold value into [0, upper] by reflection at both bounds."""
    period = 2.0 * upper
    value = np.mod(value, period)
    return float(period - value if value > upper else value)


class JointPosterior(BlockTarget):
    """
    Joint posterior of the structural parameters and random effects.

    likelihood_enabled=False drops every data term so the sampler explores the
    prior, which is how the blocks are checked against analytic prior moments.
    """

    def __init__(self, data: FitData, likelihood_enabled: bool = True):
        self.data = data
        self.spec = data.spec
        self.priors: PriorConfig = data.spec.priors
        self.likelihood_enabled = likelihood_enabled
        self._D0 = self.priors.scale_matrix(self.spec.n_random)
        self._free = [self._free_coordinates(k) for k in range(self.spec.n_items)]

    # Block layout
    def _free_coordinates(self, k: int) -> Tuple[bool, np.ndarray]:
        """(a_k free?, indices of free thresholds) of item k."""
        spec = self.spec
        n_thresholds = spec.categories_per_item[k] - 1
        if k == spec.fixed_item_index:
            return False, np.array([l for l in range(n_thresholds) if l != spec.fixed_threshold_index], dtype=int)
        return True, np.arange(n_thresholds)

    def block_names(self) -> List[str]:
        spec = self.spec
        names = []
        if spec.n_fixed or spec.hazard_covariates:
            names.append("beta_lambda")
        for k in range(spec.n_items):
            a_free, free = self._free[k]
            if a_free or len(free):
                names.append(f"item:{k + 1}")
        names.append(RANDOM_EFFECTS_BLOCK)
        for p in range(spec.n_causes):
            names += [f"cause_reg:{p + 1}", f"cause_h0:{p + 1}"]
        return names

    @staticmethod
    def _parse(block: str) -> Tuple[str, int]:
        kind, _, index = block.partition(":")
        return kind, int(index) - 1 if index else -1

    def get_block(self, state: ParameterState, block: str) -> np.ndarray:
        kind, i = self._parse(block)
        if kind == "beta_lambda":
            lam = state.lam if self.spec.hazard_covariates else []
            return np.concatenate([state.beta, lam])
        if kind == "item":
            a_free, free = self._free[i]
            item = state.items[i]
            return np.concatenate([[item.a] if a_free else [], item.thresholds[free]])
        if kind == RANDOM_EFFECTS_BLOCK:
            return state.random_effects.copy()
        if kind == "cause_reg":
            return np.concatenate([state.causes[i].gamma, state.causes[i].alpha])
        if kind == "cause_h0":
            return state.causes[i].spline_coeffs.copy()
        raise ConfigurationError(f"unknown block '{block}'")

    def set_block(self, state: ParameterState, block: str, values: np.ndarray) -> ParameterState:
        kind, i = self._parse(block)
        values = np.asarray(values, dtype=float)
        if kind == "beta_lambda":
            p = self.spec.n_fixed
            lam = values[p:] if self.spec.hazard_covariates else state.lam
            return replace(state, beta=values[:p], lam=lam)
        if kind == "item":
            a_free, free = self._free[i]
            item = state.items[i]
            thresholds = item.thresholds.copy()
            thresholds[free] = values[int(a_free):]
            items = list(state.items)
            items[i] = ItemParams(a=values[0] if a_free else item.a, thresholds=thresholds)
            return replace(state, items=items)
        if kind == RANDOM_EFFECTS_BLOCK:
            return replace(state, random_effects=values)
        causes = list(state.causes)
        if kind == "cause_reg":
            G = len(state.causes[i].gamma)
            causes[i] = replace(state.causes[i], gamma=values[:G], alpha=values[G:])
        elif kind == "cause_h0":
            causes[i] = replace(state.causes[i], spline_coeffs=values)
        else:
            raise ConfigurationError(f"unknown block '{block}'")
        return replace(state, causes=causes)

    def reflect(self, block: str, values: np.ndarray) -> np.ndarray:
        kind, i = self._parse(block)
        if kind == "item" and self._free[i][0]:
            values = values.copy()
            values[0] = _reflect_into(values[0], self.priors.discrimination_upper)
        return values

    # Priors
    def log_prior_item(self, k: int, item: ItemParams) -> float:
        spec, bound = self.spec, self.priors.threshold_bound
        value = 0.0
        if k == spec.fixed_item_index:
            if item.a != spec.fixed_discrimination_value:
                return -np.inf
            if item.thresholds[spec.fixed_threshold_index] != spec.fixed_threshold_value:
                return -np.inf
        elif not 0.0 < item.a <= self.priors.discrimination_upper:
            return -np.inf
        else:
            value -= np.log(self.priors.discrimination_upper)
        # sequential uniform: d_1 ~ U(-B, B), d_l ~ U(-B, d_{l-1})
        previous = bound
        for l, d in enumerate(item.thresholds):
            if not -bound < d < previous:
                return -np.inf
            fixed = k == spec.fixed_item_index and l == spec.fixed_threshold_index
            if not fixed:
                value -= np.log(previous + bound)
            previous = d
        return value

    def log_prior_gmrf(self, cause: CauseParams) -> float:
        quad = self.data.penalty.quadratic_form(cause.spline_coeffs)
        return 0.5 * self.data.penalty.rank * np.log(cause.tau) - 0.5 * cause.tau * quad

    def log_prior(self, state: ParameterState) -> float:
        priors, spec = self.priors, self.spec
        if any(cause.tau <= 0 for cause in state.causes):
            return -np.inf
        try:
            np.linalg.cholesky(state.D)
        except np.linalg.LinAlgError:
            return -np.inf
        if not np.allclose(state.D, state.D.T):
            return -np.inf
        value = _normal_log_prior(state.beta, priors.beta_variance)
        if spec.hazard_covariates:
            value += _normal_log_prior(state.lam, priors.lambda_variance)
        for k, item in enumerate(state.items):
            value += self.log_prior_item(k, item)
            if value == -np.inf:
                return value
        q = spec.n_random
        value += float(invwishart.logpdf(state.D, df=q, scale=q * self._D0))
        for cause in state.causes:
            value += _normal_log_prior(cause.gamma, priors.gamma_variance)
            value += _normal_log_prior(cause.alpha, priors.alpha_variance)
            value += self.log_prior_gmrf(cause)
            value += float(gamma_dist.logpdf(cause.tau, priors.tau_shape, scale=1.0 / priors.tau_rate))
        return value

    # Likelihood pieces
    def eta_at_visits(self, state: ParameterState) -> np.ndarray:
        data = self.data
        b = state.random_effects[data.design.subject_index]
        value = data.design.X @ state.beta + np.sum(data.design.Z * b, axis=1)
        if self.spec.hazard_covariates:
            coeffs = np.array([cause.spline_coeffs for cause in state.causes])
            value = value + (data.basis_at_visits @ coeffs.T) @ state.lam
        return value

    def longitudinal_terms(self, state: ParameterState, selection: Optional[np.ndarray] = None) -> np.ndarray:
        """log P(y_o | eta_o) per observed response (optionally a subset)."""
        data = self.data
        rows = data.obs_row if selection is None else data.obs_row[selection]
        items = data.obs_item if selection is None else data.obs_item[selection]
        categories = data.obs_category if selection is None else data.obs_category[selection]
        eta = self.eta_at_visits(state)[rows]
        return log_category_probs(categories, items, eta, state.discriminations, threshold_table(state.items))

    def survival_terms(self, state: ParameterState, cause_index: int) -> np.ndarray:
        return self.data.survival.log_lik(cause_index, state.causes[cause_index], state.random_effects)

    def subject_log_target(self, state: ParameterState) -> np.ndarray:
        """Per-subject conditional log density of b_i (subjects are independent given the rest)."""
        n = self.data.n_subjects
        try:
            value = log_density_random_effects(state.random_effects, state.D)
        except NumericError:
            return np.full(n, -np.inf)
        if self.likelihood_enabled:
            value = value + np.bincount(
                self.data.obs_subject, weights=self.longitudinal_terms(state), minlength=n
            )
            for p in range(self.spec.n_causes):
                value = value + self.survival_terms(state, p)
        return np.where(np.isnan(value), -np.inf, value)

    def block_log_target(self, block: str, state: ParameterState) -> float:
        kind, i = self._parse(block)
        priors = self.priors
        lik = self.likelihood_enabled
        if kind == "beta_lambda":
            value = _normal_log_prior(state.beta, priors.beta_variance)
            if self.spec.hazard_covariates:
                value += _normal_log_prior(state.lam, priors.lambda_variance)
            if lik:
                value += float(np.sum(self.longitudinal_terms(state)))
        elif kind == "item":
            value = self.log_prior_item(i, state.items[i])
            if value > -np.inf and lik:
                value += float(np.sum(self.longitudinal_terms(state, self.data.item_obs[i])))
        elif kind == RANDOM_EFFECTS_BLOCK:
            value = float(np.sum(self.subject_log_target(state)))
        elif kind == "cause_reg":
            cause = state.causes[i]
            value = _normal_log_prior(cause.gamma, priors.gamma_variance)
            value += _normal_log_prior(cause.alpha, priors.alpha_variance)
            if lik:
                value += float(np.sum(self.survival_terms(state, i)))
        elif kind == "cause_h0":
            value = self.log_prior_gmrf(state.causes[i])
            if lik:
                value += float(np.sum(self.survival_terms(state, i)))
                if self.spec.hazard_covariates:
                    value += float(np.sum(self.longitudinal_terms(state)))
        else:
            raise ConfigurationError(f"unknown block '{block}'")
        return -np.inf if np.isnan(value) else value

    def log_posterior(self, state: ParameterState) -> float:
        """Full log posterior up to a constant; -inf outside the prior support."""
        value = self.log_prior(state)
        if value == -np.inf:
            return value
        value += float(np.sum(log_density_random_effects(state.random_effects, state.D)))
        if self.likelihood_enabled:
            value += float(np.sum(self.longitudinal_terms(state)))
            for p in range(self.spec.n_causes):
                value += float(np.sum(self.survival_terms(state, p)))
        return -np.inf if np.isnan(value) else value


def log_posterior(state: ParameterState, data: FitData, likelihood_enabled: bool = True) -> float:
    return JointPosterior(data, likelihood_enabled).log_posterior(state)


# --- Proposals ---
@dataclass
class BlockProposal:
    """
    Random-walk proposal of one block: covariance exp(2 log_scale) * shape.

    log_scale is a vector for the random-effects block (one scale per subject).
    """

    shape: np.ndarray
    log_scale: Union[float, np.ndarray] = 0.0
    target_rate: float = TARGET_RATE_MULTIVARIATE
    window_accepted: Union[float, np.ndarray] = 0.0
    window_proposed: int = 0
    total_accepted: Union[float, np.ndarray] = 0.0
    total_proposed: int = 0
    history: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        self._chol = np.linalg.cholesky(self.shape)

    @property
    def dim(self) -> int:
        return self.shape.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def set_shape(self, shape: np.ndarray) -> None:
        self.shape = shape
        self._chol = np.linalg.cholesky(shape)

    def record(self, accepted) -> None:
        accepted = np.asarray(accepted, dtype=float)
        self.window_accepted = self.window_accepted + accepted
        self.total_accepted = self.total_accepted + accepted
        self.window_proposed += 1
        self.total_proposed += 1

    def reset_totals(self) -> None:
        self.total_accepted = np.zeros_like(np.asarray(self.total_accepted, dtype=float))
        self.total_proposed = 0

    def acceptance_rate(self) -> float:
        if not self.total_proposed:
            return 0.0
        return float(np.mean(self.total_accepted) / self.total_proposed)

    def covariance(self) -> np.ndarray:
        return float(np.exp(2.0 * np.median(self.log_scale))) * self.shape


@dataclass
class ProposalState:
    blocks: Dict[str, BlockProposal]
    frozen: bool = False


def initial_proposal(posterior: JointPosterior, state: ParameterState) -> ProposalState:
    blocks = {}
    for name in posterior.block_names():
        if name == RANDOM_EFFECTS_BLOCK:
            q = posterior.spec.n_random
            n = posterior.data.n_subjects
            blocks[name] = BlockProposal(
                shape=0.25 * np.eye(q),
                log_scale=np.zeros(n),
                target_rate=TARGET_RATE_SCALAR if q == 1 else TARGET_RATE_MULTIVARIATE,
                window_accepted=np.zeros(n),
                total_accepted=np.zeros(n),
            )
            continue
        dim = len(posterior.get_block(state, name))
        blocks[name] = BlockProposal(
            shape=0.01 * np.eye(dim),
            target_rate=TARGET_RATE_SCALAR if dim == 1 else TARGET_RATE_MULTIVARIATE,
        )
    return ProposalState(blocks=blocks)


def _update_random_effects(
    target: JointPosterior, state: ParameterState, proposal: ProposalState, rng: np.random.Generator
) -> Tuple[ParameterState, np.ndarray]:
    bp = proposal.blocks[RANDOM_EFFECTS_BLOCK]
    current = state.random_effects
    n, q = current.shape
    steps = (rng.standard_normal((n, q)) @ bp.chol.T) * np.exp(bp.log_scale)[:, None]
    candidate_state = replace(state, random_effects=current + steps)
    log_ratio = target.subject_log_target(candidate_state) - target.subject_log_target(state)
    with np.errstate(invalid="ignore"):
        accepted = np.log(rng.random(n)) < log_ratio
    merged = np.where(accepted[:, None], candidate_state.random_effects, current)
    bp.record(accepted)
    return replace(state, random_effects=merged), accepted


def mh_update(
    block: str,
    state,
    proposal: ProposalState,
    rng: np.random.Generator,
    target: BlockTarget,
):
    """
    One random-walk Metropolis step on a block; returns (state', accepted).

    The random-effects block of a JointPosterior is updated subject by subject
    in one vectorized step and returns the per-subject acceptance flags.
    """
    if block == RANDOM_EFFECTS_BLOCK and isinstance(target, JointPosterior):
        return _update_random_effects(target, state, proposal, rng)
    bp = proposal.blocks[block]
    current = target.get_block(state, block)
    step = np.exp(bp.log_scale) * (bp.chol @ rng.standard_normal(bp.dim))
    candidate = target.reflect(block, current + step)
    candidate_state = target.set_block(state, block, candidate)
    log_ratio = target.block_log_target(block, candidate_state) - target.block_log_target(block, state)
    accepted = bool(np.log(rng.random()) < log_ratio) if not np.isnan(log_ratio) else False
    bp.record(accepted)
    return (candidate_state if accepted else state), accepted


# --- Gibbs steps ---
def gibbs_tau(cause: CauseParams, penalty: PenaltyMatrix, priors: PriorConfig, rng: np.random.Generator) -> float:
    """tau | gamma_h0 ~ Gamma(a + rank/2, rate b + gamma' K gamma / 2)."""
    quad = penalty.quadratic_form(cause.spline_coeffs)
    if not np.isfinite(quad) or quad < -1e-10 * (1.0 + np.sum(cause.spline_coeffs**2)):
        raise NumericError(f"penalty quadratic form is {quad}")
    shape = priors.tau_shape + 0.5 * penalty.rank
    rate = priors.tau_rate + 0.5 * max(quad, 0.0)
    return float(rng.gamma(shape, 1.0 / rate))


def gibbs_D(random_effects: np.ndarray, D0: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """D | b ~ Inverse-Wishart(q + n, q D0 + sum b_i b_i')."""
    b = np.asarray(random_effects, dtype=float).reshape(-1, q)
    if len(b) < 1:
        raise ConfigurationError("at least one subject is needed to update D")
    scale = q * np.atleast_2d(D0) + b.T @ b
    draw = np.atleast_2d(invwishart.rvs(df=q + len(b), scale=scale, random_state=rng))
    return 0.5 * (draw + draw.T)


# --- Adaptation ---
def adapt(proposal: ProposalState) -> ProposalState:
    """
    Close an adaptation window: move every block's log scale by
    2 * (window acceptance - target) and reset the window counters.
    A frozen proposal is returned untouched.
    """
    if proposal.frozen:
        return proposal
    low, high = LOG_SCALE_BOUNDS
    for name, bp in proposal.blocks.items():
        if not bp.window_proposed:
            continue
        rate = np.asarray(bp.window_accepted, dtype=float) / bp.window_proposed
        bp.log_scale = np.clip(bp.log_scale + 2.0 * (rate - bp.target_rate), low, high)
        if np.ndim(bp.log_scale) == 0:
            bp.log_scale = float(bp.log_scale)
        logger.debug(f"Block {name}: window acceptance {float(np.mean(rate)):.3f}")
        bp.window_accepted = np.zeros_like(rate) if np.ndim(rate) else 0.0
        bp.window_proposed = 0
    return proposal


def _empirical_shape(history: List[np.ndarray], dim: int, per_subject: bool) -> Optional[np.ndarray]:
    if len(history) < max(10, dim + 2):
        return None
    stacked = np.array(history)
    if per_subject:
        # average within-subject covariance of (draws, subjects, q)
        centred = stacked - stacked.mean(axis=0)
        cov = np.einsum("tni,tnj->ij", centred, centred) / ((len(history) - 1) * stacked.shape[1])
    else:
        cov = np.atleast_2d(np.cov(stacked, rowvar=False))
    shape = cov * 2.38**2 / dim + SHAPE_RIDGE * np.eye(dim)
    try:
        np.linalg.cholesky(shape)
    except np.linalg.LinAlgError:
        return None
    return shape


def replace_shapes(proposal: ProposalState) -> ProposalState:
    """Swap each block's shape for the scaled empirical covariance of its recorded draws."""
    if proposal.frozen:
        return proposal
    for name, bp in proposal.blocks.items():
        shape = _empirical_shape(bp.history, bp.dim, per_subject=name == RANDOM_EFFECTS_BLOCK)
        if shape is not None:
            bp.set_shape(shape)
            bp.log_scale = np.zeros_like(bp.log_scale) if np.ndim(bp.log_scale) else 0.0
        bp.history = []
    return proposal


# --- Initialization ---
def initial_state(data: FitData) -> ParameterState:
    """
    Deterministic default start: regression coefficients at 0, a_k = 1,
    thresholds 1, 0, -1, ... (the fixed item shifted onto its fixed value),
    b = 0, D = I, tau = 1 and flat log baseline hazards at the crude event rate.
    """
    spec = data.spec
    bound = spec.priors.threshold_bound
    items = []
    for k, L in enumerate(spec.categories_per_item):
        thresholds = 1.0 - np.arange(L - 1) * min(1.0, bound / L)
        a = 1.0
        if k == spec.fixed_item_index:
            thresholds = thresholds + spec.fixed_threshold_value - thresholds[spec.fixed_threshold_index]
            a = spec.fixed_discrimination_value
        items.append(ItemParams(a=a, thresholds=thresholds))
    exposure = float(np.sum(data.survival.observed_time))
    if exposure <= 0:
        raise InitializationError("total follow-up time is zero")
    events = data.event_counts()
    q, G, U = spec.n_random, spec.n_baseline_covariates, spec.spline.n_basis
    causes = [
        CauseParams(
            gamma=np.zeros(G),
            alpha=np.zeros(q),
            spline_coeffs=np.full(U, np.log(max(float(events[p]), 0.5) / exposure)),
            tau=1.0,
        )
        for p in range(spec.n_causes)
    ]
    return ParameterState(
        beta=np.zeros(spec.n_fixed),
        lam=np.zeros(spec.n_causes),
        items=items,
        random_effects=np.zeros((data.n_subjects, q)),
        D=np.eye(q),
        causes=causes,
    )


def overdisperse(state: ParameterState, rng: np.random.Generator, spread: float = 0.1) -> ParameterState:
    """Jitter the regression coefficients of a start state (used for chains after the first)."""
    causes = [
        replace(
            cause,
            gamma=cause.gamma + spread * rng.standard_normal(len(cause.gamma)),
            alpha=cause.alpha + spread * rng.standard_normal(len(cause.alpha)),
        )
        for cause in state.causes
    ]
    return replace(
        state,
        beta=state.beta + spread * rng.standard_normal(len(state.beta)),
        lam=state.lam + spread * rng.standard_normal(len(state.lam)),
        causes=causes,
    )


# --- Chains ---
def run_chain(
    data: FitData,
    init: Optional[ParameterState] = None,
    schedule: Optional[SamplerSchedule] = None,
    seed: int = 0,
    likelihood_enabled: bool = True,
) -> ChainOutput:
    """
    Run one Metropolis-within-Gibbs chain for A + B + I iterations and keep
    every T-th draw of the sampling phase. The model is always data.spec.

    Raises:
        InitializationError: the start state has a non-finite log posterior
    """
    spec = data.spec
    schedule = schedule or spec.schedule
    rng = np.random.default_rng(seed)
    posterior = JointPosterior(data, likelihood_enabled=likelihood_enabled)
    state = init if init is not None else initial_state(data)
    if not spec.hazard_covariates:
        state = replace(state, lam=np.zeros(spec.n_causes))
    start_lp = posterior.log_posterior(state)
    if not np.isfinite(start_lp):
        raise InitializationError(
            f"log posterior at the start state is {start_lp}; prior log density {posterior.log_prior(state)}"
        )
    codec = ParameterCodec(spec)
    proposal = initial_proposal(posterior, state)
    blocks = posterior.block_names()
    head = [b for b in blocks if b == "beta_lambda" or b.startswith("item:")]
    D0 = posterior.priors.scale_matrix(spec.n_random)
    A, B, T = schedule.adaptive, schedule.burn_in, schedule.thin
    record_from, shape_at = A // 4, A // 2

    draws = np.empty((schedule.n_retained, len(codec.names)))
    b_sum = np.zeros_like(state.random_effects)
    b_draws = (
        np.empty((schedule.n_retained,) + state.random_effects.shape) if spec.store_random_effects else None
    )
    if A == 0:
        proposal.frozen = True

    logger.info(
        f"Chain seed {seed}: {data.n_subjects} subjects, {len(codec.names)} monitored parameters, "
        f"{schedule.total} iterations."
    )
    started = time.time()
    kept = 0
    for m in range(1, schedule.total + 1):
        for block in head:
            state, _ = mh_update(block, state, proposal, rng, posterior)
        state, _ = mh_update(RANDOM_EFFECTS_BLOCK, state, proposal, rng, posterior)
        state = replace(state, D=gibbs_D(state.random_effects, D0, spec.n_random, rng))
        for p in range(spec.n_causes):
            state, _ = mh_update(f"cause_reg:{p + 1}", state, proposal, rng, posterior)
            state, _ = mh_update(f"cause_h0:{p + 1}", state, proposal, rng, posterior)
            causes = list(state.causes)
            causes[p] = replace(causes[p], tau=gibbs_tau(causes[p], data.penalty, posterior.priors, rng))
            state = replace(state, causes=causes)

        if m <= A:
            if record_from < m <= shape_at:
                for name, bp in proposal.blocks.items():
                    bp.history.append(posterior.get_block(state, name))
            if m % schedule.adapt_window == 0:
                adapt(proposal)
            if m == shape_at:
                replace_shapes(proposal)
            if m == A:
                adapt(proposal)
                proposal.frozen = True
                for bp in proposal.blocks.values():
                    bp.reset_totals()
                logger.info(f"Adaptive phase finished after {A} iterations; proposals frozen.")
        elif m > A + B and (m - A - B) % T == 0:
            draws[kept] = codec.flatten(state)
            b_sum += state.random_effects
            if b_draws is not None:
                b_draws[kept] = state.random_effects
            kept += 1
        if schedule.progress_every and m % schedule.progress_every == 0:
            logger.info(f"Iteration {m}/{schedule.total}")

    if not np.all(np.isfinite(draws)):
        raise NumericError("non-finite values in the retained draws")
    logger.info(f"Chain seed {seed} finished in {time.time() - started:.2f} seconds.")
    return ChainOutput(
        parameter_names=codec.names,
        draws=draws,
        acceptance_rates={name: bp.acceptance_rate() for name, bp in proposal.blocks.items()},
        proposal_covariances={name: bp.covariance().tolist() for name, bp in proposal.blocks.items()},
        seed=int(seed),
        schedule=schedule,
        random_effects_mean=b_sum / max(kept, 1),
        random_effects_draws=b_draws,
        metadata={
            "variant": (FitVariant.EXT if spec.hazard_covariates else FitVariant.SIMPLE).value,
            "n_subjects": data.n_subjects,
            "basis": data.basis.to_dict(),
            "penalty_rank": data.penalty.rank,
            "initial_log_posterior": float(start_lp),
            "likelihood_enabled": likelihood_enabled,
        },
    )


def chain_seeds(seed: int, n_chains: int) -> List[int]:
    """Independent integer seeds for n chains derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def _run_indexed_chain(index: int, data: FitData, seed: int, likelihood_enabled: bool) -> Tuple[int, ChainOutput]:
    init = initial_state(data)
    if index > 0:
        init = overdisperse(init, np.random.default_rng(seed ^ 0x5EED))
    return index, run_chain(data, init=init, seed=seed, likelihood_enabled=likelihood_enabled)


def run_chains(
    data: FitData,
    spec: Optional[ModelSpec] = None,
    n_chains: int = 1,
    seed: int = 0,
    workers: int = 1,
    likelihood_enabled: bool = True,
) -> List[ChainOutput]:
    """Run independent chains, in worker processes when workers > 1; ordered by chain index."""
    if n_chains < 1:
        raise ConfigurationError("n_chains must be at least 1")
    if spec is not None and spec is not data.spec:
        data = FitData(data.dataset, spec)
    seeds = chain_seeds(seed, n_chains)
    if workers <= 1 or n_chains == 1:
        results = [_run_indexed_chain(c, data, s, likelihood_enabled) for c, s in enumerate(seeds)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n_chains)) as pool:
            futures = [
                pool.submit(_run_indexed_chain, c, data, s, likelihood_enabled) for c, s in enumerate(seeds)
            ]
            results = [f.result() for f in futures]
    return [chain for _, chain in sorted(results, key=lambda pair: pair[0])]
