"""
Competing-risks survival submodel
---------------------------------
Cause-specific hazards

    h_ip(t) = h0_p(t) exp(gamma_p' w_i + alpha_p' b_i)

with B-spline log baseline hazards, cumulative hazards by 15-point
Gauss-Kronrod quadrature on each knot interval of (0, T], and the survival log-likelihood
sum_p [delta_ip log h_ip(T_i) - H_ip(T_i)].
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from bspline_hazard import BSplineBasis, eval_basis_matrix, log_h0
from jmirt_architecture import (
    CauseParams,
    ConfigurationError,
    DomainRangeError,
    NumericError,
    SubjectData,
)

logger = logging.getLogger("jmirt.survival")

# QUADPACK qk15 abscissae (descending, positive half) and Kronrod weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights on [-1, 1] with the affine map onto (0, T]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.nodes)

    def map(self, upper, lower=0.0):
        """
        Nodes and weights of the rule on [lower, upper].

        upper may be an array of n interval ends; the result is then (n, n_points).
        """
        upper = np.asarray(upper, dtype=float)
        half = 0.5 * (upper - lower)
        mid = 0.5 * (upper + lower)
        nodes = mid[..., None] + half[..., None] * self.nodes
        weights = half[..., None] * self.weights
        return nodes, weights


def _gauss_kronrod_15() -> QuadratureRule:
    nodes = np.concatenate([-_XGK[:7], _XGK[7:], _XGK[6::-1]])
    weights = np.concatenate([_WGK[:7], _WGK[7:], _WGK[6::-1]])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights)


GK15 = _gauss_kronrod_15()


def panel_edges(upper: float, panels: int = 1, breaks: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Edges of the integration panels on [0, upper]: the pieces between the
    breaks lying inside (0, upper), each split into `panels` equal panels.
    """
    pieces = np.array([0.0, upper])
    if breaks is not None:
        breaks = np.asarray(breaks, dtype=float)
        pieces = np.concatenate([[0.0], breaks[(breaks > 0.0) & (breaks < upper)], [upper]])
    steps = np.linspace(0.0, 1.0, panels + 1)[:-1]
    starts = pieces[:-1, None] + np.diff(pieces)[:, None] * steps
    return np.append(starts.reshape(-1), upper)


def integrate(
    fn: Callable[[np.ndarray], np.ndarray],
    upper: float,
    panels: int = 1,
    rule: QuadratureRule = GK15,
    breaks: Optional[np.ndarray] = None,
) -> float:
    """
    Integrate fn over [0, upper] with the rule applied on equal panels, per
    piece between breaks when breaks are given.

    fn receives an array of nodes and must return values of the same shape.
    """
    if upper < 0:
        raise DomainRangeError(f"upper limit {upper} is negative")
    if panels < 1:
        raise ConfigurationError("panels must be at least 1")
    if upper == 0:
        return 0.0
    edges = panel_edges(upper, panels, breaks)
    nodes, weights = rule.map(edges[1:], edges[:-1])
    values = np.asarray(fn(nodes.reshape(-1)), dtype=float).reshape(nodes.shape)
    return float(np.sum(weights * values))


def _linear_predictor(cause: CauseParams, w: np.ndarray, b: np.ndarray) -> float:
    w = np.asarray(w, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(w) != len(cause.gamma):
        raise ConfigurationError(f"{len(w)} baseline covariates for {len(cause.gamma)} hazard coefficients")
    if len(b) != len(cause.alpha):
        raise ConfigurationError(f"{len(b)} random effects for {len(cause.alpha)} association loadings")
    return float(cause.gamma @ w + cause.alpha @ b)


def log_hazard(cause: CauseParams, basis: BSplineBasis, w: np.ndarray, b: np.ndarray, t: float) -> float:
    """log h0_p(t) + gamma_p' w + alpha_p' b."""
    return log_h0(basis, cause.spline_coeffs, float(t)) + _linear_predictor(cause, w, b)


def cumulative_hazard(
    cause: CauseParams,
    basis: BSplineBasis,
    w: np.ndarray,
    b: np.ndarray,
    T: float,
    panels: int = 1,
) -> float:
    """
    GK-15 approximation of the integral of the cause-specific hazard over (0, T],
    one rule per knot interval (split into `panels` panels) clipped to T.
    """
    if T < 0:
        raise DomainRangeError(f"T={T} is negative")
    shift = _linear_predictor(cause, w, b)
    baseline = integrate(
        lambda s: np.exp(log_h0(basis, cause.spline_coeffs, s)), T, panels=panels, breaks=basis.breakpoints
    )
    value = np.exp(shift) * baseline
    if not np.isfinite(value):
        raise NumericError(f"non-finite cumulative hazard at T={T}")
    return float(value)


def _per_cause(bases: Union[BSplineBasis, Sequence[BSplineBasis]], n_causes: int) -> Sequence[BSplineBasis]:
    if isinstance(bases, BSplineBasis):
        return [bases] * n_causes
    if len(bases) != n_causes:
        raise ConfigurationError(f"{len(bases)} bases for {n_causes} causes")
    return bases


def log_lik_survival(
    subject: SubjectData,
    causes: Sequence[CauseParams],
    bases: Union[BSplineBasis, Sequence[BSplineBasis]],
    b: np.ndarray,
) -> float:
    """sum_p [delta_p log h_p(T) - H_p(T)] for one subject."""
    if len(subject.cause_indicators) != len(causes):
        raise ConfigurationError(
            f"subject {subject.id} has {len(subject.cause_indicators)} cause indicators for {len(causes)} causes"
        )
    total = 0.0
    for cause, basis, delta in zip(causes, _per_cause(bases, len(causes)), subject.cause_indicators):
        w = subject.baseline_covariates
        if delta:
            total += log_hazard(cause, basis, w, b, subject.observed_time)
        total -= cumulative_hazard(cause, basis, w, b, subject.observed_time)
    return total


class SurvivalDesign:
    """
    Basis evaluations at every subject's observed time and quadrature nodes,
    precomputed once so the per-cause log-likelihood of all subjects is a few
    matrix products.

    Every subject gets one rule per knot interval; intervals are clipped to
    T_i, so those beyond it collapse to zero width and carry zero weight.
    """

    def __init__(self, dataset: Sequence[SubjectData], basis: BSplineBasis, rule: QuadratureRule = GK15):
        self.basis = basis
        self.rule = rule
        observed = np.array([s.observed_time for s in dataset], dtype=float)
        if np.any(observed < 0):
            raise DomainRangeError("negative observed time")
        breaks = basis.breakpoints
        lower = np.minimum(breaks[None, :-1], observed[:, None])
        upper = np.minimum(breaks[None, 1:], observed[:, None])
        nodes, weights = rule.map(upper, lower)  # (n, intervals, points)
        n = len(observed)
        n_nodes = nodes.shape[1] * rule.n_points
        self.observed_time = observed
        self.node_weights = weights.reshape(n, n_nodes)
        self.basis_at_nodes = eval_basis_matrix(basis, nodes.reshape(-1)).reshape(n, n_nodes, -1)
        self.basis_at_time = eval_basis_matrix(basis, observed)
        self.W = np.array([s.baseline_covariates for s in dataset], dtype=float).reshape(n, -1)
        self.delta = np.array([s.cause_indicators for s in dataset], dtype=int).reshape(n, -1)

    @property
    def n_subjects(self) -> int:
        return len(self.observed_time)

    def baseline_cumulative(self, spline_coeffs: np.ndarray) -> np.ndarray:
        """Integral of h0 over (0, T_i] for every subject."""
        return np.sum(self.node_weights * np.exp(self.basis_at_nodes @ spline_coeffs), axis=1)

    def log_lik(self, cause_index: int, cause: CauseParams, random_effects: np.ndarray) -> np.ndarray:
        """Per-subject delta_ip log h_ip(T_i) - H_ip(T_i) for one cause."""
        shift = self.W @ cause.gamma + random_effects @ cause.alpha
        log_h_at_T = self.basis_at_time @ cause.spline_coeffs + shift
        cumulative = np.exp(shift) * self.baseline_cumulative(cause.spline_coeffs)
        delta = self.delta[:, cause_index]
        return np.where(delta == 1, log_h_at_T, 0.0) - cumulative
