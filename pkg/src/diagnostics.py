"""
Diagnostics
-----------
Convergence checks (Geweke, Gelman-Rubin), posterior summaries, replication
metrics (bias, RMSE, coverage), and the curves exported for plotting: response
profiles over time and nonparametric cumulative incidence per cause.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from bspline_hazard import BSplineBasis
from grm import category_probs
from jmirt_architecture import (
    ConfigurationError,
    ModelSpec,
    ParameterState,
    PosteriorSummary,
    ReplicationReport,
    ReplicationRow,
    SubjectData,
)
from latent_process import build_design, eta

logger = logging.getLogger("jmirt.diagnostics")

BARTLETT_LAG_FRACTION = 0.04
MIN_SUMMARY_DRAWS = 40


@dataclass
class GewekeResult:
    """z is None when both chain segments have zero spectral variance."""

    z: Optional[float]
    degenerate: bool = False

    def flagged(self, threshold: float = 1.96) -> bool:
        return not self.degenerate and abs(self.z) > threshold


def spectral_density_at_zero(x: np.ndarray, lag_fraction: float = BARTLETT_LAG_FRACTION) -> float:
    """Bartlett-window estimate of the spectral density at frequency zero."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    centred = x - x.mean()
    max_lag = max(1, int(lag_fraction * n))
    value = np.dot(centred, centred) / n
    for k in range(1, min(max_lag, n - 1) + 1):
        weight = 1.0 - k / (max_lag + 1.0)
        value += 2.0 * weight * np.dot(centred[:-k], centred[k:]) / n
    return float(value)


def ar_spectral_density_at_zero(x: np.ndarray, max_order: Optional[int] = None) -> float:
    """
    Spectral density at zero of a Yule-Walker autoregression, order chosen by AIC
    up to 10 log10(n) (Durbin-Levinson recursion).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if max_order is None:
        max_order = min(n - 1, int(10 * np.log10(n)))
    centred = x - x.mean()
    acov = np.array([np.dot(centred[: n - k], centred[k:]) / n for k in range(max_order + 1)])
    if acov[0] <= 0:
        return 0.0
    best_aic, best_sigma2, best_phi = n * np.log(acov[0]), acov[0], np.zeros(0)
    phi, sigma2 = np.zeros(0), acov[0]
    for p in range(1, max_order + 1):
        reflection = (acov[p] - phi @ acov[p - 1:0:-1]) / sigma2
        phi = np.append(phi - reflection * phi[::-1], reflection)
        sigma2 *= 1.0 - reflection**2
        if sigma2 <= 0:
            break
        aic = n * np.log(sigma2) + 2 * p
        if aic < best_aic:
            best_aic, best_sigma2, best_phi = aic, sigma2, phi.copy()
    return float(best_sigma2 / (1.0 - best_phi.sum()) ** 2)


SPECTRAL_ESTIMATORS = {"ar": ar_spectral_density_at_zero, "bartlett": spectral_density_at_zero}


def geweke(chain: np.ndarray, frac_first: float = 0.1, frac_last: float = 0.5, spectrum: str = "ar") -> GewekeResult:
    """
    z = (mean_first - mean_last) / sqrt(S_first(0) / n_first + S_last(0) / n_last).

    spectrum picks the estimator of S(0): "ar" (default) or "bartlett" (4% lag window).
    """
    if spectrum not in SPECTRAL_ESTIMATORS:
        raise ConfigurationError(f"unknown spectral estimator '{spectrum}'")
    density = SPECTRAL_ESTIMATORS[spectrum]
    chain = np.asarray(chain, dtype=float).reshape(-1)
    if len(chain) < 100:
        raise ConfigurationError(f"Geweke needs at least 100 draws, got {len(chain)}")
    if not (0 < frac_first and 0 < frac_last and frac_first + frac_last <= 1):
        raise ConfigurationError("segment fractions must be positive and sum to at most 1")
    n_first = int(frac_first * len(chain))
    n_last = int(frac_last * len(chain))
    first, last = chain[:n_first], chain[len(chain) - n_last:]
    if np.ptp(first) == 0 and np.ptp(last) == 0:
        return GewekeResult(z=None, degenerate=True)
    variance = density(first) / n_first + density(last) / n_last
    if variance <= 0 or not np.isfinite(variance):
        return GewekeResult(z=None, degenerate=True)
    return GewekeResult(z=float((first.mean() - last.mean()) / np.sqrt(variance)))


def gelman_rubin(chains: Sequence[np.ndarray]) -> float:
    """Potential scale reduction factor of one parameter over m >= 2 equal-length chains."""
    if len(chains) < 2:
        raise ConfigurationError("Gelman-Rubin needs at least two chains")
    chains = np.array([np.asarray(c, dtype=float).reshape(-1) for c in chains])
    m, n = chains.shape
    W = np.mean(np.var(chains, axis=1, ddof=1))
    means = chains.mean(axis=1)
    B = n / (m - 1.0) * np.sum((means - means.mean()) ** 2)
    if W <= 0:
        return 1.0 if B <= 0 else float("inf")
    V = W * (n - 1.0) / n + B * (m + 1.0) / (m * n)
    return float(np.sqrt(V / W))


def summarize(draws: np.ndarray, parameter_names: Sequence[str]) -> PosteriorSummary:
    """Mean, sd and the 2.5% / 97.5% quantiles (linear interpolation) of each column."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < MIN_SUMMARY_DRAWS:
        logger.warning(f"Summarizing only {draws.shape[0]} draws.")
    lower, upper = np.quantile(draws, [0.025, 0.975], axis=0, method="linear")
    return PosteriorSummary(
        parameter_names=list(parameter_names),
        mean=draws.mean(axis=0),
        sd=draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1]),
        lower=lower,
        upper=upper,
    )


def replication_metrics(
    summaries: Sequence[PosteriorSummary],
    truths: Mapping[str, Optional[float]],
    n_failed: int = 0,
) -> ReplicationReport:
    """
    bias = mean(est) - truth, RMSE = sqrt(mean((est - truth)^2)), COV = share of
    95% intervals containing the truth. Parameters without a truth get only the
    mean estimate.
    """
    if not summaries:
        raise ConfigurationError("no successful replications to aggregate")
    if len(summaries) < 2:
        logger.warning("Replication metrics from a single successful replication.")
    rows = []
    for name, truth in truths.items():
        present = [s for s in summaries if name in s.parameter_names]
        if not present:
            continue
        estimates = np.array([s.mean[s.index(name)] for s in present])
        lower = np.array([s.lower[s.index(name)] for s in present])
        upper = np.array([s.upper[s.index(name)] for s in present])
        if truth is None:
            bias = rmse = coverage = float("nan")
        else:
            bias = float(np.mean(estimates) - truth)
            rmse = float(np.sqrt(np.mean((estimates - truth) ** 2)))
            coverage = float(np.mean((lower <= truth) & (truth <= upper)))
        rows.append(
            ReplicationRow(
                parameter=name,
                true_value=truth,
                bias=bias,
                rmse=rmse,
                coverage=coverage,
                mean_estimate=float(np.mean(estimates)),
                n_used=len(present),
            )
        )
    return ReplicationReport(rows=rows, n_replications=len(summaries) + n_failed, n_failed=n_failed)


def report_frame(report: ReplicationReport) -> pd.DataFrame:
    """Replication report as a table with the columns parameter, True, Bias, RMSE, COV, Est."""
    return pd.DataFrame(
        [
            {
                "parameter": r.parameter,
                "True": r.true_value,
                "Bias": r.bias,
                "RMSE": r.rmse,
                "COV": r.coverage,
                "Est.": r.mean_estimate,
            }
            for r in report.rows
        ],
        columns=["parameter", "True", "Bias", "RMSE", "COV", "Est."],
    )


def diagnose_chains(chains: Sequence[np.ndarray], parameter_names: Sequence[str]) -> pd.DataFrame:
    """
    Per-parameter Geweke z of every chain and R-hat when there are several chains.

    chains: one (draws, parameters) matrix per chain, columns in parameter_names order.
    """
    rows = []
    for j, name in enumerate(parameter_names):
        row: Dict = {"parameter": name}
        flagged = degenerate = False
        for c, draws in enumerate(chains):
            result = geweke(draws[:, j])
            row[f"geweke_{c + 1}"] = result.z
            flagged = flagged or result.flagged()
            degenerate = degenerate or result.degenerate
        if len(chains) >= 2:
            row["rhat"] = gelman_rubin([draws[:, j] for draws in chains])
            flagged = flagged or row["rhat"] > 1.1
        row["degenerate"] = degenerate
        row["flagged"] = flagged
        rows.append(row)
    return pd.DataFrame(rows)


def response_profile(
    state: ParameterState,
    spec: ModelSpec,
    basis: BSplineBasis,
    item: int,
    times: Sequence[float],
    covariates: Sequence[float],
) -> pd.DataFrame:
    """
    Category probabilities of one item (1-based) over time for an average
    subject (b = 0) with the given baseline covariates.
    """
    if not 1 <= item <= spec.n_items:
        raise ConfigurationError(f"item {item} outside 1..{spec.n_items}")
    params = state.items[item - 1]
    hazard_state = [(basis, cause.spline_coeffs) for cause in state.causes]
    subject = SubjectData(
        id=0,
        visit_times=[],
        responses=np.zeros((0, spec.n_items), dtype=int),
        baseline_covariates=covariates,
        observed_time=basis.domain_max,
        cause_indicators=np.zeros(spec.n_causes, dtype=int),
    )
    rows = []
    for t in times:
        rows_t = build_design(spec, subject, float(t), hazard_state)
        value = eta(rows_t, state.beta, state.lam, np.zeros(spec.n_random))
        probs = category_probs(params, value)
        rows.append({"time": float(t), "eta": value, **{f"p{l + 1}": p for l, p in enumerate(probs)}})
    return pd.DataFrame(rows)


def cumulative_incidence(dataset: Sequence[SubjectData], times: Sequence[float]) -> pd.DataFrame:
    """
    Aalen-Johansen cumulative incidence of each cause evaluated at the given times:
    F_p(t) = sum over event times s <= t of S(s-) d_p(s) / n(s).
    """
    if not dataset:
        raise ConfigurationError("cumulative incidence of an empty dataset")
    observed = np.array([s.observed_time for s in dataset])
    causes = np.array([s.cause_indicators for s in dataset], dtype=int)
    n_causes = causes.shape[1]
    event_times = np.unique(observed[causes.sum(axis=1) > 0])

    survival = 1.0
    steps: List[np.ndarray] = []
    increments = np.zeros(n_causes)
    for s in event_times:
        at_risk = np.sum(observed >= s)
        at_s = observed == s
        d = causes[at_s].sum(axis=0)
        increments = increments + survival * d / at_risk
        steps.append(increments.copy())
        survival *= 1.0 - d.sum() / at_risk
    table = np.array(steps).reshape(len(event_times), n_causes)

    grid = np.asarray(times, dtype=float)
    positions = np.searchsorted(event_times, grid, side="right") - 1
    values = np.zeros((len(grid), n_causes))
    if len(table):
        values = np.where(positions[:, None] >= 0, table[np.maximum(positions, 0)], 0.0)
    frame = pd.DataFrame(values, columns=[f"cause_{p + 1}" for p in range(n_causes)])
    frame.insert(0, "time", grid)
    return frame
