"""
Latent process
--------------
Design rows of the latent trait

    eta_ij = x_i(t_ij)' beta + z_i(t_ij)' b_i + v(t_ij)' lambda

where v(t) stacks the current log baseline hazards of every cause, and the
mean-zero multivariate normal density of the random effects.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from bspline_hazard import BSplineBasis, eval_basis_matrix, log_h0
from jmirt_architecture import ConfigurationError, ModelSpec, NumericError, SubjectData

logger = logging.getLogger("jmirt.latent")

# One (basis, coefficients) pair per cause.
HazardState = Sequence[Tuple[BSplineBasis, np.ndarray]]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DesignRows:
    """x_i(t), z_i(t) and v(t) at one time point."""

    x: np.ndarray
    z: np.ndarray
    v: np.ndarray


def _visit_row(subject: SubjectData, t: float, visit_index: Optional[int]) -> int:
    if visit_index is not None:
        return visit_index
    hits = np.flatnonzero(subject.visit_times == t)
    if not len(hits):
        raise ConfigurationError(f"visit covariates requested at t={t}, which is not a visit of subject {subject.id}")
    return int(hits[0])


def fixed_effect_row(
    spec: ModelSpec, subject: SubjectData, t: float, visit_index: Optional[int] = None
) -> np.ndarray:
    design = spec.fixed_effects
    row: List[float] = []
    if design.intercept:
        row.append(1.0)
    if design.time_slope:
        row.append(float(t))
    row.extend(float(subject.baseline_covariates[c - 1]) for c in design.baseline_covariates)
    if design.visit_covariates:
        j = _visit_row(subject, t, visit_index)
        row.extend(float(subject.longitudinal_covariates[j, c - 1]) for c in design.visit_covariates)
    return np.array(row)


def random_effect_row(spec: ModelSpec, t: float) -> np.ndarray:
    design = spec.random_effects
    row = []
    if design.intercept:
        row.append(1.0)
    if design.time_slope:
        row.append(float(t))
    return np.array(row)


def build_design(
    spec: ModelSpec,
    subject: SubjectData,
    t: float,
    hazard_state: HazardState,
    visit_index: Optional[int] = None,
) -> DesignRows:
    """
    Assemble the design rows of one subject at time t.

    Args:
        hazard_state: per cause (basis, spline coefficients); v_p = log h0_p(t)
        visit_index: row of the subject's visit covariates, looked up from t when omitted

    Raises:
        DomainRangeError: t outside a hazard basis domain
    """
    if len(hazard_state) != spec.n_causes:
        raise ConfigurationError(f"{len(hazard_state)} hazard curves for {spec.n_causes} causes")
    v = np.array([log_h0(basis, coeffs, float(t)) for basis, coeffs in hazard_state])
    return DesignRows(
        x=fixed_effect_row(spec, subject, t, visit_index),
        z=random_effect_row(spec, t),
        v=v,
    )


def eta(rows: DesignRows, beta: np.ndarray, lam: np.ndarray, b: np.ndarray) -> float:
    """x' beta + z' b + v' lambda."""
    beta, lam, b = (np.asarray(arr, dtype=float).reshape(-1) for arr in (beta, lam, b))
    for name, row, coef in (("beta", rows.x, beta), ("lambda", rows.v, lam), ("b", rows.z, b)):
        if len(row) != len(coef):
            raise ConfigurationError(f"{name} has length {len(coef)}, design row has {len(row)}")
    return float(rows.x @ beta + rows.z @ b + rows.v @ lam)


def log_density_random_effects(b: np.ndarray, D: np.ndarray):
    """
    log N(b; 0, D) for one q-vector (returns a float) or an n x q matrix
    of random effects (returns one value per row).

    Raises:
        NumericError: D is not symmetric positive definite
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    b = np.asarray(b, dtype=float)
    single = b.ndim <= 1
    b = np.atleast_2d(b.reshape(1, -1) if single else b)
    q = D.shape[0]
    if b.shape[1] != q:
        raise ConfigurationError(f"random effects of length {b.shape[1]} for a {q}x{q} covariance")
    try:
        chol = cholesky(D, lower=True)
    except (LinAlgError, ValueError) as e:
        raise NumericError(f"random-effects covariance is not positive definite: {e}") from e
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    whitened = solve_triangular(chol, b.T, lower=True)
    values = -0.5 * (q * _LOG_2PI + log_det + np.sum(whitened**2, axis=0))
    return float(values[0]) if single else values


@dataclass(frozen=True, eq=False)
class StackedDesign:
    """
    Design rows of every visit of every subject, stacked in dataset order.

    subject_index maps each visit row back to its subject (0-based position).
    """

    X: np.ndarray
    Z: np.ndarray
    times: np.ndarray
    subject_index: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.times)


def stack_design(spec: ModelSpec, dataset: Sequence[SubjectData]) -> StackedDesign:
    """Fixed and random design rows at all visits, without the hazard part."""
    x_rows, z_rows, times, owners = [], [], [], []
    for i, subject in enumerate(dataset):
        for j, t in enumerate(subject.visit_times):
            x_rows.append(fixed_effect_row(spec, subject, t, visit_index=j))
            z_rows.append(random_effect_row(spec, t))
            times.append(t)
            owners.append(i)
    p, q = spec.n_fixed, spec.n_random
    return StackedDesign(
        X=np.array(x_rows).reshape(-1, p),
        Z=np.array(z_rows).reshape(-1, q),
        times=np.array(times, dtype=float),
        subject_index=np.array(owners, dtype=int),
    )


def hazard_covariates(basis: BSplineBasis, spline_coeffs: np.ndarray, times: np.ndarray) -> np.ndarray:
    """v(t) at many times for causes sharing one basis: (len(times), P)."""
    return eval_basis_matrix(basis, times) @ np.atleast_2d(spline_coeffs).T
