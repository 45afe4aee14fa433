"""
B-spline log baseline hazards
-----------------------------
Equidistant-knot B-spline bases on [0, domain_max], difference penalty matrices
for the roughness prior, and evaluation of log h0_p(t) = sum_u gamma_u B_u(t).
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Union

import numpy as np
from scipy.interpolate import BSpline

from jmirt_architecture import ConfigurationError, DomainRangeError

logger = logging.getLogger("jmirt.bspline")

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """Clamped B-spline basis with equidistant interior knots on [0, domain_max]."""

    degree: int
    knots: np.ndarray
    n_basis: int
    domain_max: float

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knots, 0 and domain_max included; h0 is smooth between consecutive ones."""
        return np.unique(self.knots)

    def to_dict(self) -> Dict:
        return {
            "degree": self.degree,
            "knots": self.knots.tolist(),
            "n_basis": self.n_basis,
            "domain_max": self.domain_max,
        }


@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """K = Delta_r' Delta_r and its numerical rank."""

    matrix: np.ndarray
    order: int
    rank: int

    def quadratic_form(self, coeffs: np.ndarray) -> float:
        coeffs = np.asarray(coeffs, dtype=float)
        return float(coeffs @ self.matrix @ coeffs)


def build_basis(domain_max: float, n_basis: int = 12, degree: int = 3) -> BSplineBasis:
    """
    Build n_basis B-splines of the given degree spanning [0, domain_max].

    The knot vector repeats each boundary degree + 1 times around
    n_basis - degree equal segments.
    """
    if not np.isfinite(domain_max) or domain_max <= 0:
        raise ConfigurationError(f"domain_max must be positive, got {domain_max}")
    if degree < 0:
        raise ConfigurationError("degree must be non-negative")
    if n_basis < degree + 1:
        raise ConfigurationError(f"n_basis ({n_basis}) must be at least degree + 1 ({degree + 1})")
    breakpoints = np.linspace(0.0, domain_max, n_basis - degree + 1)
    knots = np.concatenate([np.zeros(degree), breakpoints, np.full(degree, float(domain_max))])
    knots.setflags(write=False)
    return BSplineBasis(degree=degree, knots=knots, n_basis=n_basis, domain_max=float(domain_max))


def eval_basis_matrix(basis: BSplineBasis, t: ArrayLike) -> np.ndarray:
    """Evaluate every basis function at each t; returns a (len(t), n_basis) matrix."""
    t = np.atleast_1d(np.asarray(t, dtype=float)).reshape(-1)
    outside = ~((t >= 0.0) & (t <= basis.domain_max))
    if np.any(outside):
        raise DomainRangeError(
            f"t={t[outside][0]!r} outside the spline domain [0, {basis.domain_max}]"
        )
    if len(t) == 0:
        return np.zeros((0, basis.n_basis))
    return BSpline.design_matrix(t, basis.knots, basis.degree).toarray()


def eval_basis(basis: BSplineBasis, t: float) -> np.ndarray:
    """B_1(t), ..., B_U(t) at a single time point."""
    return eval_basis_matrix(basis, t)[0]


def log_h0(basis: BSplineBasis, coeffs: np.ndarray, t: ArrayLike) -> ArrayLike:
    """log h0(t) = B(t)' coeffs; scalar in, scalar out."""
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if len(coeffs) != basis.n_basis:
        raise ConfigurationError(f"{len(coeffs)} spline coefficients for {basis.n_basis} basis functions")
    values = eval_basis_matrix(basis, t) @ coeffs
    return float(values[0]) if np.ndim(t) == 0 else values


def penalty(n_basis: int, r: int = 2) -> PenaltyMatrix:
    """r-th order difference penalty K = Delta_r' Delta_r on n_basis coefficients."""
    if r < 1:
        raise ConfigurationError("penalty order must be at least 1")
    if n_basis <= r:
        raise ConfigurationError(f"n_basis ({n_basis}) must exceed the penalty order ({r})")
    delta = np.diff(np.eye(n_basis), n=r, axis=0)
    K = delta.T @ delta
    K.setflags(write=False)
    return PenaltyMatrix(matrix=K, order=r, rank=int(np.linalg.matrix_rank(K)))


def project_log_hazard(
    basis: BSplineBasis, log_hazard: Callable[[np.ndarray], np.ndarray], n_grid: int = 400
) -> np.ndarray:
    """Least-squares spline coefficients reproducing a closed-form log hazard on a grid."""
    grid = np.linspace(0.0, basis.domain_max, n_grid)
    coeffs, *_ = np.linalg.lstsq(eval_basis_matrix(basis, grid), log_hazard(grid), rcond=None)
    return coeffs
