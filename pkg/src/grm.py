"""
Graded response model
---------------------
Cumulative logits P(y >= l + 1 | eta) = expit(a * eta + d_l), l = 1..L-1, with
strictly decreasing thresholds d_1 > ... > d_{L-1}. Category probabilities are
differences of adjacent cumulative probabilities, evaluated on the log scale as

    log(expit(u) - expit(v)) = log_expit(u) + log_expit(-v) + log(1 - exp(v - u))

which stays finite for any finite eta.
"""

from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from jmirt_architecture import DomainRangeError, ItemParams


def cumulative_prob(item: ItemParams, eta: float, level: int) -> float:
    """P(y >= level | eta) for level in 1..L_k + 1."""
    n_categories = item.n_categories
    if not 1 <= level <= n_categories + 1:
        raise DomainRangeError(f"level {level} outside 1..{n_categories + 1}")
    if level == 1:
        return 1.0
    if level == n_categories + 1:
        return 0.0
    return float(expit(item.a * eta + item.thresholds[level - 2]))


def _log_interval_prob(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return log_expit(upper) + log_expit(-lower) + np.log(-np.expm1(lower - upper))


def _padded_thresholds(item: ItemParams) -> np.ndarray:
    return np.concatenate([[np.inf], item.thresholds, [-np.inf]])


def log_category_probs_item(item: ItemParams, eta: float) -> np.ndarray:
    """Log probabilities of categories 1..L_k at one eta."""
    bounds = item.a * eta + _padded_thresholds(item)
    return _log_interval_prob(bounds[:-1], bounds[1:])


def category_probs(item: ItemParams, eta: float) -> np.ndarray:
    """P(y = l | eta) for l = 1..L_k."""
    return np.exp(log_category_probs_item(item, eta))


def log_lik_item(y: int, item: ItemParams, eta: float) -> float:
    """log P(y | eta) for one observed category."""
    if not 1 <= y <= item.n_categories:
        raise DomainRangeError(f"category {y} outside 1..{item.n_categories}")
    bounds = _padded_thresholds(item)
    upper = item.a * eta + bounds[y - 1]
    lower = item.a * eta + bounds[y]
    return float(_log_interval_prob(np.float64(upper), np.float64(lower)))


def sample_category(item: ItemParams, eta: float, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a category from category_probs."""
    cdf = np.cumsum(category_probs(item, eta))
    index = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(index, item.n_categories - 1) + 1


def threshold_table(items: Sequence[ItemParams]) -> np.ndarray:
    """
    K x (L_max + 1) table of category boundaries: column 0 is +inf, then the
    item's thresholds, then -inf padding up to the widest item.
    """
    width = max(item.n_categories for item in items) + 1
    table = np.full((len(items), width), -np.inf)
    table[:, 0] = np.inf
    for k, item in enumerate(items):
        table[k, 1 : item.n_categories] = item.thresholds
    return table


def log_category_probs(
    categories: np.ndarray,
    item_index: np.ndarray,
    eta: np.ndarray,
    discriminations: np.ndarray,
    table: np.ndarray,
) -> np.ndarray:
    """
    Vectorized log P(y_o | eta_o) over observations o.

    categories are 1-based, item_index 0-based, eta already expanded per observation.
    """
    a = discriminations[item_index]
    upper = a * eta + table[item_index, categories - 1]
    lower = a * eta + table[item_index, categories]
    return _log_interval_prob(upper, lower)
