"""
Dataset Validator
-----------------
This module checks observed subjects against a model specification and reports
every broken data invariant with the subject (and visit or item) it concerns.
Violations are returned as data; nothing here raises for a bad dataset.
"""

import logging
from typing import Iterable, List

import numpy as np

from jmirt_architecture import (
    MISSING_CATEGORY,
    DataViolation,
    ModelSpec,
    SubjectData,
    ValidationReport,
    ViolationType,
)

logger = logging.getLogger("jmirt.validator")


class DatasetValidator:
    """
    Validates a list of SubjectData against the counts and design of a ModelSpec.
    """

    def __init__(self, spec: ModelSpec):
        """
        Initialize the dataset validator.

        Args:
            spec: model specification providing K, L_k, P, G and the design columns
        """
        self.spec = spec
        self._max_categories = np.array(spec.categories_per_item)
        self._n_visit_covariates = max(spec.fixed_effects.visit_covariates, default=0)

    def validate(self, dataset: Iterable[SubjectData]) -> ValidationReport:
        """
        Validate every subject and collect all violations.

        Returns:
            ValidationReport; is_valid is True when no invariant is broken
        """
        report = ValidationReport()
        seen_ids = set()
        n_subjects = 0
        for subject in dataset:
            n_subjects += 1
            if subject.id in seen_ids:
                report.violations.append(
                    DataViolation(subject.id, ViolationType.DUPLICATE_ID, "duplicate subject id")
                )
            seen_ids.add(subject.id)
            report.violations.extend(self._check_subject(subject))
        logger.debug(f"Validated {n_subjects} subjects, {len(report.violations)} violations.")
        return report

    def _check_subject(self, subject: SubjectData) -> List[DataViolation]:
        violations = []
        violations.extend(self._check_dimensions(subject))
        violations.extend(self._check_times(subject))
        violations.extend(self._check_causes(subject))
        violations.extend(self._check_responses(subject))
        return violations

    def _check_dimensions(self, subject: SubjectData) -> List[DataViolation]:
        spec = self.spec
        problems = []
        if len(subject.cause_indicators) != spec.n_causes:
            problems.append(
                f"{len(subject.cause_indicators)} cause indicators, expected {spec.n_causes}"
            )
        if len(subject.baseline_covariates) != spec.n_baseline_covariates:
            problems.append(
                f"{len(subject.baseline_covariates)} baseline covariates, expected {spec.n_baseline_covariates}"
            )
        if subject.n_visits and subject.responses.shape != (subject.n_visits, spec.n_items):
            problems.append(
                f"responses shaped {subject.responses.shape}, expected ({subject.n_visits}, {spec.n_items})"
            )
        if subject.longitudinal_covariates.shape[1] < self._n_visit_covariates:
            problems.append(
                f"{subject.longitudinal_covariates.shape[1]} visit covariates, design uses {self._n_visit_covariates}"
            )
        return [DataViolation(subject.id, ViolationType.DIMENSION, p) for p in problems]

    def _check_times(self, subject: SubjectData) -> List[DataViolation]:
        violations = []
        values = np.concatenate(
            [subject.visit_times, [subject.observed_time], subject.baseline_covariates,
             subject.longitudinal_covariates.reshape(-1)]
        )
        if not np.all(np.isfinite(values)):
            violations.append(
                DataViolation(subject.id, ViolationType.NON_FINITE, "non-finite time or covariate")
            )
            return violations
        if subject.observed_time < 0 or np.any(subject.visit_times < 0):
            violations.append(
                DataViolation(subject.id, ViolationType.NEGATIVE_TIME, "negative time")
            )
        steps = np.diff(subject.visit_times)
        for j in np.flatnonzero(steps <= 0):
            violations.append(
                DataViolation(
                    subject.id,
                    ViolationType.VISIT_ORDER,
                    "visit times not strictly increasing",
                    visit_index=int(j) + 1,
                )
            )
        for j in np.flatnonzero(subject.visit_times > subject.observed_time):
            violations.append(
                DataViolation(
                    subject.id,
                    ViolationType.VISIT_AFTER_DROPOUT,
                    "visit after dropout",
                    visit_index=int(j),
                )
            )
        return violations

    def _check_causes(self, subject: SubjectData) -> List[DataViolation]:
        delta = subject.cause_indicators
        if np.any((delta != 0) & (delta != 1)):
            return [DataViolation(subject.id, ViolationType.MULTIPLE_CAUSES, "cause indicators must be 0/1")]
        if delta.sum() > 1:
            return [DataViolation(subject.id, ViolationType.MULTIPLE_CAUSES, "multiple causes")]
        return []

    def _check_responses(self, subject: SubjectData) -> List[DataViolation]:
        responses = subject.responses
        if responses.size == 0 or responses.shape[1] != self.spec.n_items:
            return []
        observed = responses != MISSING_CATEGORY
        out_of_range = observed & ((responses < 1) | (responses > self._max_categories[None, :]))
        return [
            DataViolation(
                subject.id,
                ViolationType.CATEGORY_RANGE,
                f"category {responses[j, k]} outside 1..{self._max_categories[k]} for item {k + 1}",
                visit_index=int(j),
                item_index=int(k),
            )
            for j, k in zip(*np.nonzero(out_of_range))
        ]


def validate(dataset: Iterable[SubjectData], spec: ModelSpec) -> ValidationReport:
    """Validate a dataset against a model specification."""
    return DatasetValidator(spec).validate(dataset)
