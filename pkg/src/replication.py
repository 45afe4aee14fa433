"""
Replication harness
-------------------
Simulate-then-fit loops over S datasets with per-replication derived seeds,
optionally fitting both model variants on the same data, aggregated into
bias / RMSE / coverage reports.
"""

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from dataset_io import collapse_causes
from diagnostics import gelman_rubin, replication_metrics, report_frame, summarize
from jmirt_architecture import ChainOutput, FitVariant, PosteriorSummary, ReplicationReport, SamplerSchedule
from mcmc_engine import FitData, run_chains
from simulator import TrueModel, simulate_dataset

logger = logging.getLogger("jmirt.replication")

FAILED_RHAT = 1.5


def derive_seed(master: int, index: int) -> int:
    """Seed of replication `index`, reproducible from the master seed alone."""
    digest = hashlib.sha256(f"{master}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def pooled_summary(chains: Sequence[ChainOutput]) -> PosteriorSummary:
    return summarize(np.vstack([c.draws for c in chains]), chains[0].parameter_names)


def fit_failure(chains: Sequence[ChainOutput]) -> Optional[str]:
    """Reason a fit counts as failed, or None."""
    for chain in chains:
        if not np.all(np.isfinite(chain.draws)):
            return "non-finite draws"
    if len(chains) >= 2:
        worst = max(
            gelman_rubin([c.draws[:, j] for c in chains]) for j in range(len(chains[0].parameter_names))
        )
        if worst > FAILED_RHAT:
            return f"R-hat {worst:.2f} above {FAILED_RHAT}"
    return None


@dataclass
class ReplicationOutcome:
    index: int
    seed: int
    summaries: Dict[FitVariant, Optional[PosteriorSummary]] = field(default_factory=dict)
    failures: Dict[FitVariant, str] = field(default_factory=dict)


def run_replication(
    model: TrueModel,
    index: int,
    master_seed: int,
    n_subjects: Optional[int] = None,
    variants: Sequence[FitVariant] = (FitVariant.EXT,),
    n_chains: int = 1,
    schedule: Optional[SamplerSchedule] = None,
) -> ReplicationOutcome:
    """Simulate one dataset and fit every requested variant to it."""
    seed = derive_seed(master_seed, index)
    logger.debug(f"Replication {index}: seed {seed}")
    outcome = ReplicationOutcome(index=index, seed=seed)
    dataset = simulate_dataset(model, n_subjects, seed)
    for variant in variants:
        spec = model.spec(variant)
        if schedule is not None:
            spec = replace(spec, schedule=schedule)
        data = dataset if variant == FitVariant.EXT else collapse_causes(dataset)
        try:
            chains = run_chains(FitData(data, spec), n_chains=n_chains, seed=seed)
            reason = fit_failure(chains)
        except Exception as e:
            reason = f"{type(e).__name__}: {e}"
        if reason:
            logger.warning(f"Replication {index} ({variant.value}) failed: {reason}")
            outcome.summaries[variant] = None
            outcome.failures[variant] = reason
        else:
            outcome.summaries[variant] = pooled_summary(chains)
    return outcome


def run_replications(
    model: TrueModel,
    n_replications: int,
    master_seed: int,
    n_subjects: Optional[int] = None,
    variants: Sequence[FitVariant] = (FitVariant.EXT,),
    n_chains: int = 1,
    workers: int = 1,
    schedule: Optional[SamplerSchedule] = None,
) -> Dict[FitVariant, ReplicationReport]:
    """
    Run S replications (in worker processes when workers > 1) and aggregate one
    report per fitted variant. Outcomes are ordered by replication index.
    """
    if n_replications < 2:
        raise ValueError("at least two replications are required")
    args = [(model, i, master_seed, n_subjects, tuple(variants), n_chains, schedule) for i in range(n_replications)]
    if workers <= 1:
        outcomes = [run_replication(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_replication, *a) for a in args]
            outcomes = [f.result() for f in futures]
    outcomes.sort(key=lambda o: o.index)

    reports = {}
    for variant in variants:
        summaries: List[PosteriorSummary] = [o.summaries[variant] for o in outcomes if o.summaries.get(variant)]
        n_failed = len(outcomes) - len(summaries)
        reports[variant] = replication_metrics(summaries, model.truth(variant), n_failed=n_failed)
        logger.info(
            f"{variant.value}: {len(summaries)} successful replications, {n_failed} failed."
        )
    return reports


def write_report(report: ReplicationReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_frame(report).to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote replication report to {path}.")
    return path
