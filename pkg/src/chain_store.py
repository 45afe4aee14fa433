"""
Chain Store
-----------
Persistence of chains and summaries. A chain is written as ``<prefix>.csv``
(one column per monitored parameter) and a ``<prefix>.json`` sidecar holding
the seed, schedule, acceptance rates, proposal covariances and the posterior
mean of the random effects.
"""

import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from jmirt_architecture import ChainOutput, PosteriorSummary, SamplerSchedule

logger = logging.getLogger("jmirt.store")

SUMMARY_COLUMNS = ["parameter", "mean", "sd", "lower", "upper"]


def chain_paths(prefix) -> Tuple[Path, Path]:
    prefix = str(prefix)
    if prefix.endswith(".csv"):
        prefix = prefix[: -len(".csv")]
    return Path(f"{prefix}.csv"), Path(f"{prefix}.json")


def write_chain(chain: ChainOutput, prefix) -> Tuple[Path, Path]:
    """Write draws and the metadata sidecar; returns both paths."""
    csv_path, json_path = chain_paths(prefix)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(chain.draws, columns=chain.parameter_names).to_csv(
        csv_path, index=False, lineterminator="\n"
    )
    sidecar = chain.metadata_dict()
    if chain.random_effects_mean is not None:
        sidecar["random_effects_mean"] = np.asarray(chain.random_effects_mean).tolist()
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(sidecar, indent=2))
    if chain.random_effects_draws is not None:
        np.save(csv_path.with_name(csv_path.stem + "_b.npy"), chain.random_effects_draws)
    logger.info(f"Wrote {chain.n_draws} draws to {csv_path}.")
    return csv_path, json_path


def read_chain(prefix) -> ChainOutput:
    """
    Read a chain written by write_chain. A CSV without its sidecar is accepted
    (e.g. draws exported by another tool) with an unknown seed and a plain schedule.
    """
    csv_path, json_path = chain_paths(prefix)
    if not csv_path.exists():
        raise FileNotFoundError(f"chain file not found: {csv_path}")
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    draws = frame.to_numpy(dtype=float)
    if json_path.exists():
        with open(json_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    else:
        logger.warning(f"No metadata sidecar next to {csv_path}; using defaults.")
        sidecar = {}
    schedule = (
        SamplerSchedule(**sidecar["schedule"])
        if "schedule" in sidecar
        else SamplerSchedule(adaptive=0, burn_in=0, iterations=max(len(draws), 1), thin=1)
    )
    b_mean = sidecar.get("random_effects_mean")
    b_draws_path = csv_path.with_name(csv_path.stem + "_b.npy")
    return ChainOutput(
        parameter_names=list(frame.columns),
        draws=draws,
        acceptance_rates=sidecar.get("acceptance_rates", {}),
        proposal_covariances=sidecar.get("proposal_covariances", {}),
        seed=sidecar.get("seed", -1),
        schedule=schedule,
        random_effects_mean=np.array(b_mean) if b_mean is not None else None,
        random_effects_draws=np.load(b_draws_path) if b_draws_path.exists() else None,
        metadata=sidecar.get("metadata", {}),
    )


def write_summary(summary: PosteriorSummary, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "parameter": summary.parameter_names,
            "mean": summary.mean,
            "sd": summary.sd,
            "lower": summary.lower,
            "upper": summary.upper,
        },
        columns=SUMMARY_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote posterior summary of {len(summary.parameter_names)} parameters to {path}.")
    return path


def read_summary(path) -> PosteriorSummary:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"summary file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    return PosteriorSummary(
        parameter_names=frame["parameter"].tolist(),
        mean=frame["mean"].to_numpy(dtype=float),
        sd=frame["sd"].to_numpy(dtype=float),
        lower=frame["lower"].to_numpy(dtype=float),
        upper=frame["upper"].to_numpy(dtype=float),
    )
