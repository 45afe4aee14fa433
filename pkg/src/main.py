import argparse, json, time, logging, sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from chain_store import read_chain, write_chain, write_summary
from dataset_io import collapse_causes, read_dataset, write_dataset
from dataset_validator import validate
from diagnostics import cumulative_incidence, diagnose_chains, gelman_rubin, response_profile
from jmirt_architecture import (
    ConfigurationError,
    DatasetValidationError,
    FitVariant,
    InitializationError,
    JmirtError,
    ModelSpec,
    NumericError,
    SubjectData,
)
from mcmc_engine import FitData, run_chains, state_from_summary
from model_config import RunConfig, default_model_spec, load_model_spec, load_run_config, resolve_schedule
from replication import pooled_summary, run_replications, write_report
from simulator import SETTING_LABELS, setting, simulate_dataset, with_random_items, write_manifest

# Configure logging
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger("jmirt")

PROFILE_POINTS = 101


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="jmirt: Bayesian joint IRT and competing-risks modelling")
    parser.add_argument("--run-config", help="JSON or TOML file with run defaults (flags override it)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="Master seed")
        p.add_argument("-o", "--output", dest="output_dir", default=None, help="Output directory")
        p.add_argument("--format", dest="data_format", choices=["csv", "json"], default=None)

    def sampler(p):
        p.add_argument("--model-spec", dest="model_spec_path", default=None, help="ModelSpec JSON/TOML file")
        p.add_argument(
            "--model", dest="variant", choices=[v.value for v in FitVariant], default=None,
            help="Fitted model variant (default extJMIRT)",
        )
        p.add_argument("--chains", type=int, default=None, help="Number of chains")
        p.add_argument("--workers", type=int, default=None, help="Worker processes")
        p.add_argument("--adaptive", type=int, default=None, help="Adaptive iterations A")
        p.add_argument("--burn-in", dest="burn_in", type=int, default=None, help="Burn-in iterations B")
        p.add_argument("--iterations", type=int, default=None, help="Sampling iterations I")
        p.add_argument("--thin", type=int, default=None, help="Thinning factor T")

    p_sim = sub.add_parser("simulate", help="Simulate a dataset from a setting")
    common(p_sim)
    p_sim.add_argument("--setting", choices=SETTING_LABELS, default=None)
    p_sim.add_argument("--n", dest="n_subjects", type=int, default=None, help="Number of subjects")
    p_sim.add_argument("--random-items", dest="random_items", action="store_true", default=None)

    p_fit = sub.add_parser("fit", help="Fit the joint model to a dataset")
    common(p_fit)
    sampler(p_fit)
    p_fit.add_argument("-d", "--data", dest="data_path", default=None, help="Dataset prefix (csv) or file (json)")
    p_fit.add_argument("--emit-profile", dest="emit_profile", action="store_true", default=None)
    p_fit.add_argument("--profile-item", dest="profile_item", type=int, default=None)

    p_diag = sub.add_parser("diagnose", help="Convergence diagnostics of chain files")
    common(p_diag)
    p_diag.add_argument("chain_files", nargs="+", help="Chain CSV files (or prefixes)")
    p_diag.add_argument("-d", "--data", dest="data_path", default=None, help="Dataset for --incidence")
    p_diag.add_argument("--incidence", action="store_true", default=None, help="Export cumulative incidence")
    p_diag.add_argument("--trace", action="store_true", default=None, help="Export trace data")

    p_rep = sub.add_parser("replicate", help="Simulate-and-fit replication study")
    common(p_rep)
    sampler(p_rep)
    p_rep.add_argument("--setting", choices=SETTING_LABELS, default=None)
    p_rep.add_argument("--n", dest="n_subjects", type=int, default=None, help="Subjects per dataset")
    p_rep.add_argument("--replications", type=int, default=None, help="Number of replications S")
    p_rep.add_argument("--compare-simple", dest="compare_simple", action="store_true", default=None)
    p_rep.add_argument("--random-items", dest="random_items", action="store_true", default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = dict(vars(args))
    run_config_path = values.pop("run_config", None)
    values.pop("verbose", None)
    values["schedule_overrides"] = {
        key: values.pop(key, None) for key in ("adaptive", "burn_in", "iterations", "thin")
    }
    return load_run_config(values, run_config_path)


# --- Subcommands ---
def cmd_simulate(config: RunConfig) -> int:
    seed = config.require_seed()
    label = config.setting or "I"
    model = setting(label)
    if config.random_items:
        model = with_random_items(model, seed)
    logger.info(f"Simulating {config.n_subjects} subjects from setting {label} (seed {seed})...")
    dataset = simulate_dataset(model, config.n_subjects, seed)
    output_dir = Path(config.output_dir)
    prefix = output_dir / f"setting_{label}_n{config.n_subjects}_seed{seed}"
    target = prefix.with_suffix(".json") if config.data_format == "json" else prefix
    write_dataset(dataset, target, format=config.data_format)
    write_manifest(
        model,
        f"{prefix}_truth.json",
        seed,
        config.n_subjects,
        extra={"format": config.data_format, "random_items": bool(config.random_items)},
    )
    return 0


def _manifest_categories(data_path: str) -> Optional[List[int]]:
    """Categories per item from the truth manifest written next to a simulated dataset, if any."""
    path = Path(data_path)
    stem = path.with_suffix("") if path.suffix.lower() == ".json" else path
    manifest = Path(f"{stem}_truth.json")
    if not manifest.exists():
        return None
    with open(manifest, "r", encoding="utf-8") as f:
        items = json.load(f).get("model", {}).get("items", [])
    return [len(item["thresholds"]) + 1 for item in items] or None


def _fit_spec(config: RunConfig, dataset: List[SubjectData]) -> ModelSpec:
    if config.model_spec_path:
        return resolve_schedule(load_model_spec(config.model_spec_path), config)
    answered = [s for s in dataset if s.responses.size]
    n_items = answered[0].responses.shape[1] if answered else 3
    categories = _manifest_categories(config.data_path) if config.data_path else None
    if categories is not None and len(categories) == n_items:
        spec = replace(default_model_spec(config.variant, n_items=n_items), categories_per_item=categories)
        logger.info(f"Categories per item {categories} taken from the truth manifest.")
    else:
        n_categories = max(max((int(s.responses.max()) for s in answered), default=4), 2)
        logger.warning(
            f"No model spec given: assuming {n_categories} categories per item from the largest observed "
            "response. Pass --model-spec when a top category may be unobserved."
        )
        spec = default_model_spec(config.variant, n_items=n_items, n_categories=n_categories)
    return resolve_schedule(spec, config)


def cmd_fit(config: RunConfig) -> int:
    if not config.data_path:
        raise FileNotFoundError("fit needs a dataset (--data)")
    seed = config.seed if config.seed is not None else 0
    dataset = read_dataset(config.data_path, format=config.data_format)
    if config.variant == FitVariant.SIMPLE:
        dataset = collapse_causes(dataset)
    spec = _fit_spec(config, dataset)

    logger.info("Validating dataset...")
    report = validate(dataset, spec)
    if not report.is_valid:
        raise DatasetValidationError(report)
    logger.info("Dataset valid.")

    data = FitData(dataset, spec)
    logger.info(f"Fitting {config.variant.value} with {config.chains} chain(s), master seed {seed}...")
    chains = run_chains(data, n_chains=config.chains, seed=seed, workers=config.workers)

    output_dir = Path(config.output_dir)
    for c, chain in enumerate(chains):
        write_chain(chain, output_dir / f"chain_{c + 1}")
        logger.info(f"Chain {c + 1} acceptance rates: {chain.acceptance_rates}")
    summary = pooled_summary(chains)
    write_summary(summary, output_dir / "summary.csv")

    if len(chains) >= 2:
        names = chains[0].parameter_names
        rhat = pd.DataFrame(
            {"parameter": names, "rhat": [gelman_rubin([c.draws[:, j] for c in chains]) for j in range(len(names))]}
        )
        rhat.to_csv(output_dir / "rhat.csv", index=False, lineterminator="\n")
        logger.info(f"Maximum R-hat over {len(names)} parameters: {rhat['rhat'].max():.4f}")

    if config.emit_profile:
        state = state_from_summary(summary, spec, n_subjects=0)
        horizon = max(max(s.visit_times, default=0.0) for s in dataset)
        times = np.linspace(0.0, horizon, PROFILE_POINTS)
        profile = response_profile(
            state, spec, data.basis, config.profile_item, times, np.zeros(spec.n_baseline_covariates)
        )
        path = output_dir / f"profile_item{config.profile_item}.csv"
        profile.to_csv(path, index=False, lineterminator="\n")
        logger.info(f"Wrote response profile to {path}.")
    return 0


def cmd_diagnose(config: RunConfig) -> int:
    chains = [read_chain(path) for path in config.chain_files]
    names = chains[0].parameter_names
    for path, chain in zip(config.chain_files, chains):
        if chain.parameter_names != names:
            raise ConfigurationError(f"{path} monitors different parameters than {config.chain_files[0]}")
    table = diagnose_chains([c.draws for c in chains], names)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_dir / "diagnostics.csv", index=False, lineterminator="\n")
    flagged = table.loc[table["flagged"], "parameter"].tolist()
    degenerate = table.loc[table["degenerate"], "parameter"].tolist()
    if degenerate:
        logger.info(f"Constant parameters (no Geweke z): {degenerate}")
    if flagged:
        logger.warning(f"Flagged parameters: {flagged}")
    else:
        logger.info(f"No parameter flagged among {len(names)}.")

    if config.trace:
        frames = []
        for c, chain in enumerate(chains):
            frame = pd.DataFrame(chain.draws, columns=names)
            frame.insert(0, "draw", np.arange(1, chain.n_draws + 1))
            frame.insert(0, "chain", c + 1)
            frames.append(frame)
        pd.concat(frames, ignore_index=True).to_csv(output_dir / "trace.csv", index=False, lineterminator="\n")

    if config.incidence:
        if not config.data_path:
            raise FileNotFoundError("--incidence needs a dataset (--data)")
        dataset = read_dataset(config.data_path, format=config.data_format)
        horizon = max(s.observed_time for s in dataset)
        curves = cumulative_incidence(dataset, np.linspace(0.0, horizon, PROFILE_POINTS))
        curves.to_csv(output_dir / "incidence.csv", index=False, lineterminator="\n")
        logger.info(f"Wrote cumulative incidence of {len(curves.columns) - 1} cause(s).")
    return 0


def cmd_replicate(config: RunConfig) -> int:
    seed = config.require_seed()
    label = config.setting or "I"
    model = setting(label)
    if config.random_items:
        model = with_random_items(model, seed)
    if config.compare_simple or label == "III":
        variants = [FitVariant.EXT, FitVariant.SIMPLE]
    else:
        variants = [config.variant]
    schedule = resolve_schedule(model.spec(FitVariant.EXT), config).schedule
    logger.info(
        f"Replicating setting {label}: S={config.replications}, n={config.n_subjects}, "
        f"variants {[v.value for v in variants]}, master seed {seed}."
    )
    reports = run_replications(
        model,
        config.replications,
        seed,
        n_subjects=config.n_subjects,
        variants=variants,
        n_chains=config.chains,
        workers=config.workers,
        schedule=schedule,
    )
    output_dir = Path(config.output_dir)
    for variant, report in reports.items():
        stem = f"replication_{label}_{variant.value}"
        write_report(report, output_dir / f"{stem}.csv")
        with open(output_dir / f"{stem}.json", "w", encoding="utf-8") as f:
            f.write(json.dumps({"setting": label, "seed": seed, "variant": variant.value, **report.to_dict()}, indent=2))
        if report.n_failed:
            logger.warning(f"{variant.value}: {report.n_failed} of {report.n_replications} replications failed.")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "replicate": cmd_replicate,
}


def main(argv: Optional[List[str]] = None) -> int:
    start_time = time.time()  # Record the start time

    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = config_from_args(args)
    except (JmirtError, FileNotFoundError) as e:
        logger.error(f"Invalid configuration: {e}")
        return 1
    logger.setLevel(logging.DEBUG if args.verbose else config.log_level.upper())

    try:
        code = COMMANDS[config.subcommand](config)
    except DatasetValidationError as e:
        logger.error(f"Dataset failed validation: {e.report.describe()}")
        code = 1
    except (NumericError, InitializationError) as e:
        logger.error(f"Numerical failure: {e}")
        code = 2
    except (JmirtError, FileNotFoundError, PermissionError, IsADirectoryError) as e:
        logger.error(f"{config.subcommand} failed: {e}")
        code = 1
    except Exception as e:
        logger.error(f"Internal error during {config.subcommand}: {type(e).__name__}: {e}")
        code = 2

    end_time = time.time()  # Record the end time
    elapsed_time = end_time - start_time  # Calculate the elapsed time

    logger.info(f"Total execution time: {elapsed_time:.4f} seconds")
    return code


if __name__ == "__main__":
    sys.exit(main())
