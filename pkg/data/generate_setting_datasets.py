import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dataset_io import write_dataset
from simulator import SETTING_LABELS, setting, simulate_dataset, with_random_items, write_manifest


def generate_setting_datasets(labels=SETTING_LABELS, n_subjects=500, seeds=range(1, 6), output_dir="simulated"):
    """One dataset per (setting, seed) with its truth manifest."""
    written = []
    for label in labels:
        model = setting(label)
        for seed in seeds:
            prefix = os.path.join(output_dir, f"setting_{label}_n{n_subjects}_seed{seed}")
            write_dataset(simulate_dataset(model, n_subjects, seed), prefix)
            write_manifest(model, f"{prefix}_truth.json", seed, n_subjects)
            written.append(prefix)
    return written


def generate_random_item_datasets(n_datasets=5, n_subjects=500, output_dir="simulated"):
    # Setting I hazards and fixed effects, fresh item parameters per dataset
    written = []
    for seed in range(1, n_datasets + 1):
        model = with_random_items(setting("I"), seed)
        prefix = os.path.join(output_dir, f"random_items_n{n_subjects}_seed{seed}")
        write_dataset(simulate_dataset(model, n_subjects, seed), prefix)
        write_manifest(model, f"{prefix}_truth.json", seed, n_subjects, extra={"random_items": True})
        written.append(prefix)
    return written


def main():
    generate_setting_datasets()
    generate_random_item_datasets()


if __name__ == "__main__":
    main()
