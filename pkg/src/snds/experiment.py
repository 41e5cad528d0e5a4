"""Config-driven experiment runs: dataset construction, dispatch and artifacts."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from snds import __version__
from snds.active import ActiveLearner, run_active_snds, run_fixed_depth_baseline
from snds.checkpoint import save_checkpoint
from snds.config import ExperimentConfig, to_ini
from snds.data import Dataset, load_bundled_mnist, load_cifar10, load_mnist, make_blobs, make_depth_task
from snds.errors import ConfigError

OUTPUT_ROOT_ENV = "SNDS_OUTPUT_ROOT"
MNIST_DIR_ENV = "SNDS_MNIST_DIR"


def _subsample(x, y, size, rng):
    if not size or size >= len(y):
        return x, y
    keep = np.sort(rng.choice(len(y), size, replace=False))
    return x[keep], y[keep]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Dataset named by the config, with the pool (train split) cut to ``pool_size``."""
    classes = cfg.classes or None
    if cfg.dataset == "depth-task":
        ds = make_depth_task(cfg.synthetic_n, cfg.seed, n_test=cfg.test_size)
    elif cfg.dataset == "blobs":
        ds = make_blobs(cfg.blob_classes, cfg.synthetic_n, cfg.blob_spread, cfg.seed, n_test=cfg.test_size)
    elif cfg.dataset == "mnist-bundled":
        ds = load_bundled_mnist(classes, test_size=cfg.test_size, seed=cfg.seed)
    elif cfg.dataset == "mnist":
        directory = cfg.data_dir or os.environ.get(MNIST_DIR_ENV, "")
        if not directory:
            raise ConfigError(f"MNIST needs data.data_dir or ${MNIST_DIR_ENV}", "data.data_dir")
        ds = load_mnist(directory, classes)
    else:
        if not cfg.data_dir:
            raise ConfigError("CIFAR-10 needs data.data_dir", "data.data_dir")
        ds = load_cifar10(cfg.data_dir, classes, augment=cfg.augment)
    rng = np.random.default_rng([cfg.seed, 0])
    ds.x_train, ds.y_train = _subsample(ds.x_train, ds.y_train, cfg.pool_size, rng)
    if cfg.dataset in ("mnist", "cifar10"):
        ds.x_test, ds.y_test = _subsample(ds.x_test, ds.y_test, cfg.test_size, rng)
    ds.augment = cfg.augment and ds.x_train.ndim == 4
    return ds


def resolve_output_dir(cfg: ExperimentConfig, root: str | os.PathLike | None = None) -> Path:
    """``output_dir`` under ``$SNDS_OUTPUT_ROOT`` (default: the working directory) unless absolute."""
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = Path(root if root is not None else os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
    return out


def summarise(learner: ActiveLearner) -> dict:
    last = learner.records[-1]
    return {
        "version": __version__,
        "mode": learner.cfg.mode,
        "strategy": learner.cfg.strategy,
        "seed": learner.cfg.seed,
        "cycles": len(learner.records),
        "final_accuracy": last.test_accuracy,
        "final_lambda": last.lam,
        "final_d_max": last.d_max,
        "final_mode_depth": last.mode_depth,
        "labeled_final": len(learner.labeled),
        "layers": learner.net.depth,
        "wall_seconds": round(sum(r.wall_time for r in learner.records), 3),
    }


def run_experiment(cfg: ExperimentConfig, output_dir: Path, dataset: Dataset | None = None) -> dict:
    """Run ``cfg`` and write every artifact into ``output_dir``; returns the summary."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "config.ini").write_text(to_ini(cfg, header=f"snds {__version__}"))
    ds = dataset if dataset is not None else build_dataset(cfg)
    runner = run_fixed_depth_baseline if cfg.mode == "fixed" else run_active_snds
    learner = runner(cfg, ds, output_dir)
    if cfg.checkpoint:
        save_checkpoint(output_dir / "checkpoint.npz", learner.net, learner.posterior, learner.sampler.all_counts)
    summary = summarise(learner)
    (output_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
