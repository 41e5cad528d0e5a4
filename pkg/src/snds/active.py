"""Pool-based active learning around a depth-searching growing network.

Each cycle trains on the labeled set for ``epochs`` epochs, evaluates the
posterior mixture on the test split, then acquires the next batch.  Within a
cycle, ``d_max`` is recomputed from lambda at the start of every
``recompute_stride``-th epoch and the network grows to match.

Training modes:

* ``snds``: pseudo-uniform shared-weight steps for the first ``ceil(T/3)``
  epochs, then the variational loss (``vi_loss``) on weights and lambda.
* ``meanfield``: the mean-field loss on weights and lambda for every epoch.
* ``fixed``: plain cross-entropy at ``fixed_depth``; lambda is never trained.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from snds import autodiff as ad
from snds.config import ExperimentConfig
from snds.data import Dataset, augment_batch
from snds.errors import BudgetError, ConfigError, CycleError
from snds.losses import DepthSampler, meanfield_loss, svi_loss, uniform_phase_step
from snds.network import GrowingNetwork, NetworkSpec, _batches, features_at_mode, predict_mixture
from snds.posterior import DepthPrior, TruncatedPoissonPosterior, mode_depth

CYCLE_COLUMNS = ("cycle", "labeled_count", "lambda", "d_max", "mode_depth", "test_acc", "seconds")
EPOCH_COLUMNS = ("cycle", "epoch", "phase", "total", "expected_ce", "kl_depth", "kl_weights")
DEPTH_COLUMNS = ("cycle", "epoch", "lambda", "d_max", "layers_before", "layers_after")
TIMING_COLUMNS = ("cycle", "train_seconds", "acquire_seconds", "eval_seconds")


class Pool:
    """Unlabeled samples whose labels are handed out only through :meth:`reveal`."""

    def __init__(self, samples: np.ndarray, labels: np.ndarray):
        if len(samples) != len(labels):
            raise BudgetError(f"pool has {len(samples)} samples but {len(labels)} labels")
        self.samples = samples
        self._labels = np.asarray(labels)
        self.acquired = np.zeros(len(samples), dtype=bool)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def remaining(self) -> int:
        return int((~self.acquired).sum())

    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.acquired)

    def check_budget(self, b: int) -> None:
        if b < 0 or b > self.remaining:
            raise BudgetError(f"cannot acquire {b} samples, {self.remaining} remain unlabeled")

    def reveal(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if len(np.unique(idx)) != len(idx):
            raise BudgetError("acquisition batch repeats an index")
        if np.any(self.acquired[idx]):
            raise BudgetError(f"indices already acquired: {idx[self.acquired[idx]].tolist()}")
        self.acquired[idx] = True
        return self._labels[idx].copy()


@dataclass
class LabeledSet:
    indices: list[int] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.indices)

    def add(self, indices, labels) -> None:
        self.indices += [int(i) for i in indices]
        self.labels += [int(v) for v in labels]

    def arrays(self, pool: Pool) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(self.indices, dtype=np.int64)
        return pool.samples[idx], np.asarray(self.labels, dtype=np.int64)


@dataclass
class CycleRecord:
    cycle: int
    labeled_count: int
    lam: float
    d_max: int
    mode_depth: int
    test_accuracy: float
    uniform_epochs: int
    vi_epochs: int
    wall_time: float
    acquired: list[int] = field(default_factory=list)

    def row(self, with_time: bool) -> list:
        return [self.cycle, self.labeled_count, repr(self.lam), self.d_max, self.mode_depth,
                repr(self.test_accuracy), f"{self.wall_time:.3f}" if with_time else ""]


# -- acquisition ----------------------------------------------------------

def acquire_random(pool: Pool, b: int, rng: np.random.Generator) -> np.ndarray:
    pool.check_budget(b)
    return rng.choice(pool.unlabeled_indices(), size=b, replace=False)


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-300, 1.0)
    return -np.sum(np.where(probs > 0, probs * np.log(p), 0.0), axis=1)


def rank_by_entropy(probs: np.ndarray, b: int) -> np.ndarray:
    """Positions of the ``b`` highest-entropy rows; ties go to the earlier row."""
    return np.argsort(-entropy(probs), kind="stable")[:b]


def acquire_entropy(pool: Pool, b: int, net: GrowingNetwork, posterior: TruncatedPoissonPosterior) -> np.ndarray:
    pool.check_budget(b)
    unl = pool.unlabeled_indices()
    probs = predict_mixture(net, pool.samples[unl], posterior)
    return unl[rank_by_entropy(probs, b)]


def k_center_greedy(candidates: np.ndarray, centres: np.ndarray, b: int) -> list[int]:
    """Greedy k-center: positions into ``candidates`` in selection order.

    With no centres the first pick is the candidate farthest from the
    candidates' centroid.
    """
    candidates = np.asarray(candidates, dtype=np.float64).reshape(len(candidates), -1)
    if b > len(candidates):
        raise BudgetError(f"cannot pick {b} of {len(candidates)} candidates")
    chosen: list[int] = []
    if b == 0:
        return chosen
    if len(centres):
        centres = np.asarray(centres, dtype=np.float64).reshape(len(centres), -1)
        mind = np.full(len(candidates), np.inf)
        for sl in _batches(len(centres), 512):
            d2 = ((candidates[:, None, :] - centres[None, sl, :]) ** 2).sum(-1)
            mind = np.minimum(mind, d2.min(axis=1))
    else:
        centroid = candidates.mean(axis=0)
        first = int(np.argmax(((candidates - centroid) ** 2).sum(-1)))
        chosen.append(first)
        mind = ((candidates - candidates[first]) ** 2).sum(-1)
        mind[first] = -1.0
    while len(chosen) < b:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, ((candidates - candidates[nxt]) ** 2).sum(-1))
        mind[nxt] = -1.0  # never re-pick a selected point, even when every distance is 0
    return chosen


def acquire_coreset(pool: Pool, labeled: LabeledSet, b: int, net: GrowingNetwork,
                    posterior: TruncatedPoissonPosterior) -> np.ndarray:
    pool.check_budget(b)
    unl = pool.unlabeled_indices()
    feats = features_at_mode(net, pool.samples[unl], posterior)
    centres = features_at_mode(net, pool.samples[np.asarray(labeled.indices, dtype=np.int64)], posterior) \
        if len(labeled) else np.zeros((0, feats.shape[1]))
    return unl[k_center_greedy(feats, centres, b)]


# -- experiment ------------------------------------------------------------

class RunLog:
    """CSV sinks flushed row by row so an aborted run leaves its partial results."""

    def __init__(self, directory: Path | None, record_time: bool):
        self.record_time = record_time
        self.rows: dict[str, list[list]] = {"cycles": [], "epochs": [], "depth": [], "timings": []}
        self._files = {}
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)
            for name, cols in (("cycles", CYCLE_COLUMNS), ("epochs", EPOCH_COLUMNS), ("depth", DEPTH_COLUMNS),
                               ("timings", TIMING_COLUMNS)):
                fh = open(directory / f"{name}.csv", "w", newline="")
                csv.writer(fh, lineterminator="\n").writerow(cols)
                self._files[name] = fh

    def write(self, name: str, row: list) -> None:
        self.rows[name].append(row)
        fh = self._files.get(name)
        if fh is not None:
            csv.writer(fh, lineterminator="\n").writerow(row)
            fh.flush()

    def close(self) -> None:
        for fh in self._files.values():
            fh.close()
        self._files = {}


def _fmt(v: float) -> str:
    return repr(float(v))


def network_spec_for(cfg: ExperimentConfig, dataset: Dataset) -> NetworkSpec:
    shape = dataset.sample_shape
    kind = cfg.kind
    if kind == "auto":
        kind = "conv-basic-block" if len(shape) == 3 else "dense-block"
    pool_kernel = cfg.pool_kernel or (3 if dataset.name.startswith("mnist") else 4)
    return NetworkSpec(kind, shape, dataset.num_classes, width=cfg.width, downsample_at=cfg.downsample_at,
                       pool_kernel=pool_kernel, batch_norm=cfg.batch_norm, seed=cfg.seed)


class ActiveLearner:
    """State of one experiment: pool, labeled set, network, posterior and sampler."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset, output_dir: Path | None = None):
        self.cfg = cfg
        self.dataset = dataset
        self.log = RunLog(output_dir, cfg.record_time)
        self.prior = DepthPrior(cfg.prior_lambda)
        self.pool = Pool(dataset.x_train, dataset.y_train)
        needed = cfg.init_labels + cfg.total_budget
        if needed > len(self.pool):
            raise ConfigError(f"init_labels + acquisitions = {needed} exceeds the pool of {len(self.pool)}",
                              "schedule.budget")
        self.labeled = LabeledSet()
        first = np.random.default_rng([cfg.seed, 1]).choice(len(self.pool), size=cfg.init_labels, replace=False)
        self.labeled.add(np.sort(first), self.pool.reveal(np.sort(first)))
        self._shuffle_rng = np.random.default_rng([cfg.seed, 2])
        self._acquire_rng = np.random.default_rng([cfg.seed, 3])
        self._kl_rng = np.random.default_rng([cfg.seed, 4])
        self.sampler = DepthSampler(np.random.default_rng([cfg.seed, 5]))
        self.records: list[CycleRecord] = []
        self._build_model()

    def _build_model(self) -> None:
        cfg = self.cfg
        self.net = GrowingNetwork(network_spec_for(cfg, self.dataset))
        if cfg.mode == "fixed":
            self.posterior = TruncatedPoissonPosterior(ad.Parameter(float(cfg.fixed_depth), name="depth.lambda"),
                                                       cfg.fixed_depth, cfg.fixed_depth, cfg.delta)
        else:
            self.posterior = TruncatedPoissonPosterior.from_lambda(cfg.lambda_init, cfg.delta, cfg.d_min)
        self.net.grow_to(self.posterior.d_max)

    # -- training ---------------------------------------------------------
    def _refresh_depth(self, cycle: int, epoch: int) -> None:
        before = self.net.depth
        if self.cfg.mode != "fixed":
            self.posterior.refresh_support()
        self.net.grow_to(self.posterior.d_max)
        self.sampler.resize(self.posterior.d_max)
        self.log.write("depth", [cycle, epoch, _fmt(self.posterior.lambda_value), self.posterior.d_max, before,
                                 self.net.depth])

    def _minibatches(self, x, y):
        order = self._shuffle_rng.permutation(len(y))
        for sl in _batches(len(y), self.cfg.batch_size):
            idx = order[sl]
            xb = x[idx]
            if self.dataset.augment and xb.ndim == 4:
                xb = augment_batch(xb, self._shuffle_rng)
            yield xb, y[idx]

    def phase_of(self, epoch: int) -> str:
        if self.cfg.mode == "fixed":
            return "fixed"
        if self.cfg.mode == "snds" and epoch <= math.ceil(self.cfg.epochs / 3):
            return "uniform"
        return "vi"

    def train_cycle(self, cycle: int) -> tuple[int, int]:
        cfg = self.cfg
        x, y = self.labeled.arrays(self.pool)
        n = len(y)
        weight_opt = ad.SGD([], lr=cfg.lr, momentum=cfg.momentum)
        depth_opt = ad.SGD([self.posterior.lam], lr=cfg.depth_lr, momentum=cfg.depth_momentum)
        loss_fn = svi_loss if (cfg.mode == "snds" and cfg.vi_loss == "svi") else meanfield_loss
        counts = {"uniform": 0, "vi": 0, "fixed": 0}
        self.net.training = True
        for epoch in range(1, cfg.epochs + 1):
            if (epoch - 1) % cfg.recompute_stride == 0:
                self._refresh_depth(cycle, epoch)
            weight_opt.add_params(self.net.parameters())
            weight_opt.lr = ad.cosine_rampdown(epoch - 1, cfg.epochs, cfg.lr) if cfg.cosine else cfg.lr
            depth_opt.lr = cfg.depth_lr if epoch <= 2 * cfg.epochs / 3 else cfg.depth_lr_late
            phase = self.phase_of(epoch)
            counts[phase] += 1
            sums = np.zeros(4)
            batches = 0
            for xb, yb in self._minibatches(x, y):
                if phase == "uniform":
                    ce = uniform_phase_step(self.net, self.sampler, xb, yb, weight_opt, cfg.weight_decay)
                    parts = (ce * n, ce * n, 0.0, 0.0)
                elif phase == "fixed":
                    parts = self._fixed_step(xb, yb, weight_opt, n)
                else:
                    parts = self._vi_step(loss_fn, xb, yb, weight_opt, depth_opt, n)
                sums += parts
                batches += 1
            mean = sums / max(batches, 1)
            self.log.write("epochs", [cycle, epoch, phase, *(_fmt(v) for v in mean)])
        return counts["uniform"], counts["vi"] + counts["fixed"]

    def _fixed_step(self, xb, yb, opt, n):
        d = self.cfg.fixed_depth
        params = self.net.params_for_depth(d)
        for p in params:
            p.zero_grad()
        ce = ad.softmax_cross_entropy(self.net.forward_at_depth(xb, d), yb)
        wsq = ad.total(ad.stack([ad.sum_squares(p) for p in params]))
        loss = ad.add(ce, ad.mul(wsq, ad.Tensor(self.cfg.weight_decay / 2)))
        ad.backward(loss)
        opt.step(subset=params)
        decay = self.cfg.weight_decay / 2 * n * float(wsq.item())
        return (ce.item() * n + decay, ce.item() * n, 0.0, decay)

    def _vi_step(self, loss_fn, xb, yb, weight_opt, depth_opt, n):
        cfg = self.cfg
        params = self.net.params_within(self.posterior.d_max)
        for p in params:
            p.zero_grad()
        self.posterior.lam.zero_grad()
        # Dataset units: N * mean CE + KL terms, with the weight prior scaled so the
        # per-sample objective carries weight_decay/2 * ||w||^2.
        out = loss_fn(self.net, self.posterior, self.prior, xb, yb, cfg.weight_decay * n / 2, dataset_size=n,
                      kl_samples=cfg.kl_samples, rng=self._kl_rng)
        ad.backward(ad.mul(out.total, ad.Tensor(1.0 / n)))
        weight_opt.step(subset=params)
        depth_opt.step()
        self.posterior.clamp()
        v = out.values()
        return (v["total"], v["expected_ce"], v["kl_depth"], v["kl_weights"])

    # -- evaluation and acquisition ----------------------------------------
    def evaluate(self) -> float:
        probs = predict_mixture(self.net, self.dataset.x_test, self.posterior)
        return float(np.mean(probs.argmax(axis=1) == self.dataset.y_test))

    def acquire(self, b: int) -> np.ndarray:
        strategy = self.cfg.strategy
        if strategy == "random":
            return acquire_random(self.pool, b, self._acquire_rng)
        if strategy == "entropy":
            return acquire_entropy(self.pool, b, self.net, self.posterior)
        if strategy == "coreset":
            return acquire_coreset(self.pool, self.labeled, b, self.net, self.posterior)
        raise ConfigError(f"unknown strategy {strategy!r}", "experiment.strategy")

    def run_cycle(self, cycle: int) -> CycleRecord:
        cfg = self.cfg
        if cfg.reset_each_cycle and cycle > 1:
            self._build_model()
        start = time.perf_counter()
        labeled_count = len(self.labeled)
        uniform_epochs, vi_epochs = self.train_cycle(cycle)
        t_train = time.perf_counter()
        acc = self.evaluate()
        t_eval = time.perf_counter()
        picked: list[int] = []
        if cfg.strategy != "none":
            picked = [int(i) for i in self.acquire(cfg.budget_for(cycle))]
            self.labeled.add(picked, self.pool.reveal(picked))
        t_acq = time.perf_counter()
        rec = CycleRecord(cycle, labeled_count, self.posterior.lambda_value, self.posterior.d_max,
                          mode_depth(self.posterior), acc, uniform_epochs, vi_epochs, t_acq - start, picked)
        self.records.append(rec)
        self.log.write("cycles", rec.row(self.log.record_time))
        self.log.write("timings", [cycle, f"{t_train - start:.3f}", f"{t_acq - t_eval:.3f}",
                                   f"{t_eval - t_train:.3f}"])
        return rec

    def run(self) -> list[CycleRecord]:
        try:
            for cycle in range(1, self.cfg.cycles + 1):
                try:
                    self.run_cycle(cycle)
                except ConfigError:
                    raise
                except Exception as exc:
                    raise CycleError(cycle, exc) from exc
        finally:
            self.log.close()
        return self.records


def run_active_snds(cfg: ExperimentConfig, dataset: Dataset, output_dir: Path | None = None) -> ActiveLearner:
    """Run every cycle in ``snds`` or ``meanfield`` mode; the learner keeps ``records``."""
    if cfg.mode == "fixed":
        raise ConfigError("use run_fixed_depth_baseline for mode=fixed", "experiment.mode")
    learner = ActiveLearner(cfg, dataset, output_dir)
    learner.run()
    return learner


def run_fixed_depth_baseline(cfg: ExperimentConfig, dataset: Dataset, output_dir: Path | None = None) -> ActiveLearner:
    """Same loop with the depth frozen at ``fixed_depth`` and lambda never optimised."""
    if cfg.mode != "fixed":
        cfg = cfg.replace(mode="fixed")
    learner = ActiveLearner(cfg, dataset, output_dir)
    learner.run()
    return learner
