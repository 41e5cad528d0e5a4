"""Experiment configuration: INI sections of flat keys, validated into a dataclass.

Every key lives in exactly one section (see ``SECTIONS``).  Unknown sections
or keys are rejected, and ``section.key=value`` overrides apply on top of a
file.  ``to_ini`` writes every field, so parse -> serialize -> parse is the
identity.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from snds.errors import ConfigError

DATASETS = ("mnist", "mnist-bundled", "cifar10", "blobs", "depth-task")
MODES = ("snds", "meanfield", "fixed")
STRATEGIES = ("random", "entropy", "coreset", "none")
VI_LOSSES = ("svi", "meanfield")
MODEL_KINDS = ("auto", "conv-basic-block", "dense-block")


@dataclass
class ExperimentConfig:
    # experiment
    dataset: str = ""
    mode: str = "snds"
    strategy: str = "random"
    seed: int = 0
    output_dir: str = "run"
    # data
    data_dir: str = ""
    classes: tuple[int, ...] = ()
    pool_size: int = 0
    synthetic_n: int = 2000
    test_size: int = 2000
    blob_classes: int = 3
    blob_spread: float = 0.5
    augment: bool = False
    # schedule
    cycles: int = 1
    epochs: int = 15
    init_labels: int = 100
    budget: tuple[int, ...] = (200,)
    # optimizer
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    cosine: bool = True
    # depth
    prior_lambda: float = 1.0
    delta: float = 0.95
    lambda_init: float = 1.0
    depth_lr: float = 0.05
    depth_lr_late: float = 0.03
    depth_momentum: float = 0.9
    vi_loss: str = "svi"
    fixed_depth: int = 0
    d_min: int = 1
    recompute_stride: int = 1
    kl_samples: int = 0
    # model
    kind: str = "auto"
    width: int = 8
    batch_norm: bool = False
    pool_kernel: int = 0
    downsample_at: tuple[int, ...] = (4, 9)
    reset_each_cycle: bool = False
    # output
    record_time: bool = False
    checkpoint: bool = True

    def budget_for(self, cycle: int) -> int:
        """Labels acquired after ``cycle`` (1-based); a single value repeats."""
        return self.budget[0] if len(self.budget) == 1 else self.budget[cycle - 1]

    @property
    def total_budget(self) -> int:
        if self.strategy == "none":
            return 0
        return sum(self.budget_for(c) for c in range(1, self.cycles + 1))

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes))


SECTIONS = {
    "experiment": ("dataset", "mode", "strategy", "seed", "output_dir"),
    "data": ("data_dir", "classes", "pool_size", "synthetic_n", "test_size", "blob_classes", "blob_spread",
             "augment"),
    "schedule": ("cycles", "epochs", "init_labels", "budget"),
    "optimizer": ("lr", "momentum", "weight_decay", "batch_size", "cosine"),
    "depth": ("prior_lambda", "delta", "lambda_init", "depth_lr", "depth_lr_late", "depth_momentum", "vi_loss",
              "fixed_depth", "d_min", "recompute_stride", "kl_samples"),
    "model": ("kind", "width", "batch_norm", "pool_kernel", "downsample_at", "reset_each_cycle"),
    "output": ("record_time", "checkpoint"),
}
REQUIRED = ("dataset",)
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

assert set(_SECTION_OF) == set(_TYPES), "every config field needs a section"


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        return text
    except ValueError:
        raise ConfigError(f"expected {kind}, got {raw!r}", _SECTION_OF[key] + "." + key) from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _key(name: str) -> str:
    return _SECTION_OF[name] + "." + name


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def need(cond, key, message):
        if not cond:
            raise ConfigError(message, _key(key))

    need(cfg.dataset != "", "dataset", "missing required key")
    need(cfg.dataset in DATASETS, "dataset", f"must be one of {', '.join(DATASETS)}")
    need(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")
    need(cfg.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
    need(cfg.vi_loss in VI_LOSSES, "vi_loss", f"must be one of {', '.join(VI_LOSSES)}")
    need(cfg.kind in MODEL_KINDS, "kind", f"must be one of {', '.join(MODEL_KINDS)}")
    for key in ("cycles", "epochs", "init_labels", "batch_size", "width", "recompute_stride", "d_min",
                "synthetic_n", "test_size", "blob_classes"):
        need(getattr(cfg, key) >= 1, key, f"must be a positive integer, got {getattr(cfg, key)}")
    for key in ("pool_size", "kl_samples", "pool_kernel", "fixed_depth", "seed"):
        need(getattr(cfg, key) >= 0, key, f"must be non-negative, got {getattr(cfg, key)}")
    need(len(cfg.budget) >= 1, "budget", "needs at least one value")
    need(all(b >= 1 for b in cfg.budget), "budget", f"per-cycle budgets must be positive, got {list(cfg.budget)}")
    need(len(cfg.budget) in (1, cfg.cycles), "budget",
         f"give one value or one per cycle ({cfg.cycles}), got {len(cfg.budget)}")
    if cfg.pool_size:
        need(cfg.init_labels + cfg.total_budget <= cfg.pool_size, "budget",
             f"init_labels + acquisitions = {cfg.init_labels + cfg.total_budget} exceeds pool_size {cfg.pool_size}")
    for key in ("lr", "depth_lr", "depth_lr_late"):
        need(getattr(cfg, key) >= 0, key, "learning rates must be non-negative")
    need(0 <= cfg.momentum < 1, "momentum", "must lie in [0, 1)")
    need(0 <= cfg.depth_momentum < 1, "depth_momentum", "must lie in [0, 1)")
    need(cfg.weight_decay >= 0, "weight_decay", "must be non-negative")
    need(cfg.prior_lambda > 0, "prior_lambda", "must be positive")
    need(cfg.lambda_init > 0, "lambda_init", "must be positive")
    need(0 < cfg.delta < 1, "delta", "must lie in (0, 1)")
    need(cfg.blob_spread >= 0, "blob_spread", "must be non-negative")
    need(all(k >= 1 for k in cfg.downsample_at), "downsample_at", "layer indices are 1-based")
    need(all(c >= 0 for c in cfg.classes), "classes", "class ids must be non-negative")
    need(len(set(cfg.classes)) == len(cfg.classes), "classes", "class ids must be distinct")
    if cfg.mode == "fixed":
        need(cfg.fixed_depth >= 1, "fixed_depth", "mode=fixed requires a depth")
    need(cfg.output_dir != "", "output_dir", "must not be empty")
    return cfg


def parse_overrides(pairs) -> dict[str, str]:
    """``["schedule.cycles=3", "mode=fixed"]`` -> ``{"cycles": "3", "mode": "fixed"}``."""
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        name, value = pair.split("=", 1)
        name = name.strip()
        sec, _, key = name.rpartition(".")
        if key not in _SECTION_OF or (sec and _SECTION_OF[key] != sec):
            raise ConfigError("unknown key", name)
        out[key] = value
    return out


def parse_config(text: str | None = None, overrides: dict[str, str] | None = None,
                 source: str = "<config>") -> ExperimentConfig:
    """Parse INI text (may be empty) and apply raw string ``overrides``."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text or "", source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError("unknown section", sec)
        for key, raw in parser.items(sec):
            if key not in SECTIONS[sec]:
                raise ConfigError("unknown key", f"{sec}.{key}")
            values[key] = raw
    values.update(overrides or {})
    cfg = ExperimentConfig(**{k: _convert(k, v) for k, v in values.items()})
    return validate(cfg)


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, overrides, source=str(path or "<flags>"))


def to_ini(cfg: ExperimentConfig, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        lines += [f"{key} = {_format(getattr(cfg, key))}" for key in keys]
        lines.append("")
    return "\n".join(lines)
