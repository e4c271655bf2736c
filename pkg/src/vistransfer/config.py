"""Experiment configuration: a flat ``key=value`` text file.

One key per line, ``#`` starts a comment, omitted keys take the defaults below
and unknown keys are rejected.  Example::

    stage=transfer
    workers=6
    ratio=2:1
    source_checkpoint=runs/source.ckpt
    train.lr=1e-3
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .mapper import MAPPER_KINDS
from .net import NetArch

STAGES = ("source", "transfer", "baseline")
CONTROL_MODES = ("pullback", "expert-replay")


class ConfigError(ValueError):
    pass


def parse_ratio(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"ratio must look like 'native:mapped', got {text!r}") from None
    if a < 0 or b < 0 or a + b == 0:
        raise ConfigError(f"ratio {text!r} needs non-negative parts and a positive total")
    return a, b


def split_workers(total: int, ratio: tuple[int, int]) -> tuple[int, int]:
    """Native and mapped worker counts for ``total`` workers at ``native:mapped``."""
    a, b = ratio
    if total < 1 or a + b == 0:
        raise ConfigError("worker split needs at least one worker and a non-zero ratio")
    native = math.floor(total * a / (a + b) + 0.5)
    if a and b:
        if total < 2:
            raise ConfigError("a mixed ratio needs at least two workers")
        native = min(max(native, 1), total - 1)
    return native, total - native


@dataclass(frozen=True)
class ExperimentConfig:
    stage: str = "source"
    seed: int = 0
    deterministic: bool = True
    workers: int = 4
    ratio: tuple[int, int] = (2, 1)
    mapper: str = "analytic"
    control: str = "pullback"
    pretrained: bool = True
    episodes: int = 2000
    checkpoint_every: int = 0
    source_checkpoint: str = ""
    mapper_checkpoint: str = ""
    out_dir: str = "runs"
    # network
    net_filters: tuple[int, ...] = (8, 8, 8, 8)
    net_strides: tuple[int, ...] = (2, 2, 1, 1)
    net_kernel: int = 3
    net_hidden: int = 64
    # optimisation
    gamma: float = 0.99
    t_max: int = 5
    lr: float = 7e-4
    entropy_beta: float = 0.01
    value_coef: float = 0.5
    rms_decay: float = 0.99
    rms_eps: float = 0.1
    max_grad_norm: float = 40.0
    # metrics
    threshold: float = 12.0
    window: int = 10
    jumpstart_k: int = 50
    auc_budget: int = 700
    # evaluate / plot / dump-activations
    baseline_log: str = ""
    transfer_logs: str = ""
    plot_logs: str = ""
    smoothing: int = 10
    checkpoint: str = ""
    layers: tuple[int, ...] = (1, 2)

    def arch(self, n_actions: int) -> NetArch:
        return NetArch(n_actions=n_actions, filters=self.net_filters, strides=self.net_strides,
                       kernel=self.net_kernel, hidden=self.net_hidden)

    @property
    def worker_split(self) -> tuple[int, int]:
        if self.stage == "source":
            return self.workers, 0
        return split_workers(self.workers, self.ratio)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes).validate()

    def validate(self) -> "ExperimentConfig":
        def need(ok: bool, key: str, what: str):
            if not ok:
                raise ConfigError(f"{key}: {what} (got {getattr(self, KEY_TO_FIELD.get(key, key), '?')!r})")

        need(self.stage in STAGES, "stage", f"must be one of {STAGES}")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.mapper in MAPPER_KINDS, "mapper", f"must be one of {MAPPER_KINDS}")
        need(self.control in CONTROL_MODES, "control", f"must be one of {CONTROL_MODES}")
        need(self.episodes >= 1, "episodes", "must be >= 1")
        need(self.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
        need(len(self.net_filters) == len(self.net_strides) and len(self.net_filters) > 0,
             "net.filters", "needs one entry per stride")
        need(all(f >= 1 for f in self.net_filters), "net.filters", "must be positive")
        need(all(s >= 1 for s in self.net_strides), "net.strides", "must be positive")
        need(self.net_kernel >= 1 and self.net_kernel % 2 == 1, "net.kernel", "must be odd")
        need(self.net_hidden >= 1, "net.hidden", "must be >= 1")
        need(0.0 <= self.gamma <= 1.0, "train.gamma", "must lie in [0, 1]")
        need(self.t_max >= 1, "train.t_max", "must be >= 1")
        need(self.lr > 0, "train.lr", "must be > 0")
        need(self.entropy_beta >= 0, "train.entropy", "must be >= 0")
        need(self.value_coef >= 0, "train.value_coef", "must be >= 0")
        need(0.0 <= self.rms_decay < 1.0, "train.rms_decay", "must lie in [0, 1)")
        need(self.rms_eps > 0, "train.rms_eps", "must be > 0")
        need(self.max_grad_norm >= 0, "train.max_grad_norm", "must be >= 0 (0 disables)")
        need(self.window >= 1, "metrics.window", "must be >= 1")
        need(self.jumpstart_k >= 1, "metrics.jumpstart_k", "must be >= 1")
        need(self.auc_budget >= 1, "metrics.auc_budget", "must be >= 1")
        need(self.smoothing >= 1, "plot.smoothing", "must be >= 1")
        need(all(layer >= 1 for layer in self.layers), "dump.layers", "must be >= 1")
        if self.stage != "source":
            split_workers(self.workers, self.ratio)
        if self.stage == "transfer" and self.pretrained:
            need(bool(self.source_checkpoint), "source_checkpoint",
                 "is required for the transfer stage")
        return self


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# key in the file -> (dataclass field, parser)
KEYS = {
    "stage": ("stage", str),
    "seed": ("seed", int),
    "deterministic": ("deterministic", _bool),
    "workers": ("workers", int),
    "ratio": ("ratio", parse_ratio),
    "mapper": ("mapper", str),
    "control": ("control", str),
    "pretrained": ("pretrained", _bool),
    "episodes": ("episodes", int),
    "checkpoint_every": ("checkpoint_every", int),
    "source_checkpoint": ("source_checkpoint", str),
    "mapper_checkpoint": ("mapper_checkpoint", str),
    "out_dir": ("out_dir", str),
    "net.filters": ("net_filters", _ints),
    "net.strides": ("net_strides", _ints),
    "net.kernel": ("net_kernel", int),
    "net.hidden": ("net_hidden", int),
    "train.gamma": ("gamma", float),
    "train.t_max": ("t_max", int),
    "train.lr": ("lr", float),
    "train.entropy": ("entropy_beta", float),
    "train.value_coef": ("value_coef", float),
    "train.rms_decay": ("rms_decay", float),
    "train.rms_eps": ("rms_eps", float),
    "train.max_grad_norm": ("max_grad_norm", float),
    "metrics.threshold": ("threshold", float),
    "metrics.window": ("window", int),
    "metrics.jumpstart_k": ("jumpstart_k", int),
    "metrics.auc_budget": ("auc_budget", int),
    "eval.baseline_log": ("baseline_log", str),
    "eval.transfer_logs": ("transfer_logs", str),
    "plot.logs": ("plot_logs", str),
    "plot.smoothing": ("smoothing", int),
    "dump.checkpoint": ("checkpoint", str),
    "dump.layers": ("layers", _ints),
}
KEY_TO_FIELD = {k: f for k, (f, _) in KEYS.items()}
assert set(KEY_TO_FIELD.values()) == {f.name for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, parse = KEYS[key]
        try:
            values[name] = parse(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    config = ExperimentConfig(**values)
    if config.stage == "baseline":
        config = replace(config, pretrained=False)
    return config.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
