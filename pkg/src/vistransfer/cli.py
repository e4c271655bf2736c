"""Command-line entry point: ``vistransfer <command> --config <path> [--out DIR] [--seed N] [--deterministic]``.

Commands and the files they write under the output directory:

train-source      source.ckpt, source_log.csv
train-transfer    transfer.ckpt, transfer_log.csv, transfer_mapped_log.csv (+ mapper.ckpt)
train-baseline    baseline.ckpt, baseline_log.csv
evaluate          metrics.csv, report.txt (report also printed)
plot              curves.svg
dump-activations  act_L<layer>_<k>.pgm, eight per requested layer
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import envs
from .checkpoint import load_checkpoint, load_mapper, save_checkpoint, save_mapper
from .config import ConfigError, ExperimentConfig, load_config
from .envs import BREAKOUT, PONG, ToyEnv
from .mapper import analytic_pairs, fit_linear_mapper, sample_source_states
from .metrics import evaluate, format_csv, format_report, metrics_table
from .net import dump_activations
from .plotting import plot_curves
from .preprocess import attention_preprocess
from .rewardlog import RewardLogWriter, read_reward_log
from .trainer import train_stage1, train_stage2

COMMANDS = ("train-source", "train-transfer", "train-baseline", "evaluate", "plot",
            "dump-activations")
MAPPER_FIT_PAIRS = 400

log = logging.getLogger("vistransfer")


class CommandError(RuntimeError):
    pass


def _named_paths(text: str, key: str) -> dict[str, str]:
    """``name=path,name=path`` (or bare paths, named by file stem)."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, path = item.split("=", 1) if "=" in item else (
            os.path.splitext(os.path.basename(item))[0], item)
        out[name.strip()] = path.strip()
    if not out:
        raise CommandError(f"{key} lists no logs")
    return out


def _checkpointer(out_dir: str, stem: str):
    def save(params, index):
        save_checkpoint(params, os.path.join(out_dir, f"{stem}_ep{index}.ckpt"))
    return save


def _train_source(cfg: ExperimentConfig) -> int:
    writer = RewardLogWriter(os.path.join(cfg.out_dir, "source_log.csv"))
    result = train_stage1(cfg, on_episode=writer,
                          on_checkpoint=_checkpointer(cfg.out_dir, "source"))
    save_checkpoint(result.params, os.path.join(cfg.out_dir, "source.ckpt"))
    _summary("source", result.log)
    return 0


def _train_target(cfg: ExperimentConfig, stem: str) -> int:
    source = None
    if cfg.stage == "transfer" and cfg.pretrained or cfg.control == "expert-replay":
        if not cfg.source_checkpoint:
            raise CommandError("source_checkpoint is required")
        source = load_checkpoint(cfg.source_checkpoint)
    linear = None
    n_mapped = cfg.worker_split[1]
    if cfg.mapper == "linear" and n_mapped:
        if cfg.mapper_checkpoint:
            linear = load_mapper(cfg.mapper_checkpoint)
        else:
            linear = fit_linear_mapper(analytic_pairs(
                sample_source_states(MAPPER_FIT_PAIRS, cfg.seed)))
            save_mapper(linear, os.path.join(cfg.out_dir, "mapper.ckpt"))
            log.info("fitted linear mapper on %d pairs, residual mse %.3g",
                     linear.n_pairs, linear.residual_mse)
    native = RewardLogWriter(os.path.join(cfg.out_dir, f"{stem}_log.csv"))
    mapped = RewardLogWriter(os.path.join(cfg.out_dir, f"{stem}_mapped_log.csv")) if n_mapped else None

    def on_episode(record):
        (native if record.worker_kind == "native" else mapped)(record)

    result = train_stage2(cfg, source, linear=linear, on_episode=on_episode,
                          on_checkpoint=_checkpointer(cfg.out_dir, stem))
    save_checkpoint(result.params, os.path.join(cfg.out_dir, f"{stem}.ckpt"))
    _summary(stem, result.log)
    return 0


def _summary(stem, reward_log):
    r = reward_log.rewards
    tail = float(r[-100:].mean()) if r.size else float("nan")
    print(f"{stem}: {r.size} native episodes, last-100 mean reward {tail:.3f}")


def _evaluate(cfg: ExperimentConfig) -> int:
    if not cfg.baseline_log:
        raise CommandError("eval.baseline_log is required")
    baseline = read_reward_log(cfg.baseline_log)
    others = _named_paths(cfg.transfer_logs, "eval.transfer_logs") if cfg.transfer_logs else {}
    kw = dict(threshold=cfg.threshold, window=cfg.window, jumpstart_k=cfg.jumpstart_k,
              auc_budget=cfg.auc_budget)
    base_name = "baseline"
    columns = {base_name: evaluate(baseline, **kw)}
    for name, path in others.items():
        if name == base_name:
            name = f"{name} (transfer)"
        columns[name] = evaluate(read_reward_log(path), baseline, **kw)
    table = metrics_table(columns, base_name)
    report = format_report(table)
    _write_text(os.path.join(cfg.out_dir, "metrics.csv"), format_csv(table))
    _write_text(os.path.join(cfg.out_dir, "report.txt"), report)
    sys.stdout.write(report)
    return 0


def _plot(cfg: ExperimentConfig) -> int:
    if not cfg.plot_logs:
        raise CommandError("plot.logs is required")
    logs = {name: read_reward_log(path)
            for name, path in _named_paths(cfg.plot_logs, "plot.logs").items()}
    path = os.path.join(cfg.out_dir, "curves.svg")
    plot_curves(logs, cfg.smoothing, path)
    print(path)
    return 0


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM of an image with values in [0, 1]."""
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + img.tobytes())
    os.replace(tmp, path)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def _dump(cfg: ExperimentConfig) -> int:
    if not cfg.checkpoint:
        raise CommandError("dump.checkpoint is required")
    params = load_checkpoint(cfg.checkpoint)
    kind = PONG if params.arch.n_actions == envs.N_ACTIONS[PONG] else BREAKOUT
    frame = ToyEnv(kind).reset(cfg.seed)
    obs = attention_preprocess(frame, kind)
    n_layers = len(params.arch.filters)
    for layer in cfg.layers:
        if layer > n_layers:
            raise CommandError(f"dump.layers: network has {n_layers} conv layers, asked for {layer}")
    written = 0
    for layer in cfg.layers:
        for k, img in enumerate(dump_activations(params, obs, layer)):
            write_pgm(os.path.join(cfg.out_dir, f"act_L{layer}_{k}.pgm"), img)
            written += 1
    print(f"wrote {written} activation images to {cfg.out_dir}")
    return 0


def _write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(command: str, config: ExperimentConfig) -> int:
    """Execute one command; raises on any error."""
    if command not in COMMANDS:
        raise CommandError(f"unknown command {command!r}")
    if command == "train-source":
        config = config.with_(stage="source")
    elif command == "train-transfer":
        config = config.with_(stage="transfer")
    elif command == "train-baseline":
        config = config.with_(stage="baseline", pretrained=False)
    os.makedirs(config.out_dir, exist_ok=True)
    if command == "train-source":
        return _train_source(config)
    if command in ("train-transfer", "train-baseline"):
        return _train_target(config, config.stage)
    if command == "evaluate":
        return _evaluate(config)
    if command == "plot":
        return _plot(config)
    return _dump(config)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vistransfer", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key=value experiment file")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="overrides seed")
    p.add_argument("--deterministic", action="store_true", help="lockstep, reproducible training")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.out is not None:
            changes["out_dir"] = args.out
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.deterministic:
            changes["deterministic"] = True
        cfg = replace(cfg, **changes).validate()
        return run(args.command, cfg)
    except KeyboardInterrupt:
        print("vistransfer: interrupted", file=sys.stderr)
        return 130
    except (ConfigError, CommandError, OSError, ValueError, ArithmeticError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"vistransfer: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
