"""Small end-to-end run through the Python API (about a minute)."""
import numpy as np

from vistransfer import envs
from vistransfer.config import ExperimentConfig
from vistransfer.mapper import analytic_map, map_action
from vistransfer.metrics import evaluate, metrics_table, format_report
from vistransfer.plotting import plot_curves
from vistransfer.trainer import evaluate_policy, train_stage1, train_stage2

# what a mapped worker sees: a MiniPong state drawn in MiniBreakout's frame
state, _ = envs.env_reset(envs.PONG, seed=0)
envs.env_step(state, envs.FIRE)
mapped = analytic_map(state)
print("mapped observation", mapped.shape, "active cells", int(mapped[0].sum()))
print("action map", [map_action(a) for a in range(6)])

source = train_stage1(ExperimentConfig(stage="source", workers=4, episodes=120, lr=3e-3,
                                       deterministic=True))
print("source last-50 mean", source.log.rewards[-50:].mean())

common = dict(workers=3, episodes=150, lr=3e-3, deterministic=True)
transfer = train_stage2(ExperimentConfig(stage="transfer", ratio=(2, 1),
                                         source_checkpoint="memory", **common), source.params)
baseline = train_stage2(ExperimentConfig(stage="baseline", ratio=(1, 0), **common))

kw = dict(threshold=4, window=10, jumpstart_k=20, auc_budget=90)
table = metrics_table({"baseline": evaluate(baseline.log, **kw),
                       "2:1": evaluate(transfer.log, baseline.log, **kw)}, "baseline")
print(format_report(table))
frozen = evaluate_policy(transfer.params, envs.BREAKOUT, episodes=8)
print("frozen 2:1 policy, mean native reward", np.mean(frozen.rewards))
plot_curves({"baseline": baseline.log, "2:1": transfer.log}, smoothing=10, path="quickstart.svg")
print("wrote quickstart.svg")
