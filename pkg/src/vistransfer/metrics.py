"""Transfer-learning evaluation metrics and the Table-1-style report.

All functions accept a :class:`RewardLog` or a plain sequence of per-episode
rewards.  Episode positions are 1-based positions within the given log.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .rewardlog import EpisodeRecord, RewardLog

ROW_NAMES = ("Jumpstart", "Epoch to threshold", "Total Rewards", "Transfer Ratio")


class MetricsError(ValueError):
    pass


class ShortLogWarning(UserWarning):
    """A log had fewer episodes than the requested budget."""


def _rewards(log) -> np.ndarray:
    if isinstance(log, RewardLog):
        return log.rewards
    log = list(log)
    if log and isinstance(log[0], EpisodeRecord):
        return np.array([r.total_reward for r in log], dtype=np.float64)
    return np.asarray(log, dtype=np.float64)


def jumpstart(log_transfer, log_baseline, k: int = 50) -> float:
    """Mean of the first ``k`` transfer rewards minus that of the baseline."""
    if k < 1:
        raise MetricsError("k must be >= 1")
    a, b = _rewards(log_transfer), _rewards(log_baseline)
    if len(a) < k or len(b) < k:
        raise MetricsError(f"jumpstart needs {k} episodes in both logs ({len(a)}, {len(b)})")
    return float(a[:k].mean() - b[:k].mean())


def episodes_to_threshold(log, threshold: float, window: int = 10) -> int | None:
    """First position ``e >= window`` whose trailing ``window``-episode mean reaches
    ``threshold``; None if it never does."""
    if window < 1:
        raise MetricsError("window must be >= 1")
    r = _rewards(log)
    if len(r) < window:
        return None
    csum = np.concatenate([[0.0], np.cumsum(r)])
    means = (csum[window:] - csum[:-window]) / window
    hits = np.flatnonzero(means >= threshold)
    return int(hits[0]) + window if hits.size else None


def total_rewards(log, budget: int = 700) -> float:
    """Area under the running-mean reward curve over the first ``budget`` episodes."""
    r = _rewards(log)
    if r.size == 0:
        raise MetricsError("cannot total an empty log")
    if budget < 1:
        raise MetricsError("budget must be >= 1")
    if len(r) < budget:
        warnings.warn(f"log has {len(r)} episodes, fewer than the budget of {budget}",
                      ShortLogWarning, stacklevel=2)
    r = r[:budget]
    running_mean = np.cumsum(r) / np.arange(1, len(r) + 1)
    return float(running_mean.sum())


def transfer_ratio(total_transfer: float, total_baseline: float) -> float | None:
    if total_baseline == 0:
        return None
    return total_transfer / total_baseline


@dataclass(frozen=True)
class TransferMetrics:
    jumpstart: float | None
    episodes_to_threshold: int | None
    total_rewards: float
    transfer_ratio: float | None


def evaluate(log, baseline=None, *, threshold: float = 12.0, window: int = 10,
             jumpstart_k: int = 50, auc_budget: int = 700) -> TransferMetrics:
    """All four metrics for ``log``; the comparative two are None without a baseline."""
    total = total_rewards(log, auc_budget)
    js = ratio = None
    if baseline is not None:
        base_total = total_rewards(baseline, auc_budget)
        ratio = transfer_ratio(total, base_total)
        k = min(jumpstart_k, len(_rewards(log)), len(_rewards(baseline)))
        js = jumpstart(log, baseline, k)
    return TransferMetrics(js, episodes_to_threshold(log, threshold, window), total, ratio)


def _cells(m: TransferMetrics, is_baseline: bool) -> list[str]:
    if is_baseline:
        js = ratio = "-"
    else:
        js = "None" if m.jumpstart is None or m.jumpstart <= 0 else f"{m.jumpstart:.3f}"
        ratio = "None" if m.transfer_ratio is None else f"{m.transfer_ratio:.3f}"
    ett = "None" if m.episodes_to_threshold is None else str(m.episodes_to_threshold)
    return [js, ett, f"{m.total_rewards:.1f}", ratio]


def metrics_table(columns: dict[str, TransferMetrics], baseline_name: str) -> list[list[str]]:
    """Rows of strings: header, then one row per metric (Table 1 layout)."""
    names = list(columns)
    table = [["Worker Configurations"] + names]
    cells = {n: _cells(columns[n], n == baseline_name) for n in names}
    for i, row in enumerate(ROW_NAMES):
        table.append([row] + [cells[n][i] for n in names])
    return table


def format_report(table: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for j, row in enumerate(table):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_csv(table: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    return buf.getvalue()
