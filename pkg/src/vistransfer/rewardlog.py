"""Per-episode reward logs and their CSV form.

CSV header: ``episode,total_reward,steps,wall_ms,worker_kind``.  Floats are
written with 17 significant digits so a round trip is value-exact.
"""
from __future__ import annotations

import csv
import io
import os
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

HEADER = ("episode", "total_reward", "steps", "wall_ms", "worker_kind")
WORKER_KINDS = ("native", "mapped")


class RewardLogError(ValueError):
    pass


class EpisodeRecord(NamedTuple):
    episode: int
    total_reward: float
    steps: int
    wall_ms: float
    worker_kind: str


@dataclass
class RewardLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    def append(self, record: EpisodeRecord) -> None:
        if self.records and record.episode <= self.records[-1].episode:
            raise RewardLogError(
                f"episode {record.episode} does not follow {self.records[-1].episode}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EpisodeRecord]:
        return iter(self.records)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.total_reward for r in self.records], dtype=np.float64)

    def of_kind(self, kind: str) -> "RewardLog":
        return RewardLog([r for r in self.records if r.worker_kind == kind])

    @classmethod
    def from_rewards(cls, rewards: Iterable[float], worker_kind: str = "native") -> "RewardLog":
        return cls([EpisodeRecord(i, float(r), 0, 0.0, worker_kind)
                    for i, r in enumerate(rewards, start=1)])


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else str(float(x))


def format_row(record: EpisodeRecord) -> str:
    return ",".join([str(int(record.episode)), _fmt(record.total_reward), str(int(record.steps)),
                     _fmt(record.wall_ms), record.worker_kind])


def write_reward_log(log: RewardLog, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        for record in log:
            fh.write(format_row(record) + "\n")
    os.replace(tmp, path)


def parse_reward_log(text: str) -> RewardLog:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise RewardLogError("empty file: missing header") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise RewardLogError(f"header {header} does not match {list(HEADER)}")
    log = RewardLog()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise RewardLogError(f"line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            record = EpisodeRecord(int(row[0]), float(row[1]), int(row[2]), float(row[3]),
                                   row[4].strip())
        except ValueError as exc:
            raise RewardLogError(f"line {lineno}: {exc}") from None
        if record.worker_kind not in WORKER_KINDS:
            raise RewardLogError(f"line {lineno}: unknown worker kind {record.worker_kind!r}")
        try:
            log.append(record)
        except RewardLogError as exc:
            raise RewardLogError(f"line {lineno}: episode indices must increase ({exc})") from None
    return log


def read_reward_log(path) -> RewardLog:
    with open(path, newline="") as fh:
        return parse_reward_log(fh.read())


class RewardLogWriter:
    """Appends rows as episodes finish; safe to call from several threads."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        with open(path, "w", newline="") as fh:
            fh.write(",".join(HEADER) + "\n")

    def __call__(self, record: EpisodeRecord) -> None:
        with self._lock, open(self.path, "a", newline="") as fh:
            fh.write(format_row(record) + "\n")
