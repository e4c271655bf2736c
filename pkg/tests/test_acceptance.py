"""Acceptance criteria 1-10, one test each, each printing a PASS/FAIL line.

The desk-scale learning experiments (6-8) are marked slow; together they take
about 90 minutes on one CPU, most of it criterion 7.  Run only this file with ``pytest tests/test_acceptance.py -s``
to see the verdict lines as they are produced.
"""
import time
from functools import cache

import numpy as np
import pytest

from gradcheck import check_gradients, random_instance
from vistransfer.checkpoint import load_checkpoint, save_checkpoint
from vistransfer.config import ExperimentConfig
from vistransfer.mapper import map_action, map_reward
from vistransfer.metrics import episodes_to_threshold, transfer_ratio
from vistransfer.net import HEAD_TENSORS, NetArch, init_params, init_transfer_weights
from vistransfer.preprocess import attention_preprocess, binarize_median_subtract, dilate
from vistransfer.rewardlog import EpisodeRecord, RewardLog, read_reward_log, write_reward_log
from vistransfer.trainer import evaluate_policy, train_stage1, train_stage2
from conftest import random_frame

SEEDS = (0, 1, 2, 3, 4)
LR = 3e-3
SOURCE_EPISODES = 400
THRESHOLD, WINDOW, BUDGET = 12.0, 10, 3000
PROBE_EPISODES, EVAL_EPISODES = 500, 20


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_c1_published_ratios(verdict):
    base = 47960
    got = [transfer_ratio(t, base) for t in (74932, 65376, 18400, 17403)]
    want = [1.562, 1.363, 0.384, 0.363]
    ok = all(abs(g - w) <= 1e-3 for g, w in zip(got, want))
    verdict(1, ok, "ratios " + ", ".join(f"{g:.4f}" for g in got))


def test_c2_action_and_reward_maps(verdict):
    table = [map_action(a) for a in range(6)]
    rng = np.random.default_rng(2)
    reals = list(rng.normal(scale=100, size=100)) + [-1.0, 0.0, 1.0]
    ok = table == [1, 1, 2, 3, 2, 3] and all(map_reward(r) == r for r in reals)
    verdict(2, ok, f"action map {table}, reward identity on {len(reals)} values")


def test_c3_gradients(verdict):
    start = time.perf_counter()
    worst = max(check_gradients(*random_instance(seed)) for seed in range(20))
    elapsed = time.perf_counter() - start
    verdict(3, worst <= 1.0 and elapsed < 60,
            f"20 instances, worst error-to-tolerance ratio {worst:.2e}, {elapsed:.1f}s")


def test_c4_preprocessing_properties(verdict):
    rng = np.random.default_rng(4)
    violations = 0
    for i in range(1000):
        frame = random_frame(rng)
        kind = "MiniPong" if i % 2 else "MiniBreakout"
        scale = np.float32(rng.uniform(0.01, 100.0))
        a = binarize_median_subtract(frame)
        violations += not np.array_equal(a, binarize_median_subtract(frame * scale))
        b = np.maximum(a, binarize_median_subtract(random_frame(rng)))
        da, db = dilate(a), dilate(b)
        violations += not (da >= a).all() or not (db >= da).all()
        c0, c1, c2 = attention_preprocess(frame, kind)
        violations += not (c1.max() <= c0.max() + 1e-6 and c2.max() <= c1.max() + 1e-6)
    zero = np.full((32, 32), 0.2, dtype=np.float32)
    violations += attention_preprocess(zero, "MiniPong").any()
    violations += dilate(np.zeros((32, 32), np.float32)).any()
    verdict(4, violations == 0, f"1000 frames, {violations} violations")


def test_c5_determinism(verdict, tmp_path):
    start = time.perf_counter()
    cfg = ExperimentConfig(stage="source", seed=42, workers=2, episodes=50, deterministic=True)
    blobs, logs = [], []
    for i in range(2):
        result = train_stage1(cfg)
        save_checkpoint(result.params, tmp_path / f"{i}.ckpt")
        write_reward_log(result.log, tmp_path / f"{i}.csv")
        blobs.append((tmp_path / f"{i}.ckpt").read_bytes())
        logs.append((tmp_path / f"{i}.csv").read_bytes())
    elapsed = time.perf_counter() - start
    ok = blobs[0] == blobs[1] and logs[0] == logs[1] and elapsed < 120
    verdict(5, ok, f"checkpoints equal {blobs[0] == blobs[1]}, logs equal "
                   f"{logs[0] == logs[1]}, {elapsed:.1f}s")


@cache
def source_run(seed):
    cfg = ExperimentConfig(stage="source", seed=seed, workers=4, episodes=SOURCE_EPISODES,
                           lr=LR, deterministic=True)
    start = time.process_time()
    result = train_stage1(cfg)
    return result, time.process_time() - start


@pytest.mark.slow
def test_c6_source_mastery(verdict):
    means, cpu = [], 0.0
    for seed in SEEDS:
        result, t = source_run(seed)
        means.append(float(result.log.rewards[-100:].mean()))
        cpu += t
    wins = sum(m > 0 for m in means)
    verdict(6, wins >= 3 and cpu < 15 * 60,
            f"final 100-episode means {[round(m, 2) for m in means]}, {wins}/5 > 0, "
            f"{cpu / 60:.1f} CPU min")


def target_config(seed, **kw):
    return ExperimentConfig(stage="transfer", source_checkpoint="memory", seed=seed,
                            lr=LR, deterministic=True, **kw)


def episodes_to_threshold_run(seed, pretrained):
    """Native episodes to reach the threshold, or None within the budget."""
    if pretrained:
        cfg = target_config(seed, workers=3, ratio=(2, 1), episodes=10 * BUDGET)
        source = source_run(seed)[0].params
    else:
        cfg = target_config(seed, workers=3, ratio=(1, 0), episodes=BUDGET, pretrained=False)
        source = None

    def stop(native):
        return len(native) >= BUDGET or episodes_to_threshold(native, THRESHOLD, WINDOW) is not None

    result = train_stage2(cfg, source, stop_when=stop)
    return episodes_to_threshold(result.log.rewards[:BUDGET], THRESHOLD, WINDOW)


def _median_ett(values):
    # a run that never reaches the threshold ranks after every run that does
    return float(np.median([BUDGET + 1 if v is None else v for v in values]))


@pytest.mark.slow
def test_c7_transfer_direction(verdict):
    start = time.process_time()
    pre = [episodes_to_threshold_run(s, True) for s in SEEDS]
    scratch = [episodes_to_threshold_run(s, False) for s in SEEDS]
    cpu = time.process_time() - start
    mp, ms = _median_ett(pre), _median_ett(scratch)
    show = lambda m: "none" if m > BUDGET else f"{m:g}"
    verdict(7, mp < ms and cpu < 45 * 60,
            f"episodes to threshold pretrained {pre} (median {show(mp)}), scratch {scratch} "
            f"(median {show(ms)}), {cpu / 60:.1f} CPU min")


def probe_score(seed, ratio):
    cfg = target_config(seed, workers=3, ratio=ratio, episodes=PROBE_EPISODES)
    params = train_stage2(cfg, source_run(seed)[0].params).params
    return float(evaluate_policy(params, episodes=EVAL_EPISODES, seed=seed).rewards.mean())


@pytest.mark.slow
def test_c8_mapped_only_probe(verdict):
    mapped = [probe_score(s, (0, 1)) for s in SEEDS]
    native = [probe_score(s, (1, 0)) for s in SEEDS]
    m, n = float(np.median(mapped)), float(np.median(native))
    verdict(8, m < n, f"evaluation means all-mapped {mapped} (median {m:.2f}), "
                      f"all-native {native} (median {n:.2f})")


def random_params(rng):
    n = int(rng.integers(1, 4))
    arch = NetArch(n_actions=int(rng.choice([4, 6])), size=int(rng.choice([8, 16, 32])),
                   filters=tuple(int(v) for v in rng.integers(1, 9, n)),
                   strides=tuple(int(v) for v in rng.integers(1, 3, n)),
                   hidden=int(rng.integers(1, 65)))
    params = init_params(arch, seed=int(rng.integers(2**31)))
    for t in params.tensors.values():
        t *= np.float32(rng.lognormal(0, 3))
    return params


def random_log(rng):
    log, episode = RewardLog(), 0
    for _ in range(int(rng.integers(0, 40))):
        episode += int(rng.integers(1, 4))
        reward = float(rng.normal(scale=10.0 ** rng.integers(-8, 8)))
        log.append(EpisodeRecord(episode, reward, int(rng.integers(0, 10**6)),
                                 float(rng.random() * 1e5), str(rng.choice(["native", "mapped"]))))
    return log


def test_c9_persistence_round_trips(verdict, tmp_path):
    rng = np.random.default_rng(9)
    bad_ckpt = bad_log = 0
    for i in range(100):
        params = random_params(rng)
        save_checkpoint(params, tmp_path / "p.ckpt")
        back = load_checkpoint(tmp_path / "p.ckpt")
        bad_ckpt += back.arch != params.arch or any(
            back[k].tobytes() != v.tobytes() for k, v in params.tensors.items())
        log = random_log(rng)
        write_reward_log(log, tmp_path / "l.csv")
        bad_log += read_reward_log(tmp_path / "l.csv") != log
    verdict(9, bad_ckpt == 0 and bad_log == 0,
            f"100 checkpoints ({bad_ckpt} mismatched), 100 logs ({bad_log} mismatched)")


def test_c10_transfer_init_contract(verdict):
    failures = 0
    for seed in range(10):
        source = init_params(NetArch(n_actions=6), seed=seed)
        target = init_transfer_weights(source, NetArch(n_actions=4), seed=seed + 100)
        for name in target.names():
            if name in HEAD_TENSORS:
                failures += any(target[name].tobytes() == t.tobytes()
                                for t in source.tensors.values())
            else:
                failures += target[name].tobytes() != source[name].tobytes()
    verdict(10, failures == 0, f"10 source networks, {failures} contract violations")
