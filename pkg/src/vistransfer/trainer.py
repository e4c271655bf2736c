"""Asynchronous advantage actor-critic training with native and mapped workers.

Stage 1 trains a 6-action network on MiniPong.  Stage 2 fine-tunes a 4-action
network on MiniBreakout with two kinds of workers sharing one parameter store:

* native workers play MiniBreakout and see its preprocessed frames;
* mapped workers play MiniPong but see the frames produced by the visual
  mapper, act through the static action map and receive unscaled rewards.

Two execution modes exist.  Deterministic mode runs every worker in lockstep
inside one thread: each round all workers read the same parameter snapshot,
roll out one segment each (batched through the network), and their gradients
are applied to the store one worker at a time, in worker order.  Each worker's
gradient is therefore computed against a snapshot up to ``workers - 1``
updates old, which is the staleness an asynchronous run would see, but the
result is bitwise reproducible.  Asynchronous mode runs one thread per worker
against the shared store (Hogwild-style, per-tensor locking).
"""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import envs
from .config import ExperimentConfig, split_workers
from .envs import BREAKOUT, PONG, ToyEnv, render
from .mapper import LinearMapper, apply_mapper, inverse_action, map_action, map_reward
from .net import (DivergenceError, ParameterSet, Trajectory, a3c_loss_and_grads_batch,
                  forward_batch, init_params, init_transfer_weights)
from .preprocess import attention_preprocess
from .rewardlog import EpisodeRecord, RewardLog

log = logging.getLogger(__name__)

NATIVE = "native"
MAPPED = "mapped"


@dataclass(frozen=True)
class WorkerSpec:
    kind: str
    worker_id: int
    env_seed: int
    mapper: str | None = None
    control: str = "pullback"

    def __post_init__(self):
        if self.kind not in (NATIVE, MAPPED):
            raise ValueError(f"unknown worker kind {self.kind!r}")
        if self.kind == MAPPED and self.mapper is None:
            raise ValueError("mapped workers need a mapper")
        if self.control not in ("pullback", "expert-replay"):
            raise ValueError(f"unknown control mode {self.control!r}")


class ParameterStore:
    """Shared parameters plus shared RMSProp statistics.

    Every named tensor has its own lock: a snapshot never sees a half-applied
    update of one tensor, but different tensors may come from different updates.
    """

    def __init__(self, params: ParameterSet, lr: float = 7e-4, decay: float = 0.99,
                 eps: float = 0.1):
        self.params = params.copy()
        self.square_avg = self.params.zeros_like()
        self.lr, self.decay, self.eps = lr, decay, eps
        self.updates = 0
        self.episodes = 0
        self.dropped = 0
        self._locks = {name: threading.Lock() for name in self.params.tensors}
        self._scratch = {name: np.empty_like(t) for name, t in self.params.tensors.items()}
        self._counter = threading.Lock()

    def snapshot(self) -> ParameterSet:
        tensors = {}
        for name, lock in self._locks.items():
            with lock:
                tensors[name] = self.params.tensors[name].copy()
        return ParameterSet(self.params.arch, tensors)

    def apply_update(self, grads: dict[str, np.ndarray]) -> int:
        if set(grads) != set(self._locks):
            raise ValueError("gradient names do not match the parameter set")
        for name, g in grads.items():
            if g.shape != self.params.tensors[name].shape:
                raise ValueError(f"{name}: gradient shape {g.shape} does not match")
        if not all(np.isfinite(g).all() for g in grads.values()):
            log.warning("dropping update with non-finite gradient")
            with self._counter:
                self.dropped += 1
                return self.updates
        for name, g in grads.items():
            with self._locks[name]:
                sq, tmp = self.square_avg[name], self._scratch[name]
                np.multiply(g, g, out=tmp)
                tmp *= 1.0 - self.decay
                sq *= self.decay
                sq += tmp
                np.add(sq, self.eps, out=tmp)
                np.sqrt(tmp, out=tmp)
                np.divide(g, tmp, out=tmp)
                tmp *= self.lr
                self.params.tensors[name] -= tmp
        with self._counter:
            self.updates += 1
            return self.updates

    def claim_episode(self, budget: int) -> int | None:
        """Next global episode index (1-based), or None once the budget is spent."""
        with self._counter:
            if self.episodes >= budget:
                return None
            self.episodes += 1
            return self.episodes


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        return grads
    norm = np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}


def _sample(rng: np.random.Generator, probs: np.ndarray) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(probs) - 1))


class Worker:
    """One actor-learner: its own environment, LSTM state and RNG streams."""

    def __init__(self, spec: WorkerSpec, native_env: str, hidden: int, seed_seq,
                 linear: LinearMapper | None = None, expert: ParameterSet | None = None,
                 dtype=np.float32):
        self.spec = spec
        self.env_kind = native_env if spec.kind == NATIVE else PONG
        self.env = ToyEnv(self.env_kind)
        self.rng = np.random.default_rng(seed_seq)
        self.linear = linear
        self.expert = expert
        if spec.kind == MAPPED and spec.control == "expert-replay" and expert is None:
            raise ValueError("expert-replay control needs source expert parameters")
        if spec.kind == MAPPED and spec.mapper == "linear" and linear is None:
            raise ValueError("linear mapper has not been fitted")
        self.hidden = hidden
        self.dtype = dtype
        self.episodes_started = 0
        self.needs_reset = True
        self.h = self.c = None
        self.expert_state = None
        self.ep_reward = 0.0
        self.ep_steps = 0
        self.ep_start = 0.0
        self.obs = None
        self.last_source_action = None

    def reset(self) -> None:
        seed = (self.spec.env_seed + self.episodes_started) & 0xFFFFFFFFFFFFFFFF
        self.episodes_started += 1
        self.env.reset(seed)
        self.h = np.zeros(self.hidden, self.dtype)
        self.c = np.zeros(self.hidden, self.dtype)
        if self.expert is not None:
            hid = self.expert.arch.hidden
            self.expert_state = (np.zeros((1, hid), self.dtype), np.zeros((1, hid), self.dtype))
        self.ep_reward, self.ep_steps = 0.0, 0
        self.ep_start = time.perf_counter()
        self.needs_reset = False
        self.obs = self.observe()

    def observe(self) -> np.ndarray:
        state = self.env.state
        if self.spec.kind == NATIVE:
            return attention_preprocess(render(state), self.env_kind)
        return apply_mapper(self.spec.mapper, state, self.linear)

    def choose(self, policy: np.ndarray) -> tuple[int, int]:
        """(stored target action, action sent to this worker's environment)."""
        if self.spec.kind == NATIVE:
            a = _sample(self.rng, policy)
            return a, a
        if self.spec.control == "pullback":
            a = _sample(self.rng, policy)
            return a, inverse_action(a)
        src_obs = attention_preprocess(render(self.env.state), PONG)
        out = forward_batch(self.expert, src_obs[None], self.expert_state)
        self.expert_state = out.state
        a_src = _sample(self.rng, out.policies[0])
        return map_action(a_src), a_src

    def act(self, env_action: int) -> tuple[float, bool]:
        self.last_source_action = env_action
        result = self.env.step(env_action)
        reward = result.reward if self.spec.kind == NATIVE else map_reward(result.reward)
        self.ep_reward += reward
        self.ep_steps += 1
        if result.done:
            self.needs_reset = True
        else:
            self.obs = self.observe()
        return reward, result.done


class Segment(NamedTuple):
    trajectory: Trajectory
    worker: Worker
    finished: bool


def rollout(params: ParameterSet, workers: list[Worker], t_max: int) -> list[Segment]:
    """Roll every worker forward up to ``t_max`` steps using one parameter snapshot."""
    for w in workers:
        if w.needs_reset:
            w.reset()
    n_actions = params.arch.n_actions
    records = {id(w): ([], [], [], [], []) for w in workers}
    init = {id(w): (w.h.copy(), w.c.copy()) for w in workers}
    finished = set()
    active = list(workers)
    for _ in range(t_max):
        if not active:
            break
        obs = np.stack([w.obs for w in active])
        state = (np.stack([w.h for w in active]), np.stack([w.c for w in active]))
        out = forward_batch(params, obs, state)
        still = []
        for j, w in enumerate(active):
            policy = out.policies[j]
            stored, env_action = w.choose(policy)
            obs_l, act_l, rew_l, val_l, lp_l = records[id(w)]
            obs_l.append(w.obs)
            act_l.append(stored)
            val_l.append(out.values[j])
            lp_l.append(np.log(np.maximum(policy, 1e-300)))
            w.h, w.c = out.state[0][j], out.state[1][j]
            reward, done = w.act(env_action)
            rew_l.append(reward)
            if done:
                finished.add(id(w))
            else:
                still.append(w)
        active = still
    boot = {}
    if active:
        obs = np.stack([w.obs for w in active])
        state = (np.stack([w.h for w in active]), np.stack([w.c for w in active]))
        values = forward_batch(params, obs, state).values
        boot = {id(w): float(v) for w, v in zip(active, values)}
    segments = []
    for w in workers:
        obs_l, act_l, rew_l, val_l, lp_l = records[id(w)]
        done = id(w) in finished
        traj = Trajectory(
            observations=np.stack(obs_l),
            actions=np.array(act_l, dtype=np.intp),
            rewards=np.array(rew_l, dtype=np.float64),
            values=np.array(val_l, dtype=np.float64),
            log_probs=np.array(lp_l).reshape(len(act_l), n_actions),
            bootstrap_value=0.0 if done else boot[id(w)],
            initial_state=init[id(w)],
            terminal=done,
        )
        segments.append(Segment(traj, w, done))
    return segments


def worker_segment(store: ParameterStore, worker: Worker, t_max: int = 5):
    """Snapshot the store and roll one worker forward: (Trajectory, episode_done)."""
    seg = rollout(store.snapshot(), [worker], t_max)[0]
    return seg.trajectory, seg.finished


@dataclass
class StageResult:
    params: ParameterSet
    log: RewardLog                       # native-worker episodes only
    mapped_log: RewardLog = field(default_factory=RewardLog)

    def __iter__(self):
        return iter((self.params, self.log))


EpisodeHook = Callable[[EpisodeRecord], None]


def _worker_specs(config: ExperimentConfig, n_native: int, n_mapped: int) -> list[WorkerSpec]:
    env_seeds = np.random.SeedSequence([config.seed, 0xE5]).generate_state(
        n_native + n_mapped, dtype=np.uint64)
    specs = []
    for i in range(n_native + n_mapped):
        kind = NATIVE if i < n_native else MAPPED
        specs.append(WorkerSpec(kind, i, int(env_seeds[i]) >> 1,
                                config.mapper if kind == MAPPED else None, config.control))
    return specs


def _grads_for(params, segments, config):
    trajs = [s.trajectory for s in segments]
    try:
        _, grads = a3c_loss_and_grads_batch(params, trajs, config.gamma, config.entropy_beta,
                                            config.value_coef)
        return grads
    except DivergenceError:
        out = []
        for tr in trajs:
            try:
                out.append(a3c_loss_and_grads_batch(params, [tr], config.gamma,
                                                    config.entropy_beta, config.value_coef)[1][0])
            except DivergenceError:
                log.warning("dropping segment with non-finite loss or gradient")
                out.append(None)
        return out


class _Run:
    """Shared bookkeeping for one training run."""

    def __init__(self, config: ExperimentConfig, store: ParameterStore, workers: list[Worker],
                 on_episode: EpisodeHook | None, on_checkpoint, stop_when):
        self.config = config
        self.store = store
        self.workers = workers
        self.on_episode = on_episode
        self.on_checkpoint = on_checkpoint
        self.stop_when = stop_when
        self.native = RewardLog()
        self.mapped = RewardLog()
        self.stopped = False
        self._lock = threading.Lock()

    def step(self, params: ParameterSet, group: list[Worker]) -> None:
        segments = rollout(params, group, self.config.t_max)
        grads = _grads_for(params, segments, self.config)
        for seg, g in zip(segments, grads):
            if self.stopped:
                return
            if g is not None:
                self.store.apply_update(clip_by_global_norm(g, self.config.max_grad_norm))
            if seg.finished:
                self._finish_episode(seg.worker)

    def _finish_episode(self, w: Worker) -> None:
        with self._lock:
            index = self.store.claim_episode(self.config.episodes)
            if index is None:
                self.stopped = True
                return
            wall = 0.0 if self.config.deterministic else (time.perf_counter() - w.ep_start) * 1e3
            record = EpisodeRecord(index, w.ep_reward, w.ep_steps, wall, w.spec.kind)
            (self.native if w.spec.kind == NATIVE else self.mapped).append(record)
            if self.on_episode is not None:
                self.on_episode(record)
            every = self.config.checkpoint_every
            if self.on_checkpoint is not None and every and index % every == 0:
                self.on_checkpoint(self.store.snapshot(), index)
            if index >= self.config.episodes or (
                    self.stop_when is not None and self.stop_when(self.native)):
                self.stopped = True

    def run(self) -> None:
        if self.config.deterministic:
            while not self.stopped:
                self.step(self.store.snapshot(), self.workers)
            return
        errors = []

        def loop(w: Worker):
            try:
                while not self.stopped:
                    self.step(self.store.snapshot(), [w])
            except BaseException as exc:  # surfaced after join
                errors.append(exc)
                self.stopped = True

        threads = [threading.Thread(target=loop, args=(w,), name=f"worker-{w.spec.worker_id}")
                   for w in self.workers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]


def _train(config: ExperimentConfig, params: ParameterSet, native_env: str,
           n_native: int, n_mapped: int, *, linear=None, expert=None,
           on_episode=None, on_checkpoint=None, stop_when=None) -> StageResult:
    store = ParameterStore(params, config.lr, config.rms_decay, config.rms_eps)
    seeds = np.random.SeedSequence([config.seed, 0xA3C]).spawn(n_native + n_mapped)
    dtype = params["lstm.w"].dtype
    workers = [Worker(spec, native_env, params.arch.hidden, seeds[spec.worker_id],
                      linear=linear, expert=expert, dtype=dtype)
               for spec in _worker_specs(config, n_native, n_mapped)]
    run = _Run(config, store, workers, on_episode, on_checkpoint, stop_when)
    run.run()
    return StageResult(store.snapshot(), run.native, run.mapped)


def train_stage1(config: ExperimentConfig, *, on_episode: EpisodeHook | None = None,
                 on_checkpoint=None, stop_when=None) -> StageResult:
    """Train the 6-action source network on MiniPong with native workers only."""
    config = config.validate()
    params = init_params(config.arch(envs.N_ACTIONS[PONG]), seed=config.seed)
    return _train(config, params, PONG, config.workers, 0, on_episode=on_episode,
                  on_checkpoint=on_checkpoint, stop_when=stop_when)


def train_stage2(config: ExperimentConfig, source_params: ParameterSet | None = None, *,
                 linear: LinearMapper | None = None, on_episode: EpisodeHook | None = None,
                 on_checkpoint=None, stop_when=None) -> StageResult:
    """Fine-tune a 4-action MiniBreakout network with native and mapped workers.

    With ``config.stage == "baseline"`` (or ``pretrained=False``) the network
    starts from scratch; otherwise its body is copied from ``source_params``.
    """
    config = config.validate()
    arch = config.arch(envs.N_ACTIONS[BREAKOUT])
    pretrained = config.stage != "baseline" and config.pretrained
    if pretrained:
        if source_params is None:
            raise ValueError("transfer needs source parameters (or use the baseline stage)")
        params = init_transfer_weights(source_params, arch, seed=config.seed + 1)
    else:
        params = init_params(arch, seed=config.seed)
    n_native, n_mapped = split_workers(config.workers, config.ratio)
    expert = source_params if config.control == "expert-replay" and n_mapped else None
    return _train(config, params, BREAKOUT, n_native, n_mapped, linear=linear, expert=expert,
                  on_episode=on_episode, on_checkpoint=on_checkpoint, stop_when=stop_when)


def evaluate_policy(params: ParameterSet, env_kind: str = BREAKOUT, episodes: int = 20,
                    seed: int = 0, parallel: int = 4) -> RewardLog:
    """Play ``episodes`` native episodes with frozen parameters and sampled actions."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = np.random.SeedSequence([seed, 0xE7A1]).spawn(parallel)
    env_seeds = np.random.SeedSequence([seed, 0xE7A2]).generate_state(parallel, dtype=np.uint64)
    dtype = params["lstm.w"].dtype
    workers = [Worker(WorkerSpec(NATIVE, i, int(env_seeds[i]) >> 1), env_kind,
                      params.arch.hidden, seeds[i], dtype=dtype)
               for i in range(min(parallel, episodes))]
    out = RewardLog()
    while workers:
        for seg in rollout(params, workers, 50):
            w = seg.worker
            if seg.finished and len(out) < episodes:
                out.append(EpisodeRecord(len(out) + 1, w.ep_reward, w.ep_steps, 0.0, NATIVE))
        running = [w for w in workers if not w.needs_reset]
        idle = [w for w in workers if w.needs_reset]
        workers = running + idle[:max(0, episodes - len(out) - len(running))]
    return out
