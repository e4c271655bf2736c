"""Recurrent actor-critic network with hand-written reverse-mode gradients.

Architecture: a stack of 3x3 convolutions (ReLU after each), an LSTM cell on the
flattened feature map, then two linear heads for the policy logits and the
state value.  Every function here is pure given a :class:`ParameterSet`.

Tensor names::

    conv{i}.w  (F_i, C_i, k, k)     conv{i}.b  (F_i,)
    lstm.w     (4H, D + H)          lstm.b     (4H,)      gate order i, f, g, o
    pi.w       (A, H)               pi.b       (A,)
    v.w        (1, H)               v.b        (1,)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np

HEAD_TENSORS = ("pi.w", "pi.b", "v.w", "v.b")

GAMMA = 0.99
T_MAX = 5
ENTROPY_BETA = 0.01
VALUE_COEF = 0.5


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """A loss or gradient came out non-finite."""


@dataclass(frozen=True)
class NetArch:
    n_actions: int
    in_channels: int = 3
    size: int = 32
    filters: tuple[int, ...] = (8, 8, 8, 8)
    strides: tuple[int, ...] = (2, 2, 1, 1)
    kernel: int = 3
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.filters) != len(self.strides) or not self.filters:
            raise ShapeError("filters and strides must be non-empty and the same length")
        if self.n_actions < 1 or self.hidden < 1 or self.kernel % 2 != 1:
            raise ShapeError(f"invalid architecture {self}")

    @cached_property
    def conv_geometry(self) -> tuple[tuple[int, int, int, int, int], ...]:
        """Per conv layer: (in_channels, in_size, out_channels, out_size, stride)."""
        geo = []
        c, h = self.in_channels, self.size
        pad = self.kernel // 2
        for f, s in zip(self.filters, self.strides):
            out = (h + 2 * pad - self.kernel) // s + 1
            geo.append((c, h, f, out, s))
            c, h = f, out
        return tuple(geo)

    @property
    def feature_size(self) -> int:
        _, _, f, out, _ = self.conv_geometry[-1]
        return f * out * out

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    @cached_property
    def _shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, (c, _, f, _, _) in enumerate(self.conv_geometry, start=1):
            shapes[f"conv{i}.w"] = (f, c, self.kernel, self.kernel)
            shapes[f"conv{i}.b"] = (f,)
        hid = self.hidden
        shapes["lstm.w"] = (4 * hid, self.feature_size + hid)
        shapes["lstm.b"] = (4 * hid,)
        shapes["pi.w"] = (self.n_actions, hid)
        shapes["pi.b"] = (self.n_actions,)
        shapes["v.w"] = (1, hid)
        shapes["v.b"] = (1,)
        return shapes

    def to_text(self) -> str:
        return ";".join([
            f"n_actions={self.n_actions}",
            f"in_channels={self.in_channels}",
            f"size={self.size}",
            "filters=" + ",".join(map(str, self.filters)),
            "strides=" + ",".join(map(str, self.strides)),
            f"kernel={self.kernel}",
            f"hidden={self.hidden}",
        ])

    @classmethod
    def from_text(cls, text: str) -> "NetArch":
        try:
            fields = dict(item.split("=", 1) for item in text.split(";") if item)
            return cls(
                n_actions=int(fields["n_actions"]),
                in_channels=int(fields["in_channels"]),
                size=int(fields["size"]),
                filters=tuple(int(v) for v in fields["filters"].split(",")),
                strides=tuple(int(v) for v in fields["strides"].split(",")),
                kernel=int(fields["kernel"]),
                hidden=int(fields["hidden"]),
            )
        except (KeyError, ValueError) as exc:
            raise ShapeError(f"bad architecture descriptor {text!r}") from exc


@dataclass
class ParameterSet:
    arch: NetArch
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.arch.tensor_shapes())

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def validate(self) -> "ParameterSet":
        expected = self.arch.tensor_shapes()
        if set(expected) != set(self.tensors):
            raise ShapeError(f"tensor names {sorted(self.tensors)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
        if not all(np.isfinite(t).all() for t in self.tensors.values()):
            raise DivergenceError("parameter set contains non-finite entries")
        return self

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def _fan_in(name: str, shape: tuple[int, ...], arch: NetArch) -> int:
    if name.endswith(".w"):
        return int(np.prod(shape[1:]))
    weight = arch.tensor_shapes()[name[:-2] + ".w"]
    return int(np.prod(weight[1:]))


def init_params(arch: NetArch, seed: int = 0, dtype=np.float32,
                only: tuple[str, ...] | None = None) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for every tensor, seeded."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.tensor_shapes().items():
        bound = 1.0 / np.sqrt(_fan_in(name, shape, arch))
        values = rng.uniform(-bound, bound, size=shape)
        if only is None or name in only:
            tensors[name] = values.astype(dtype)
    return ParameterSet(arch, tensors)


def zero_params(arch: NetArch, dtype=np.float32) -> ParameterSet:
    return ParameterSet(arch, {k: np.zeros(s, dtype) for k, s in arch.tensor_shapes().items()})


def init_transfer_weights(source: ParameterSet, target_arch: NetArch, seed: int = 1) -> ParameterSet:
    """Copy the conv and LSTM tensors from ``source``; draw fresh output heads."""
    src_shapes = {k: v for k, v in source.arch.tensor_shapes().items() if k not in HEAD_TENSORS}
    tgt_shapes = {k: v for k, v in target_arch.tensor_shapes().items() if k not in HEAD_TENSORS}
    if src_shapes != tgt_shapes:
        raise ShapeError("source and target bodies differ; only the head widths may change")
    dtype = source["lstm.w"].dtype
    fresh = init_params(target_arch, seed=seed, dtype=dtype, only=HEAD_TENSORS)
    tensors = {k: source[k].copy() for k in src_shapes}
    tensors.update(fresh.tensors)
    return ParameterSet(target_arch, {k: tensors[k] for k in target_arch.tensor_shapes()})


# --------------------------------------------------------------------------- convs
#
# Images are processed in "rows": a batch of B sequences of length T is flattened
# worker-major, row index b * T + t.  Conv activations are kept as (F, rows * P)
# with P the number of output pixels, so each layer is one gather plus one matmul.

@lru_cache(maxsize=None)
def _im2col_index(c: int, h: int, k: int, stride: int, rows: int) -> np.ndarray:
    """Gather indices, shape (c*k*k, rows*P), into a flat (rows, c*h*h + 1) buffer.

    The last slot of every buffer row is a zero sentinel that stands in for padding.
    """
    pad = k // 2
    out = (h + 2 * pad - k) // stride + 1
    n = c * h * h
    ch, ky, kx = np.meshgrid(np.arange(c), np.arange(k), np.arange(k), indexing="ij")
    oy, ox = np.meshgrid(np.arange(out), np.arange(out), indexing="ij")
    iy = oy.reshape(1, -1) * stride + ky.reshape(-1, 1) - pad
    ix = ox.reshape(1, -1) * stride + kx.reshape(-1, 1) - pad
    inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < h)
    flat = np.where(inside, ch.reshape(-1, 1) * h * h + iy * h + ix, n)
    offsets = (np.arange(rows) * (n + 1)).reshape(1, rows, 1)
    idx = (flat[:, None, :] + offsets).reshape(c * k * k, rows * out * out)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def _col2im_index(c: int, h: int, k: int, stride: int, rows: int) -> np.ndarray:
    """Transpose of :func:`_im2col_index` as a gather: shape (m, rows * c*h*h).

    Column j lists every flat position of the im2col matrix that reads input
    element j, padded with a sentinel (one past the end) that points at a zero.
    Summing the gathered values over axis 0 is the scatter-add im2col's backward needs.
    """
    idx = _im2col_index(c, h, k, stride, rows).ravel()
    n = c * h * h
    total = rows * (n + 1)
    order = np.argsort(idx, kind="stable")
    counts = np.bincount(idx, minlength=total)
    real = np.ones(total, dtype=bool)
    real[n::n + 1] = False
    width = int(counts[real].max())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(idx.size) - np.repeat(starts, counts)
    inv = np.full((total, width), idx.size, dtype=np.intp)
    keep = real[idx[order]]
    inv[idx[order][keep], slot[keep]] = order[keep]
    inv = np.ascontiguousarray(inv.reshape(rows, n + 1, width)[:, :n].reshape(rows * n, width).T)
    inv.setflags(write=False)
    return inv


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, geo, rows: int):
    """x: (rows, c*h*h). Returns the im2col matrix and the ReLU output (F, rows*P)."""
    c, h, f, _, stride = geo
    buf = np.zeros((rows, c * h * h + 1), dtype=w.dtype)
    buf[:, :-1] = x
    cols = buf.ravel()[_im2col_index(c, h, w.shape[-1], stride, rows)]
    out = w.reshape(f, -1) @ cols
    out += b[:, None]
    np.maximum(out, 0, out=out)
    return cols, out


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, geo, batch: int,
                   rows: int, need_input_grad: bool):
    """Per-sequence weight grads (batch, *w.shape), (batch, F) and the input grad."""
    c, h, f, _, stride = geo
    k = w.shape[-1]
    d_b = dout.reshape(f, batch, -1)
    c_b = cols.reshape(cols.shape[0], batch, -1)
    dw = np.matmul(d_b.transpose(1, 0, 2), c_b.transpose(1, 2, 0)).reshape((batch,) + w.shape)
    db = d_b.sum(axis=2).T
    if not need_input_grad:
        return dw, db, None
    dcols = np.zeros(dout.shape[1] * w[0].size + 1, dtype=w.dtype)
    np.matmul(w.reshape(f, -1).T, dout, out=dcols[:-1].reshape(-1, dout.shape[1]))
    dx = dcols[_col2im_index(c, h, k, stride, rows)].sum(axis=0)
    return dw, db, dx.reshape(rows, c * h * h)


def _to_rows(out: np.ndarray, rows: int) -> np.ndarray:
    """(F, rows*P) -> (rows, F*P)."""
    f = out.shape[0]
    return out.reshape(f, rows, -1).transpose(1, 0, 2).reshape(rows, -1)


def _from_rows(dx: np.ndarray, f: int, rows: int) -> np.ndarray:
    """(rows, F*P) -> (F, rows*P)."""
    return dx.reshape(rows, f, -1).transpose(1, 0, 2).reshape(f, -1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------- forward

class Forward(NamedTuple):
    policy: np.ndarray
    value: float
    state: tuple[np.ndarray, np.ndarray]
    activations: list[np.ndarray]


class BatchForward(NamedTuple):
    policies: np.ndarray      # (B, A)
    values: np.ndarray        # (B,)
    state: tuple[np.ndarray, np.ndarray]


def initial_state(arch: NetArch, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(arch.hidden, dtype), np.zeros(arch.hidden, dtype)


def _check_obs(arch: NetArch, obs: np.ndarray) -> None:
    expected = (arch.in_channels, arch.size, arch.size)
    if obs.shape[-3:] != expected:
        raise ShapeError(f"observation shape {obs.shape}, expected (..., {expected})")


def _run(params: ParameterSet, obs: np.ndarray, state, keep: bool):
    """Forward over obs of shape (B, T, C, S, S) from LSTM state (h, c), each (B, H)."""
    arch = params.arch
    w = params["lstm.w"]
    dtype = w.dtype
    batch, steps = obs.shape[:2]
    rows = batch * steps
    x = np.ascontiguousarray(obs, dtype=dtype).reshape(rows, -1)
    conv_cache = []
    for i, geo in enumerate(arch.conv_geometry, start=1):
        cols, out = _conv_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"], geo, rows)
        conv_cache.append((cols, out))
        x = _to_rows(out, rows)

    hid = arch.hidden
    d = x.shape[1]
    x = x.reshape(batch, steps, d)
    zx = x @ w[:, :d].T + params["lstm.b"]
    wh_t = w[:, d:].T
    if state is None:
        state = (np.zeros((batch, hid), dtype), np.zeros((batch, hid), dtype))
    h, c = state
    hs = np.empty((batch, steps, hid), dtype)
    cs = np.empty((batch, steps, hid), dtype)
    gates = np.empty((batch, steps, 4 * hid), dtype)
    for t in range(steps):
        z = zx[:, t] + h @ wh_t
        g = _sigmoid(z)
        g[:, 2 * hid:3 * hid] = np.tanh(z[:, 2 * hid:3 * hid])
        c = g[:, hid:2 * hid] * c + g[:, :hid] * g[:, 2 * hid:3 * hid]
        h = g[:, 3 * hid:] * np.tanh(c)
        gates[:, t] = g
        hs[:, t] = h
        cs[:, t] = c
    logits = hs @ params["pi.w"].T + params["pi.b"]
    values = (hs @ params["v.w"].T)[..., 0] + params["v.b"][0]
    cache = None
    if keep:
        cache = dict(conv=conv_cache, x=x, hs=hs, cs=cs, gates=gates, state0=state)
    return logits, values, (h, c), conv_cache, cache


def forward_batch(params: ParameterSet, obs: np.ndarray, state=None) -> BatchForward:
    """One step for B independent sequences: obs (B, C, S, S), state ((B, H), (B, H))."""
    _check_obs(params.arch, obs)
    logits, values, new_state, _, _ = _run(params, obs[:, None], state, keep=False)
    policies = np.exp(_log_softmax(logits[:, 0].astype(np.float64)))
    return BatchForward(policies, values[:, 0].astype(np.float64), new_state)


def forward(params: ParameterSet, obs: np.ndarray, recurrent_state=None) -> Forward:
    """One step: action distribution, value, next LSTM state and post-ReLU conv maps."""
    _check_obs(params.arch, obs)
    if obs.ndim != 3:
        raise ShapeError(f"forward expects a single (C, S, S) observation, got {obs.shape}")
    state = None
    if recurrent_state is not None:
        state = (recurrent_state[0][None, :], recurrent_state[1][None, :])
    logits, values, (h, c), conv_cache, _ = _run(params, obs[None, None], state, keep=False)
    policy = np.exp(_log_softmax(logits[0, 0].astype(np.float64)))
    maps = [out.reshape(geo[2], geo[3], geo[3])
            for (_, out), geo in zip(conv_cache, params.arch.conv_geometry)]
    return Forward(policy, float(values[0, 0]), (h[0], c[0]), maps)


def dump_activations(params: ParameterSet, obs: np.ndarray, layer: int,
                     recurrent_state=None) -> list[np.ndarray]:
    """Post-ReLU feature maps of conv ``layer`` (1-based), each scaled to max 1."""
    if not 1 <= layer <= len(params.arch.filters):
        raise ValueError(f"layer must be in 1..{len(params.arch.filters)}, got {layer}")
    maps = forward(params, obs, recurrent_state).activations[layer - 1]
    out = []
    for m in maps:
        top = m.max()
        out.append(m / top if top > 0 else np.zeros_like(m))
    return out


# --------------------------------------------------------------------------- loss

@dataclass
class Trajectory:
    observations: np.ndarray          # (T, C, S, S)
    actions: np.ndarray               # (T,) int
    rewards: np.ndarray               # (T,)
    values: np.ndarray                # (T,) critic estimates recorded during the rollout
    log_probs: np.ndarray             # (T, A)
    bootstrap_value: float = 0.0      # 0 when the segment ended the episode
    initial_state: tuple | None = None
    terminal: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self) -> "Trajectory":
        if len(self) < 1:
            raise ValueError("trajectory is empty")
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if (lp > 1e-12).any() or not np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("log-probabilities must be <= 0 and normalised")
        return self


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("cannot compute returns of an empty trajectory")
    out = np.empty_like(rewards)
    running = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def n_step_returns(trajectory: Trajectory, gamma: float = GAMMA) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrapped n-step returns and advantages ``R_t - V(s_t)``."""
    returns = discounted_returns(trajectory.rewards, gamma, trajectory.bootstrap_value)
    return returns, returns - np.asarray(trajectory.values, dtype=np.float64)


def _stack(params: ParameterSet, trajectories: list[Trajectory], gamma: float):
    """Pad a list of segments to a common length; returns arrays plus a validity mask."""
    arch = params.arch
    dtype = params["lstm.w"].dtype
    batch = len(trajectories)
    steps = max(len(tr) for tr in trajectories)
    if min(len(tr) for tr in trajectories) < 1:
        raise ValueError("trajectory is empty")
    obs = np.zeros((batch, steps, arch.in_channels, arch.size, arch.size), dtype)
    actions = np.zeros((batch, steps), dtype=np.intp)
    returns = np.zeros((batch, steps))
    mask = np.zeros((batch, steps))
    h0 = np.zeros((batch, arch.hidden), dtype)
    c0 = np.zeros((batch, arch.hidden), dtype)
    for b, tr in enumerate(trajectories):
        n = len(tr)
        _check_obs(arch, tr.observations)
        obs[b, :n] = tr.observations
        actions[b, :n] = tr.actions
        returns[b, :n] = discounted_returns(tr.rewards, gamma, tr.bootstrap_value)
        mask[b, :n] = 1.0
        if tr.initial_state is not None:
            h0[b], c0[b] = tr.initial_state
    return obs, actions, returns, mask, (h0, c0)


def _policy_terms(logits, values, actions, returns, mask, beta_entropy, c_value, advantages=None):
    logp = _log_softmax(logits.astype(np.float64))
    p = np.exp(logp)
    if advantages is None:
        advantages = returns - values
    entropy = -(p * logp).sum(axis=-1)
    picked = np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    per_step = (-picked * advantages - beta_entropy * entropy
                + c_value * (returns - values) ** 2) * mask
    return per_step.sum(axis=1), logp, p, entropy, advantages


def a3c_loss(params: ParameterSet, trajectory: Trajectory, gamma: float = GAMMA,
             beta_entropy: float = ENTROPY_BETA, c_value: float = VALUE_COEF,
             advantages: np.ndarray | None = None) -> float:
    """Loss value only.  ``advantages`` pins the policy-term weights, as the
    stop-gradient in :func:`a3c_loss_and_grads` does (used for finite differences)."""
    obs, actions, returns, mask, state = _stack(params, [trajectory], gamma)
    logits, values, _, _, _ = _run(params, obs, state, keep=False)
    if advantages is not None:
        advantages = np.asarray(advantages, dtype=np.float64)[None, :]
    losses, *_ = _policy_terms(logits, values, actions, returns, mask,
                               beta_entropy, c_value, advantages)
    return float(losses[0])


def a3c_loss_and_grads(params: ParameterSet, trajectory: Trajectory, gamma: float = GAMMA,
                       beta_entropy: float = ENTROPY_BETA, c_value: float = VALUE_COEF
                       ) -> tuple[float, dict[str, np.ndarray]]:
    """Actor-critic loss over one n-step segment and its exact gradients.

    loss = sum_t -log pi(a_t|s_t) A_t - beta H(pi(.|s_t)) + c (R_t - V(s_t))^2

    ``A_t = R_t - V(s_t)`` is held constant in the policy term.  Gradients flow
    through every conv layer and back through time over the segment; the
    segment's initial recurrent state is a constant.
    """
    losses, grads = a3c_loss_and_grads_batch(params, [trajectory], gamma, beta_entropy, c_value)
    return losses[0], grads[0]


def a3c_loss_and_grads_batch(params: ParameterSet, trajectories: list[Trajectory],
                             gamma: float = GAMMA, beta_entropy: float = ENTROPY_BETA,
                             c_value: float = VALUE_COEF
                             ) -> tuple[list[float], list[dict[str, np.ndarray]]]:
    """Same as :func:`a3c_loss_and_grads` for several segments at once.

    Segments are padded to a common length and pushed through the network as
    one batch; the returned gradients are still separate per segment.
    """
    arch = params.arch
    obs, actions, returns, mask, state = _stack(params, trajectories, gamma)
    batch, steps = actions.shape
    rows = batch * steps
    logits, values, _, _, cache = _run(params, obs, state, keep=True)
    dtype = logits.dtype

    losses, logp, p, entropy, adv = _policy_terms(
        logits, values, actions, returns, mask, beta_entropy, c_value)
    if not np.isfinite(losses).all():
        raise DivergenceError("non-finite loss")

    # d(-log p_a A)/dz = (p - onehot(a)) A ;  d(-beta H)/dz = beta p (log p + H)
    dlogits = p.copy()
    np.put_along_axis(dlogits, actions[..., None],
                      np.take_along_axis(p, actions[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= adv[..., None]
    dlogits += beta_entropy * p * (logp + entropy[..., None])
    dlogits *= mask[..., None]
    dvalues = -2.0 * c_value * adv * mask
    dlogits = dlogits.astype(dtype)
    dvalues = dvalues.astype(dtype)

    grads: dict[str, np.ndarray] = {}
    hs = cache["hs"]                                           # (B, T, H)
    grads["pi.w"] = np.matmul(dlogits.transpose(0, 2, 1), hs)  # (B, A, H)
    grads["pi.b"] = dlogits.sum(axis=1)
    grads["v.w"] = np.matmul(dvalues[:, None, :], hs)          # (B, 1, H)
    grads["v.b"] = dvalues.sum(axis=1, keepdims=True)
    dh_out = dlogits @ params["pi.w"] + dvalues[..., None] * params["v.w"]

    hid = arch.hidden
    x = cache["x"]                                             # (B, T, D)
    d = x.shape[2]
    w = params["lstm.w"]
    wh = w[:, d:]
    cs, gates = cache["cs"], cache["gates"]
    h0, c0 = cache["state0"]
    dz_all = np.empty((batch, steps, 4 * hid), dtype)
    dh_next = np.zeros((batch, hid), dtype)
    dc_next = np.zeros((batch, hid), dtype)
    for t in range(steps - 1, -1, -1):
        g = gates[:, t]
        i, f, gg, o = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:3 * hid], g[:, 3 * hid:]
        tc = np.tanh(cs[:, t])
        c_prev = cs[:, t - 1] if t > 0 else c0
        dh = dh_out[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, t]
        dz[:, :hid] = dc * gg * i * (1.0 - i)
        dz[:, hid:2 * hid] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hid:3 * hid] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * hid:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ wh
    h_prev = np.concatenate([h0[:, None, :], hs[:, :-1]], axis=1)
    dz_t = dz_all.transpose(0, 2, 1)
    grads["lstm.w"] = np.concatenate([np.matmul(dz_t, x), np.matmul(dz_t, h_prev)], axis=2)
    grads["lstm.b"] = dz_all.sum(axis=1)
    dx = (dz_all @ w[:, :d]).reshape(rows, d)

    geos = arch.conv_geometry
    for i in range(len(geos), 0, -1):
        geo = geos[i - 1]
        cols, out = cache["conv"][i - 1]
        dout = _from_rows(dx, geo[2], rows)
        dout *= out > 0
        dw, db, dx = _conv_backward(dout, cols, params[f"conv{i}.w"], geo, batch, rows, i > 1)
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db

    names = arch.tensor_shapes()
    per_seq = []
    for b in range(batch):
        g = {name: grads[name][b].astype(dtype, copy=False) for name in names}
        if not all(np.isfinite(v).all() for v in g.values()):
            raise DivergenceError("non-finite gradient")
        per_seq.append(g)
    return [float(v) for v in losses], per_seq
