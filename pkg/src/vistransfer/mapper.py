"""Source-to-target mapping: visual mapper, static action map and reward map.

Three visual mappers are available:

``analytic``
    Builds the MiniBreakout state that corresponds to a MiniPong state (ball
    coordinates transposed, agent paddle moved to the bottom row, all bricks
    alive), renders it and preprocesses it.  This is the ground-truth mapper.
``linear``
    An affine map between preprocessed frames fit by ridge least squares on
    (source, target) pairs.  It stands in for a learned, imperfect mapper.
``identity``
    Passes the preprocessed source frame through untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import BREAKOUT, N_BRICKS, PONG, BREAKOUT_LIVES, GameState, render
from .preprocess import attention_preprocess

ACTION_MAP = (1, 1, 2, 3, 2, 3)  # NoOp, Fire, Right, Left, RightFire, LeftFire -> target
INVERSE_ACTION_MAP = (0, 1, 2, 3)
MAPPER_KINDS = ("analytic", "linear", "identity")


def map_action(a_source: int) -> int:
    if not 0 <= a_source < len(ACTION_MAP) or int(a_source) != a_source:
        raise ValueError(f"source action {a_source!r} outside [0, {len(ACTION_MAP)})")
    return ACTION_MAP[int(a_source)]


def inverse_action(a_target: int) -> int:
    """Canonical source action for a target action.

    Target NoOp has no true preimage under :func:`map_action`; it is sent to
    source NoOp so a mapped worker can still stand still.
    """
    if not 0 <= a_target < len(INVERSE_ACTION_MAP) or int(a_target) != a_target:
        raise ValueError(f"target action {a_target!r} outside [0, {len(INVERSE_ACTION_MAP)})")
    return INVERSE_ACTION_MAP[int(a_target)]


def map_reward(r_source: float) -> float:
    return r_source


def analytic_target_state(state: GameState) -> GameState:
    if state.kind != PONG:
        raise ValueError("analytic mapping expects a MiniPong state")
    return GameState(
        kind=BREAKOUT,
        ball_x=state.ball_y,
        ball_y=state.ball_x,
        ball_dx=state.ball_dy,
        ball_dy=state.ball_dx,
        paddle=state.paddle,
        bricks=(True,) * N_BRICKS,
        lives=BREAKOUT_LIVES,
        steps=state.steps,
        in_play=state.in_play,
    )


def analytic_map(state: GameState) -> np.ndarray:
    return attention_preprocess(render(analytic_target_state(state)), BREAKOUT)


@dataclass(frozen=True)
class LinearMapper:
    weights: np.ndarray        # (out_dim, in_dim + 1), last column is the bias
    n_pairs: int
    residual_mse: float
    frame_shape: tuple[int, ...] = (3, 32, 32)

    def predict(self, source: np.ndarray) -> np.ndarray:
        flat = np.ravel(source)
        out = self.weights[:, :-1] @ flat + self.weights[:, -1]
        return out.reshape(self.frame_shape)


class DegenerateSystemError(np.linalg.LinAlgError):
    pass


def fit_affine(src: np.ndarray, tgt: np.ndarray, ridge: float) -> np.ndarray:
    """argmin_W sum ||W [x; 1] - y||^2 + ridge ||W||^2 for rows x of ``src``, y of ``tgt``.

    Uses the primal normal equations when there are more pairs than input
    dimensions and the dual (kernel) form otherwise; both give the same W.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    n = src.shape[0]
    if n < 1 or tgt.shape[0] != n:
        raise ValueError("need at least one (source, target) pair of matching count")
    design = np.hstack([src.reshape(n, -1), np.ones((n, 1))])
    y = tgt.reshape(n, -1)
    dim = design.shape[1]
    try:
        if n >= dim:
            gram = design.T @ design + ridge * np.eye(dim)
            if ridge == 0 and np.linalg.matrix_rank(gram) < dim:
                raise DegenerateSystemError("normal equations are singular; use ridge > 0")
            return np.linalg.solve(gram, design.T @ y).T
        if ridge == 0:
            raise DegenerateSystemError(
                f"{n} pairs for {dim} unknowns per output; use ridge > 0")
        kernel = design @ design.T + ridge * np.eye(n)
        return (design.T @ np.linalg.solve(kernel, y)).T
    except np.linalg.LinAlgError as exc:
        if isinstance(exc, DegenerateSystemError):
            raise
        raise DegenerateSystemError(str(exc)) from exc


def fit_linear_mapper(pairs, ridge: float = 1e-3) -> LinearMapper:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (source, target) pair")
    shape = np.shape(pairs[0][1])
    src = np.stack([np.ravel(s) for s, _ in pairs])
    tgt = np.stack([np.ravel(t) for _, t in pairs])
    weights = fit_affine(src, tgt, ridge)
    pred = src @ weights[:, :-1].T + weights[:, -1]
    mse = float(np.mean((pred - tgt) ** 2))
    return LinearMapper(weights, len(pairs), mse, tuple(shape))


def apply_mapper(kind: str, source, linear: LinearMapper | None = None) -> np.ndarray:
    """Map a source observation into a target-styled preprocessed frame.

    ``source`` is a MiniPong :class:`GameState`, or (for ``linear`` and
    ``identity``) an already preprocessed source frame.
    """
    if kind == "analytic":
        if not isinstance(source, GameState):
            raise TypeError("the analytic mapper needs the source GameState")
        return analytic_map(source)
    if kind not in MAPPER_KINDS:
        raise ValueError(f"unknown mapper kind {kind!r}")
    frame = source
    if isinstance(source, GameState):
        frame = attention_preprocess(render(source), PONG)
    if kind == "identity":
        return frame
    if linear is None:
        raise ValueError("linear mapper has not been fitted")
    return np.clip(linear.predict(frame), 0.0, 1.0).astype(np.float32)


def analytic_pairs(states) -> list[tuple[np.ndarray, np.ndarray]]:
    """(preprocessed source frame, analytic target frame) for each MiniPong state."""
    return [(attention_preprocess(render(s), PONG), analytic_map(s)) for s in states]


def sample_source_states(n: int, seed: int = 0) -> list[GameState]:
    """``n`` MiniPong states visited by a uniformly random player."""
    from .envs import N_ACTIONS, ToyEnv
    rng = np.random.default_rng(seed)
    env = ToyEnv(PONG)
    env.reset(int(rng.integers(2**31)))
    states = []
    while len(states) < n:
        states.append(env.state.copy())
        if env.step(int(rng.integers(N_ACTIONS[PONG]))).done:
            env.reset(int(rng.integers(2**31)))
    return states
