"""Toy paddle games: MiniPong (source) and MiniBreakout (target).

Both games live on a 32x32 grid and share the same functional interface::

    state, frame = env_reset("pong", seed=7)
    result = env_step(state, action)   # mutates ``state`` in place
    frame = render(state)

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row; frames are
indexed ``frame[y, x]``.  The ball moves one cell per tick diagonally.  When the
cell it would move into is blocked (wall, paddle or brick) the matching velocity
component flips and the move is recomputed.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SIZE = 32
MAX_STEPS = 1000
PADDLE_HALF = 2  # paddles are 5 cells long

BACKGROUND = 0.2
BRICK = 0.6
PADDLE = 0.8
BALL = 1.0

PONG = "pong"
BREAKOUT = "breakout"
ENV_KINDS = (PONG, BREAKOUT)
N_ACTIONS = {PONG: 6, BREAKOUT: 4}

PONG_MAX_SCORE = 5
BREAKOUT_LIVES = 3
BRICK_ROWS = (2, 3, 4)
BRICK_WIDTH = 4
BRICKS_PER_ROW = SIZE // BRICK_WIDTH
N_BRICKS = len(BRICK_ROWS) * BRICKS_PER_ROW

# Action semantics.  "Right" moves the paddle toward the increasing axis.
NOOP, FIRE, RIGHT, LEFT, RIGHT_FIRE, LEFT_FIRE = range(6)
_MOVE = {NOOP: 0, FIRE: 0, RIGHT: 1, LEFT: -1, RIGHT_FIRE: 1, LEFT_FIRE: -1}
_FIRES = {FIRE, RIGHT_FIRE, LEFT_FIRE}

PONG_AGENT_X = SIZE - 1
PONG_OPPONENT_X = 0
BREAKOUT_PADDLE_Y = SIZE - 1


class EnvError(ValueError):
    """Invalid action or a step taken after the episode ended."""


_KIND_ALIASES = {"minipong": PONG, "pong": PONG, "source": PONG,
                 "minibreakout": BREAKOUT, "breakout": BREAKOUT, "target": BREAKOUT}


def _kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind.lower()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown environment kind {kind!r}") from None


@dataclass
class GameState:
    kind: str
    ball_x: int = SIZE // 2
    ball_y: int = SIZE // 2
    ball_dx: int = 1
    ball_dy: int = 1
    paddle: int = SIZE // 2
    opponent: int = SIZE // 2  # MiniPong only
    bricks: tuple[bool, ...] = ()  # MiniBreakout only, row-major (row, column)
    score: int = 0
    lives: int = 0
    steps: int = 0
    in_play: bool = False
    done: bool = False
    rng_state: dict = field(default_factory=dict, repr=False)

    def copy(self) -> "GameState":
        return copy.deepcopy(self)

    @property
    def bricks_alive(self) -> int:
        return sum(self.bricks)


class StepResult(NamedTuple):
    frame: np.ndarray
    reward: float
    done: bool
    info: dict


def _new_rng_state(seed: int) -> dict:
    return np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF).state


def env_reset(kind: str, seed: int) -> tuple[GameState, np.ndarray]:
    kind = _kind(kind)
    state = GameState(kind=kind, rng_state=_new_rng_state(seed))
    if kind == BREAKOUT:
        state.bricks = (True,) * N_BRICKS
        state.lives = BREAKOUT_LIVES
    return state, render(state)


def _serve(state: GameState) -> None:
    bit_gen = np.random.PCG64()
    bit_gen.state = state.rng_state
    rng = np.random.Generator(bit_gen)
    lo, hi = SIZE // 4, 3 * SIZE // 4
    offset = int(rng.integers(lo, hi))
    dx, dy = (int(v) for v in rng.choice((-1, 1), size=2))
    state.rng_state = bit_gen.state
    if state.kind == PONG:
        state.ball_x, state.ball_y = SIZE // 2, offset
    else:
        state.ball_x, state.ball_y = offset, SIZE // 2
    state.ball_dx, state.ball_dy = dx, dy
    state.in_play = True


def _covers(center: int, pos: int) -> bool:
    return abs(center - pos) <= PADDLE_HALF


def _clamp_paddle(pos: int) -> int:
    return min(max(pos, PADDLE_HALF), SIZE - 1 - PADDLE_HALF)


def _brick_index(x: int, y: int) -> int | None:
    if y not in BRICK_ROWS or not 0 <= x < SIZE:
        return None
    return BRICK_ROWS.index(y) * BRICKS_PER_ROW + x // BRICK_WIDTH


def _pong_tick(state: GameState) -> float:
    x, y = state.ball_x, state.ball_y
    ny = y + state.ball_dy
    if not 0 <= ny < SIZE:
        state.ball_dy = -state.ball_dy
        ny = y + state.ball_dy
    nx = x + state.ball_dx
    if nx == PONG_AGENT_X and _covers(state.paddle, ny):
        state.ball_dx = -1
        nx = x + state.ball_dx
    elif nx == PONG_OPPONENT_X and _covers(state.opponent, ny):
        state.ball_dx = 1
        nx = x + state.ball_dx
    if nx >= SIZE:
        state.in_play = False
        state.score -= 1
        return -1.0
    if nx < 0:
        state.in_play = False
        state.score += 1
        return 1.0
    state.ball_x, state.ball_y = nx, ny
    return 0.0


def _breakout_tick(state: GameState) -> float:
    x, y = state.ball_x, state.ball_y
    nx = x + state.ball_dx
    if not 0 <= nx < SIZE:
        state.ball_dx = -state.ball_dx
        nx = x + state.ball_dx
    ny = y + state.ball_dy
    if ny < 0:
        state.ball_dy = 1
        ny = y + 1
    reward = 0.0
    hit = _brick_index(nx, ny)
    if hit is not None and state.bricks[hit]:
        bricks = list(state.bricks)
        bricks[hit] = False
        state.bricks = tuple(bricks)
        reward = 1.0
        state.ball_dy = -state.ball_dy
        ny = y + state.ball_dy
        again = _brick_index(nx, ny)
        if ny < 0 or (again is not None and state.bricks[again]):
            # boxed in between bricks: only the velocity changes this tick
            return reward
    elif ny == BREAKOUT_PADDLE_Y and _covers(state.paddle, nx):
        state.ball_dy = -1
        ny = y + state.ball_dy
    if ny >= SIZE:
        state.in_play = False
        state.lives -= 1
        return reward
    state.ball_x, state.ball_y = nx, ny
    return reward


def env_step(state: GameState, action: int) -> StepResult:
    """Advance ``state`` by one tick in place and return the transition."""
    if state.done:
        raise EnvError("episode is over; call env_reset first")
    n = N_ACTIONS[state.kind]
    if isinstance(action, (bool, np.bool_)) or int(action) != action or not 0 <= action < n:
        raise EnvError(f"action {action!r} out of range [0, {n}) for {state.kind}")
    action = int(action)

    state.paddle = _clamp_paddle(state.paddle + _MOVE[action])
    if state.kind == PONG and state.in_play and state.steps % 2 == 0:
        if state.ball_y > state.opponent:
            state.opponent = _clamp_paddle(state.opponent + 1)
        elif state.ball_y < state.opponent:
            state.opponent = _clamp_paddle(state.opponent - 1)

    reward = 0.0
    if not state.in_play:
        if action in _FIRES:
            _serve(state)
    elif state.kind == PONG:
        reward = _pong_tick(state)
    else:
        reward = _breakout_tick(state)

    state.steps += 1
    if state.kind == PONG:
        state.done = abs(state.score) >= PONG_MAX_SCORE
    else:
        state.done = state.lives <= 0 or not any(state.bricks)
    state.done = state.done or state.steps >= MAX_STEPS
    info = {"steps": state.steps, "score": state.score, "lives": state.lives}
    return StepResult(render(state), reward, state.done, info)


def render(state: GameState) -> np.ndarray:
    frame = np.full((SIZE, SIZE), BACKGROUND, dtype=np.float32)
    lo = -PADDLE_HALF
    hi = PADDLE_HALF + 1
    if state.kind == PONG:
        frame[state.paddle + lo:state.paddle + hi, PONG_AGENT_X] = PADDLE
        frame[state.opponent + lo:state.opponent + hi, PONG_OPPONENT_X] = PADDLE
    else:
        alive = np.asarray(state.bricks, dtype=bool).reshape(len(BRICK_ROWS), BRICKS_PER_ROW)
        rows = np.repeat(alive, BRICK_WIDTH, axis=1)
        block = frame[BRICK_ROWS[0]:BRICK_ROWS[-1] + 1]
        block[rows] = BRICK
        frame[BREAKOUT_PADDLE_Y, state.paddle + lo:state.paddle + hi] = PADDLE
    if state.in_play:
        frame[state.ball_y, state.ball_x] = BALL
    return frame


class ToyEnv:
    """Stateful convenience wrapper owning one :class:`GameState`."""

    def __init__(self, kind: str):
        self.kind = _kind(kind)
        self.n_actions = N_ACTIONS[self.kind]
        self.state: GameState | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, frame = env_reset(self.kind, seed)
        return frame

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise EnvError("reset() must be called before step()")
        return env_step(self.state, action)
