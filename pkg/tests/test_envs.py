import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vistransfer import envs
from vistransfer.envs import (BREAKOUT, PONG, EnvError, GameState, ToyEnv, env_reset, env_step,
                              render)

PALETTE = {np.float32(v) for v in (envs.BACKGROUND, envs.BRICK, envs.PADDLE, envs.BALL)}


def in_play_state(kind, **kw):
    state, _ = env_reset(kind, 0)
    state.in_play = True
    for k, v in kw.items():
        setattr(state, k, v)
    return state


def test_pong_reset_is_canonical():
    state, frame = env_reset("MiniPong", 7)
    assert (state.paddle, state.opponent, state.in_play, state.score) == (16, 16, False, 0)
    assert np.array_equal(frame, render(state))


def test_breakout_reset_is_canonical():
    state, _ = env_reset("MiniBreakout", 7)
    assert state.bricks_alive == 24
    assert state.lives == 3 and state.paddle == 16


def test_same_seed_same_state():
    a, fa = env_reset(PONG, 42)
    b, fb = env_reset(PONG, 42)
    assert a == b and np.array_equal(fa, fb)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        env_reset("tetris", 0)


def test_brick_hit_reflects_and_scores():
    state = in_play_state(BREAKOUT, ball_x=5, ball_y=5, ball_dx=1, ball_dy=-1)
    brick = envs._brick_index(6, 4)
    assert state.bricks[brick]
    result = env_step(state, envs.NOOP)
    assert result.reward == 1.0
    assert not state.bricks[brick]
    assert state.ball_dy == 1
    assert (state.ball_x, state.ball_y) == (6, 6)
    assert state.bricks_alive == 23


def test_pong_noop_while_waiting_only_counts_the_step():
    state, _ = env_reset(PONG, 3)
    before = state.copy()
    result = env_step(state, envs.NOOP)
    assert result.reward == 0.0
    before.steps += 1
    assert state == before


def test_pong_miss_on_the_right_costs_a_point():
    state = in_play_state(PONG, ball_x=31, ball_y=5, ball_dx=1, ball_dy=1, paddle=25)
    result = env_step(state, envs.NOOP)
    assert result.reward == -1.0 and state.score == -1 and not state.in_play


def test_pong_ball_past_opponent_scores():
    state = in_play_state(PONG, ball_x=0, ball_y=25, ball_dx=-1, ball_dy=1, opponent=5)
    assert env_step(state, envs.NOOP).reward == 1.0


def test_pong_paddle_returns_ball():
    state = in_play_state(PONG, ball_x=30, ball_y=15, ball_dx=1, ball_dy=1, paddle=16)
    assert env_step(state, envs.NOOP).reward == 0.0
    assert state.ball_dx == -1 and state.ball_x == 29


def test_breakout_life_loss_gives_zero_reward():
    state = in_play_state(BREAKOUT, ball_x=3, ball_y=31, ball_dx=1, ball_dy=1, paddle=20)
    result = env_step(state, envs.NOOP)
    assert result.reward == 0.0 and state.lives == 2 and not state.in_play


def test_breakout_paddle_returns_ball():
    state = in_play_state(BREAKOUT, ball_x=15, ball_y=30, ball_dx=1, ball_dy=1, paddle=16)
    env_step(state, envs.NOOP)
    assert state.ball_dy == -1 and state.ball_y == 29


def test_wall_reflection():
    state = in_play_state(BREAKOUT, ball_x=31, ball_y=20, ball_dx=1, ball_dy=1, paddle=2)
    env_step(state, envs.NOOP)
    assert (state.ball_x, state.ball_dx) == (30, -1)


def test_fire_serves_the_ball():
    state, _ = env_reset(BREAKOUT, 11)
    env_step(state, envs.FIRE)
    assert state.in_play
    assert int((render(state) == np.float32(envs.BALL)).sum()) == 1


def test_paddle_moves_and_clamps():
    state, _ = env_reset(BREAKOUT, 0)
    env_step(state, envs.RIGHT)
    assert state.paddle == 17
    for _ in range(40):
        env_step(state, envs.LEFT)
    assert state.paddle == envs.PADDLE_HALF


def test_opponent_moves_on_even_steps_only():
    state = in_play_state(PONG, ball_x=10, ball_y=25, ball_dx=-1, ball_dy=0)
    state.ball_dy = 1
    positions = []
    for _ in range(4):
        positions.append(state.opponent)
        env_step(state, envs.NOOP)
    # steps 0 and 2 move, steps 1 and 3 do not
    assert positions == [16, 17, 17, 18]


@pytest.mark.parametrize("kind,bad", [(PONG, 6), (PONG, -1), (BREAKOUT, 4), (BREAKOUT, 1.5)])
def test_bad_action_rejected(kind, bad):
    state, _ = env_reset(kind, 0)
    with pytest.raises(EnvError):
        env_step(state, bad)


def test_step_after_done_rejected():
    state, _ = env_reset(PONG, 0)
    state.done = True
    with pytest.raises(EnvError):
        env_step(state, 0)


def test_toyenv_requires_reset():
    with pytest.raises(EnvError):
        ToyEnv(PONG).step(0)


def test_fresh_breakout_frame_has_three_brick_rows():
    state, frame = env_reset(BREAKOUT, 1)
    assert int((frame == np.float32(envs.BRICK)).sum()) == 3 * 32
    assert int((frame == np.float32(envs.BALL)).sum()) == 0
    assert np.array_equal(render(state), render(state))


def _play(kind, seed, actions):
    env = ToyEnv(kind)
    env.reset(seed)
    out, total = [], 0.0
    for a in actions:
        r = env.step(a)
        out.append(r)
        total += r.reward
        if r.done:
            break
    return out, total, env.state


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from([PONG, BREAKOUT]), seed=st.integers(0, 2**63 - 1),
       action_seed=st.integers(0, 2**32 - 1))
def test_random_play_invariants(kind, seed, action_seed):
    rng = np.random.default_rng(action_seed)
    actions = rng.integers(0, envs.N_ACTIONS[kind], size=envs.MAX_STEPS)
    results, total, state = _play(kind, seed, actions)
    again, total2, _ = _play(kind, seed, actions)
    assert total == total2
    assert all(np.array_equal(a.frame, b.frame) and a.reward == b.reward
               for a, b in zip(results, again))
    assert results[-1].done and len(results) <= envs.MAX_STEPS
    bricks = []
    for r in results:
        assert r.reward in (-1.0, 0.0, 1.0)
        assert set(np.unique(r.frame)) <= PALETTE
        assert int((r.frame == np.float32(envs.BALL)).sum()) <= 1
        bricks.append(int((r.frame == np.float32(envs.BRICK)).sum()))
    assert all(b1 >= b2 for b1, b2 in zip(bricks, bricks[1:]))
    if kind == PONG:
        assert -5 <= total <= 5 and abs(state.score) <= 5
    else:
        assert 0 <= total <= 24 and 0 <= state.lives <= 3
    lo, hi = envs.PADDLE_HALF, envs.SIZE - 1 - envs.PADDLE_HALF
    assert lo <= state.paddle <= hi and lo <= state.opponent <= hi


def test_ball_pixel_matches_in_play_flag():
    env = ToyEnv(PONG)
    env.reset(5)
    rng = np.random.default_rng(0)
    for _ in range(300):
        r = env.step(int(rng.integers(6)))
        balls = int((r.frame == np.float32(envs.BALL)).sum())
        assert balls == (1 if env.state.in_play else 0)
        if r.done:
            break


def test_state_copy_is_independent():
    state, _ = env_reset(BREAKOUT, 2)
    twin = state.copy()
    env_step(state, envs.FIRE)
    assert twin.in_play is False and isinstance(twin, GameState)
