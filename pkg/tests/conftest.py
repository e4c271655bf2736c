import numpy as np
from hypothesis import strategies as st

from vistransfer import envs

PALETTE = np.array([envs.BACKGROUND, envs.BRICK, envs.PADDLE, envs.BALL], dtype=np.float32)


def random_frame(rng: np.random.Generator, density: float | None = None) -> np.ndarray:
    """Palette frame where a random fraction of cells are non-background."""
    if density is None:
        density = rng.uniform(0.0, 0.45)
    frame = np.full((envs.SIZE, envs.SIZE), envs.BACKGROUND, dtype=np.float32)
    mask = rng.random(frame.shape) < density
    frame[mask] = rng.choice(PALETTE[1:], size=int(mask.sum()))
    return frame


@st.composite
def frames(draw, max_density=0.45):
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.floats(0.0, max_density))
    return random_frame(np.random.default_rng(seed), density)
