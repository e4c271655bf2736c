"""Attention-map preprocessing: rotate, binarize, dilate, then blur twice.

The result is a ``(3, 32, 32)`` array.  Channel 0 is the binary dilated mask,
channels 1 and 2 are successive 3x3 box blurs of it (zero padding).
"""
from __future__ import annotations

import numpy as np

from .envs import BREAKOUT, _kind


def rotate_to_horizontal(frame: np.ndarray, env_kind: str) -> np.ndarray:
    """Rotate so the ball's main axis of travel is horizontal.

    MiniPong already moves horizontally.  MiniBreakout is turned 90 degrees
    counter-clockwise: pixel ``(x, y)`` lands on ``(y, W - 1 - x)``.
    """
    if _kind(env_kind) == BREAKOUT:
        return frame[:, ::-1].T  # same as np.rot90(frame, 1), without the overhead
    return frame


def lower_median(values: np.ndarray) -> float:
    flat = np.sort(values, axis=None)  # faster than partition on few-valued frames
    return flat[(flat.size - 1) // 2]


def binarize_median_subtract(frame: np.ndarray) -> np.ndarray:
    return (frame - lower_median(frame) > 0).astype(frame.dtype)


def _separable3(img: np.ndarray, op) -> np.ndarray:
    # 3x3 window reduction with zero padding, done as a row pass then a column pass
    p = np.zeros((img.shape[0] + 2, img.shape[1] + 2), dtype=img.dtype)
    p[1:-1, 1:-1] = img
    rows = op(op(p[:, :-2], p[:, 1:-1]), p[:, 2:])
    return op(op(rows[:-2], rows[1:-1]), rows[2:])


def dilate(frame: np.ndarray, radius: int = 1) -> np.ndarray:
    """3x3 square dilation of a binary image, zero padded."""
    if radius != 1:
        raise ValueError("only radius=1 (3x3 structuring element) is supported")
    if not ((frame == 0) | (frame == 1)).all():
        raise ValueError("dilate expects a binary {0, 1} image")
    return _separable3(frame, np.maximum)


def box_blur(img: np.ndarray) -> np.ndarray:
    return _separable3(img, np.add) / 9.0


def attention_preprocess(frame: np.ndarray, env_kind: str) -> np.ndarray:
    mask = dilate(binarize_median_subtract(rotate_to_horizontal(frame, env_kind)))
    once = box_blur(mask)
    return np.stack([mask, once, box_blur(once)]).astype(np.float32)
