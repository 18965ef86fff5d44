"""Separable bilinear sampling expressed as small interpolation matrices.

Sampling an image at an axis-aligned grid of positions is ``Ry @ img @ Rx.T``,
which is also trivially differentiable (the transpose maps gradients back).
"""
from __future__ import annotations

import numpy as np


def interp_matrix(positions, n_in: int) -> np.ndarray:
    """Linear-interpolation weights for sampling a length-``n_in`` signal.

    Positions are in index units and are clamped to ``[0, n_in - 1]``
    (edge replication).
    """
    pos = np.clip(np.asarray(positions, dtype=np.float64), 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((pos.size, n_in))
    rows = np.arange(pos.size)
    m[rows, lo] = 1.0 - frac
    m[rows, hi] += frac  # hi == lo only at the clamped end, where frac is 0
    return m


def sample_grid(img, rows, cols):
    """Bilinearly sample a 2-D (or HxWxC) array at the outer product of ``rows`` x ``cols``."""
    img = np.asarray(img, dtype=np.float64)
    ry = interp_matrix(rows, img.shape[0])
    rx = interp_matrix(cols, img.shape[1])
    if img.ndim == 2:
        return ry @ img @ rx.T
    return np.einsum("ai,ijc,bj->abc", ry, img, rx)


def crop_resample(frame, cx: float, cy: float, width: float, height: float, out_h: int, out_w: int):
    """Resample the ``width`` x ``height`` rectangle centred on (cx, cy) to ``out_h`` x ``out_w``.

    Pixel (r, c) of the frame has its centre at (c + 0.5, r + 0.5); samples
    falling outside the frame replicate the border.
    """
    frame = np.asarray(frame)
    rows = cy - height / 2 + (np.arange(out_h) + 0.5) * (height / out_h) - 0.5
    cols = cx - width / 2 + (np.arange(out_w) + 0.5) * (width / out_w) - 0.5
    # only the frame region the samples touch takes part in the products
    r0, r1 = _span(rows, frame.shape[0])
    c0, c1 = _span(cols, frame.shape[1])
    return sample_grid(frame[r0:r1, c0:c1], rows - r0, cols - c0)


def _span(pos, n):
    lo = int(np.clip(np.floor(pos.min()), 0, n - 1))
    hi = int(np.clip(np.floor(pos.max()) + 2, lo + 1, n))
    return lo, hi
