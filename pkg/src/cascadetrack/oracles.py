"""Brute-force reference computations used to check the fast paths.

None of these share numerical kernels with the code they check: the ridge
solve builds the dense shift matrix, IoU is estimated by counting sample
points, gradients come from central differences, and the episode search
re-implements box scaling and overlap with plain Python arithmetic.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg

# --------------------------------------------------------------------------
# ridge regression over all cyclic shifts


def _shift_rows(patch):
    """Rows of the data matrix: row k is the patch rolled by -k, flattened."""
    h, w = patch.shape[:2]
    rows = np.empty((h * w, patch.size))
    for i in range(h):
        for j in range(w):
            rows[i * w + j] = np.roll(patch, (-i, -j), axis=(0, 1)).ravel()
    return rows


def spatial_ridge_solve(patch, label, lam: float) -> np.ndarray:
    """Solve ``(X'X + lam I) w = X'y`` where the rows of X are all cyclic shifts of ``patch``.

    ``patch`` is H x W or H x W x C and is used as given (apply any taper
    beforehand). ``label[i, j]`` is the target for the shift by ``(i, j)``.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        patch = patch[:, :, None]
    h, w = patch.shape[:2]
    if h > 16 or w > 16:
        raise ValueError("dense solve is limited to 16 x 16 patches")
    label = np.asarray(label, dtype=np.float64)
    if label.shape != (h, w):
        raise ValueError("label must match the patch size")
    x = _shift_rows(patch)
    gram = x.T @ x + lam * np.eye(x.shape[1])
    try:
        sol = linalg.solve(gram, x.T @ label.ravel(), assume_a="sym")
    except linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular ridge system") from None
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError("singular ridge system (lambda = 0)")
    return sol.reshape(patch.shape)


def spatial_response(filt, patch) -> np.ndarray:
    """Score of every cyclic shift: ``out[i, j] = <roll(patch, (-i, -j)), filt>``."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        patch = patch[:, :, None]
    filt = np.asarray(filt, dtype=np.float64).reshape(patch.shape)
    h, w = patch.shape[:2]
    return (_shift_rows(patch) @ filt.ravel()).reshape(h, w)


# --------------------------------------------------------------------------
# derivatives


def finite_diff(fn, point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        g[i] = (up - down) / (2 * step)
    return grad


def finite_diff_at(fn, point, indices, step: float = 1e-5) -> np.ndarray:
    """Central differences for selected flat coordinates only."""
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        out[n] = (up - down) / (2 * step)
    return out


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# --------------------------------------------------------------------------
# small MDPs


@dataclass
class TabularMDP:
    """Deterministic finite MDP. ``next_state[s][a]`` is None for a terminal move."""

    next_state: list
    reward: list

    @property
    def n_states(self) -> int:
        return len(self.next_state)

    @property
    def n_actions(self) -> int:
        return len(self.next_state[0])


def value_iteration(mdp: TabularMDP, gamma: float, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Optimal action values by repeated Bellman backups."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        new = np.empty_like(q)
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                nxt = mdp.next_state[s][a]
                new[s, a] = mdp.reward[s][a] + (0.0 if nxt is None else gamma * q[nxt].max())
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol:
            return q
    raise RuntimeError("value iteration did not converge")


# --------------------------------------------------------------------------
# overlap by counting


def rasterized_iou(a, b, resolution: int = 2000) -> float:
    """IoU estimated on a ``resolution`` x ``resolution`` lattice over the joint bounding rectangle.

    Boxes are anything with ``cx, cy, w, h`` attributes.
    """
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    x0, x1 = min(ax0, bx0), max(ax1, bx1)
    y0, y1 = min(ay0, by0), max(ay1, by1)
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    in_ax = (xs >= ax0) & (xs < ax1)
    in_bx = (xs >= bx0) & (xs < bx1)
    in_ay = (ys >= ay0) & (ys < ay1)
    in_by = (ys >= by0) & (ys < by1)
    inter = np.sum(in_ax & in_bx) * np.sum(in_ay & in_by)
    union = np.sum(in_ax) * np.sum(in_ay) + np.sum(in_bx) * np.sum(in_by) - inter
    return float(inter / union) if union else 0.0


# --------------------------------------------------------------------------
# exhaustive action search

MAX_EXHAUSTIVE_LAYERS = 5
_FACTORS = [(1.2, 1.2), (0.8, 0.8), (1.2, 1.0), (0.8, 1.0), (1.0, 1.2), (1.0, 0.8), (1.0, 1.0)]
_STOP = 7


def _clamp(cx, cy, w, h, fw, fh, min_size=4.0):
    w = min(max(w, min_size), fw)
    h = min(max(h, min_size), fh)
    cx = min(max(cx, w / 2), fw - w / 2)
    cy = min(max(cy, h / 2), fh - h / 2)
    return cx, cy, w, h


def _overlap(a, b):
    iw = min(a[0] + a[2] / 2, b[0] + b[2] / 2) - max(a[0] - a[2] / 2, b[0] - b[2] / 2)
    ih = min(a[1] + a[3] / 2, b[1] + b[3] / 2) - max(a[1] - a[3] / 2, b[1] - b[3] / 2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _sign(x):
    return (x > 0) - (x < 0)


def best_action_sequence(start, offsets, gt, bounds, stop_iou: float = 0.6):
    """Maximise the summed per-step rewards over every action sequence.

    ``start`` is the previous box ``(cx, cy, w, h)``; ``offsets[l]`` the centre
    displacement applied at layer ``l`` (from the score maps, independent of the
    actions). Stop is forced at the last layer. Returns ``(actions, total)``;
    among equally rewarded sequences the shortest wins.
    """
    n = len(offsets)
    if n > MAX_EXHAUSTIVE_LAYERS:
        raise ValueError(f"exhaustive search is limited to {MAX_EXHAUSTIVE_LAYERS} layers (8^{n} sequences)")
    fw, fh = bounds
    g = (gt.cx, gt.cy, gt.w, gt.h) if hasattr(gt, "cx") else tuple(gt)
    best = (-np.inf, 0, None)
    for seq in itertools.product(range(8), repeat=n):
        w, h = start[2], start[3]
        total = 0
        actions = []
        for layer, a in enumerate(seq):
            box = _clamp(start[0] + offsets[layer][0], start[1] + offsets[layer][1], w, h, fw, fh)
            if layer == n - 1:
                a = _STOP
            actions.append(a)
            if a == _STOP:
                total += 3 if _overlap(box, g) >= stop_iou else -3
                break
            fx, fy = _FACTORS[a]
            scaled = _clamp(box[0], box[1], box[2] * fx, box[3] * fy, fw, fh)
            total += _sign(_overlap(scaled, g) - _overlap(box, g))
            w, h = scaled[2], scaled[3]
        if (total, -len(actions)) > best[:2]:
            best = (total, -len(actions), tuple(actions))
    return list(best[2]), int(best[0])


def exhaustive_episode(frame, gt, session, max_layers: int | None = None):
    """Best action sequence and reward for one frame of a tracking session.

    Layer displacements are read from the session's score maps (without
    changing the session); the search over actions is done here.
    """
    from .tracker import layer_offsets

    n = session.config.n_layers if max_layers is None else max_layers
    if n > MAX_EXHAUSTIVE_LAYERS:
        raise ValueError(f"exhaustive search is limited to {MAX_EXHAUSTIVE_LAYERS} layers")
    offsets = layer_offsets(session, frame)[:n]
    b = session.box
    return best_action_sequence((b.cx, b.cy, b.w, b.h), offsets, gt, session.bounds, session.config.stop_iou)
