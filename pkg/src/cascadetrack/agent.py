"""The stopping agent: state encoding, rewards, Q-network and Q-learning updates."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import N_ACTIONS, Action

MAP_SIZE = 17
HISTORY_SLOTS = 4
HISTORY_DIM = HISTORY_SLOTS * N_ACTIONS
STATE_DIM = MAP_SIZE * MAP_SIZE + HISTORY_DIM
STOP_IOU = 0.6


def encode_history(actions) -> np.ndarray:
    """One-hot encode the last four actions, most recent in the first slot."""
    h = np.zeros(HISTORY_DIM)
    for slot, a in enumerate(reversed(list(actions)[-HISTORY_SLOTS:])):
        h[slot * N_ACTIONS + int(a)] = 1.0
    return h


@dataclass(frozen=True)
class CascadeState:
    avg_map: np.ndarray
    history: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.avg_map, dtype=np.float64)
        h = np.asarray(self.history, dtype=np.float64)
        if m.shape != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"avg_map must be {MAP_SIZE}x{MAP_SIZE}, got {m.shape}")
        if h.shape != (HISTORY_DIM,):
            raise ValueError(f"history must have {HISTORY_DIM} entries, got {h.shape}")
        object.__setattr__(self, "avg_map", m)
        object.__setattr__(self, "history", h)
        object.__setattr__(self, "_vector", np.concatenate([m.ravel(), h]))

    @classmethod
    def from_actions(cls, avg_map, actions=()) -> "CascadeState":
        return cls(avg_map, encode_history(actions))

    def vector(self) -> np.ndarray:
        return self._vector


def reward(iou_prev: float, iou_new: float, action, threshold: float = STOP_IOU) -> int:
    if Action(action) is Action.STOP:
        return 3 if iou_new >= threshold else -3
    return int(np.sign(iou_new - iou_prev))


# --------------------------------------------------------------------------
# Q-network: 321 -> 128 -> 128 -> 8, ReLU + dropout after each hidden layer


@dataclass
class QNet:
    layers: list  # [(W, b)] with W of shape (fan_in, fan_out)
    dropout: float = 0.5

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 128, dropout: float = 0.5,
             in_dim: int = STATE_DIM, n_actions: int = N_ACTIONS) -> "QNet":
        dims = [in_dim, hidden, hidden, n_actions]
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers, dropout)

    def copy(self) -> "QNet":
        return QNet([(w.copy(), b.copy()) for w, b in self.layers], self.dropout)

    def check_finite(self):
        for w, b in self.layers:
            # a sum is finite only if every term is (or it overflowed, which is just as bad)
            if not (np.isfinite(w.sum()) and np.isfinite(b.sum())):
                raise FloatingPointError("Q-network has non-finite weights")


def _as_matrix(states) -> np.ndarray:
    if isinstance(states, CascadeState):
        return states.vector()[None, :]
    if isinstance(states, np.ndarray):
        return np.atleast_2d(states)
    return np.stack([s.vector() if isinstance(s, CascadeState) else np.asarray(s) for s in states])


def _forward(net: QNet, x, train_mode=False, rng=None):
    cache = {"x": x, "h": [], "masks": []}
    a = x
    n = len(net.layers)
    for i, (w, b) in enumerate(net.layers):
        z = a @ w + b
        if i == n - 1:
            return z, cache
        a = np.maximum(z, 0.0)
        mask = None
        if train_mode and net.dropout > 0:
            if rng is None:
                raise ValueError("dropout in train mode needs an rng")
            keep = 1.0 - net.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache["h"].append((z, a))
        cache["masks"].append(mask)
    return a, cache


def _backward(net: QNet, cache, dq):
    """Gradients of sum(dq * Q) w.r.t. every weight and the input."""
    grads = [None] * len(net.layers)
    g = dq
    for i in reversed(range(len(net.layers))):
        w, _ = net.layers[i]
        a_in = cache["x"] if i == 0 else cache["h"][i - 1][1]
        grads[i] = (a_in.T @ g, g.sum(axis=0))
        g = g @ w.T
        if i > 0:
            z_prev, _ = cache["h"][i - 1]
            mask = cache["masks"][i - 1]
            if mask is not None:
                g = g * mask
            g = g * (z_prev > 0)
    return grads, g


def qnet_forward(net: QNet, s, train_mode: bool = False, rng=None) -> np.ndarray:
    """Q-values for one state (8 entries) or a batch of states (N x 8)."""
    net.check_finite()
    single = isinstance(s, CascadeState) or (isinstance(s, np.ndarray) and s.ndim == 1)
    q, _ = _forward(net, _as_matrix(s), train_mode, rng)
    return q[0] if single else q


def td_target(r: float, q_next, gamma: float, terminal: bool) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if terminal:
        return float(r)
    if q_next is None:
        raise ValueError("non-terminal transition needs next-state Q-values")
    return float(r + gamma * np.max(q_next))


@dataclass(frozen=True)
class Transition:
    s: CascadeState
    a: int
    r: int
    s_next: CascadeState | None
    terminal: bool
    next_stop_only: bool = False  # next state sits on the last layer, where only STOP is legal


def batch_targets(net: QNet, batch, gamma: float, allowed=None) -> np.ndarray:
    targets = np.empty(len(batch))
    live = [i for i, t in enumerate(batch) if not t.terminal]
    q_next = qnet_forward(net, [batch[i].s_next for i in live]) if live else None
    for row, i in enumerate(live):
        q = q_next[row]
        if batch[i].next_stop_only:
            q = q[[int(Action.STOP)]]
        elif allowed is not None:
            q = q[list(allowed)]
        targets[i] = td_target(batch[i].r, q, gamma, False)
    for i, t in enumerate(batch):
        if t.terminal:
            targets[i] = td_target(t.r, None, gamma, True)
    return targets


def q_loss_and_grads(net: QNet, batch, targets, train_mode=False, rng=None):
    """Mean squared TD error and its gradient w.r.t. weights and inputs (targets held fixed)."""
    x = _as_matrix([t.s for t in batch])
    actions = np.array([int(t.a) for t in batch])
    q, cache = _forward(net, x, train_mode, rng)
    rows = np.arange(len(batch))
    err = targets - q[rows, actions]
    loss = float(np.mean(err ** 2))
    dq = np.zeros_like(q)
    dq[rows, actions] = -2.0 * err / len(batch)
    grads, dx = _backward(net, cache, dq)
    return loss, grads, dx


def q_learn_step(net: QNet, batch, gamma: float = 0.9, lr: float = 1e-3, rng=None, allowed=None):
    """One SGD step on the mean squared TD error. Returns (new_net, loss).

    Targets use the current network without dropout; only the taken action's
    output receives error. ``allowed`` restricts the bootstrap max to a subset
    of actions.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    net.check_finite()
    targets = batch_targets(net, batch, gamma, allowed)
    loss, grads, _ = q_loss_and_grads(net, batch, targets, train_mode=True, rng=rng)
    layers = [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(net.layers, grads)]
    return QNet(layers, net.dropout), loss


def state_gradient(net: QNet, transition: Transition, target: float) -> np.ndarray:
    """d(target - Q(s, a))^2 / d(state vector), dropout off."""
    _, _, dx = q_loss_and_grads(net, [transition], np.array([target]))
    return dx[0]


def select_action(net: QNet, s: CascadeState, epsilon: float, rng, force_stop: bool = False,
                  allow_stop: bool = True) -> Action:
    """Epsilon-greedy choice; greedy ties go to the lowest action index."""
    if force_stop:
        return Action.STOP
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    n = N_ACTIONS if allow_stop else N_ACTIONS - 1
    if epsilon > 0 and rng.random() < epsilon:
        return Action(int(rng.integers(n)))
    q = qnet_forward(net, s)
    return Action(int(np.argmax(q[:n])))


def epsilon_schedule(epoch: int, total_epochs: int, start: float = 1.0, end: float = 0.1,
                     anneal_fraction: float = 0.6) -> float:
    """Linear anneal from ``start`` to ``end`` over the first 60% of epochs, then flat."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be positive")
    anneal = anneal_fraction * total_epochs
    if epoch >= anneal:
        return end
    return start + (end - start) * epoch / anneal


@dataclass
class ReplayBuffer:
    capacity: int = 10_000
    items: deque = field(default=None)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.items = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self.items)

    def add(self, transition: Transition):
        self.items.append(transition)

    def extend(self, transitions):
        self.items.extend(transitions)

    def sample(self, n: int, rng) -> list:
        """Uniform minibatch without replacement (the whole buffer if it is smaller)."""
        size = len(self.items)
        if size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(size, size=min(n, size), replace=False)
        return [self.items[i] for i in idx]
