"""Oracle suites: each compares a fast path with its brute-force reference.

``run_suites`` backs the ``verify`` command; the test-suite runs the same
comparisons with fixed seeds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import corrfilter, oracles
from .agent import CascadeState, QNet, Transition, q_learn_step, q_loss_and_grads
from .features import ConvLayerSpec, conv_layer_backward, conv_layer_forward
from .geometry import BoundingBox, iou


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<12} {status}  max_error={self.max_error:.3e}  tol={self.tolerance:.0e}  "
                f"cases={self.cases}  ({self.seconds:.2f}s)")


# --------------------------------------------------------------------------
# correlation filter vs dense ridge solve


def dcf_case(rng, h, w, c, lam):
    """Max abs difference between the Fourier filter and the dense ridge solution, both on a fresh patch."""
    x = rng.standard_normal((h, w, c))
    label = corrfilter.gaussian_label(h, w, max(1.0, 0.1 * np.sqrt(h * w)))
    model = corrfilter.train(x, label, lam, window=np.ones((h, w)))
    z = rng.standard_normal((h, w, c))
    fast = corrfilter.respond_raw(model, z)
    filt = oracles.spatial_ridge_solve(x, label, lam)
    slow = oracles.spatial_response(filt, z)
    return float(np.max(np.abs(fast - slow)))


def suite_dcf(seed=0, n=24):
    rng = np.random.default_rng(seed)
    errs = []
    for k in range(n):
        h, w = (int(v) for v in rng.integers(4, 17, size=2))
        c = 1 if k % 2 == 0 else int(rng.integers(2, 5))
        errs.append(dcf_case(rng, h, w, c, float(10 ** rng.uniform(-3, 0))))
    return errs, 1e-6


# --------------------------------------------------------------------------
# gradients


def conv_grad_errors(rng, n_probes=60):
    """Finite-difference checks of one conv block per layer kind, on random weight probes."""
    kinds = [ConvLayerSpec(5, 5, 1, 4, 2, True, True), ConvLayerSpec(3, 3, 4, 3, 1, False, True),
             ConvLayerSpec(3, 3, 3, 2, 1, False, False)]
    errs = []
    per = int(np.ceil(n_probes / len(kinds)))
    for spec in kinds:
        x = rng.standard_normal((13, 13, spec.cin))
        w = rng.standard_normal((spec.kh, spec.kw, spec.cin, spec.cout)) * 0.5
        b = rng.standard_normal(spec.cout) * 0.1
        out, cache = conv_layer_forward(spec, w, b, x)
        proj = rng.standard_normal(out.shape)
        _, dw, db = conv_layer_backward(spec, w, cache, proj)

        def loss(wv):
            return float(np.sum(conv_layer_forward(spec, wv, b, x)[0] * proj))

        idx = rng.choice(w.size, size=min(per, w.size), replace=False)
        fd = oracles.finite_diff_at(loss, w, idx)
        for i, g in zip(idx, fd):
            errs.append(oracles.relative_error(dw.reshape(-1)[i], g, floor=1e-6))
        fdb = oracles.finite_diff(lambda bv: float(np.sum(conv_layer_forward(spec, w, bv, x)[0] * proj)), b)
        errs.append(oracles.relative_error(db, fdb, floor=1e-6))
    return errs


def qnet_grad_errors(rng, n_probes=60):
    net = QNet.init(rng, hidden=16, dropout=0.0)
    s = CascadeState(rng.random((17, 17)), np.eye(32)[int(rng.integers(32))])
    tr = Transition(s, int(rng.integers(8)), 1, None, True)
    target = np.array([float(rng.normal(2.0, 1.0))])
    _, grads, _ = q_loss_and_grads(net, [tr], target)
    errs = []
    per = n_probes // 6 + 1
    for li in range(len(net.layers)):
        for which in (0, 1):
            param = net.layers[li][which]

            def loss(p, li=li, which=which):
                layers = [list(wb) for wb in net.layers]
                layers[li][which] = p
                probe = QNet([tuple(wb) for wb in layers], 0.0)
                return q_loss_and_grads(probe, [tr], target)[0]

            idx = rng.choice(param.size, size=min(per, param.size), replace=False)
            fd = oracles.finite_diff_at(loss, param, idx)
            analytic = grads[li][which].reshape(-1)[idx]
            errs.extend(oracles.relative_error(a, f, floor=1e-6) for a, f in zip(analytic, fd))
    return errs


def suite_grad(seed=0):
    rng = np.random.default_rng(seed)
    return conv_grad_errors(rng) + qnet_grad_errors(rng), 1e-4


# --------------------------------------------------------------------------
# IoU


def suite_iou(seed=0, n=20):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        a = BoundingBox(*rng.uniform(10, 20, 2), *rng.uniform(2, 10, 2))
        b = BoundingBox(*rng.uniform(10, 20, 2), *rng.uniform(2, 10, 2))
        errs.append(abs(iou(a, b) - oracles.rasterized_iou(a, b, 4000)))
    return errs, 1e-3


# --------------------------------------------------------------------------
# Q-learning on a toy MDP vs value iteration

TOY_MDP = oracles.TabularMDP(
    # action 0 advances along the chain, action 1 ends the episode
    next_state=[[1, None], [2, None], [None, None]],
    reward=[[0.0, 0.5], [0.0, 0.0], [1.0, -1.0]],
)


def toy_state(s: int) -> CascadeState:
    m = np.zeros((17, 17))
    m[s, :] = 1.0
    return CascadeState.from_actions(m)


def toy_qlearning(steps=5000, seed=0, gamma=0.9, lr=1e-2, batch=6):
    """Deep Q-learning on ``TOY_MDP`` from a replay of all its transitions; returns the Q table."""
    rng = np.random.default_rng(seed)
    mdp = TOY_MDP
    net = QNet.init(rng, hidden=32, dropout=0.0, n_actions=mdp.n_actions)
    states = [toy_state(s) for s in range(mdp.n_states)]
    transitions = []
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            nxt = mdp.next_state[s][a]
            transitions.append(Transition(states[s], a, mdp.reward[s][a], None if nxt is None else states[nxt],
                                          nxt is None))
    for _ in range(steps):
        idx = rng.choice(len(transitions), size=batch, replace=True)
        net, _ = q_learn_step(net, [transitions[i] for i in idx], gamma, lr, rng)
    from .agent import qnet_forward
    return qnet_forward(net, states)


def suite_bellman(seed=0):
    q_vi = oracles.value_iteration(TOY_MDP, 0.9)
    q = toy_qlearning(seed=seed)
    err = float(np.max(np.abs(q - q_vi)))
    same_policy = bool(np.array_equal(q.argmax(axis=1), q_vi.argmax(axis=1)))
    return [err if same_policy else np.inf], 0.05


SUITES = {
    "dcf": suite_dcf,
    "gradients": suite_grad,
    "iou": suite_iou,
    "bellman": suite_bellman,
}


def run_suites(names=None, seed=0) -> list:
    out = []
    for name in names or SUITES:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
        t0 = time.perf_counter()
        errs, tol = SUITES[name](seed)
        worst = float(np.max(errs))
        out.append(SuiteResult(name, worst <= tol, worst, tol, len(errs), time.perf_counter() - t0))
    return out
