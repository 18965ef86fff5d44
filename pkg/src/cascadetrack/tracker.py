"""Cascade orchestration: per-frame episodes over the feature layers.

Each frame crops one search window around the previous box (``padding`` times
its size, resampled to ``search_size`` pixels). Layers are then evaluated in
order on that window; after layer ``l`` the min-max normalised score maps of
layers ``1..l`` are resampled onto the 17x17 policy grid and averaged. The
argmax of that average fixes the box centre, and the agent either rescales the
box and moves on to the next layer, or stops.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import corrfilter
from .agent import (HISTORY_SLOTS, CascadeState, QNet, ReplayBuffer, Transition, batch_targets,
                    epsilon_schedule, q_learn_step, reward, select_action, state_gradient)
from .config import CascadeConfig
from .features import (FeatureMap, ScoreMap, conv_layer_backward, conv_layer_forward, cross_correlate,
                       cross_correlate_backward, default_conv_spec, hog_layer, init_conv_weights, pixel_layer)
from .geometry import Action, BoundingBox, apply_action, iou
from .resample import crop_resample, interp_matrix

# --------------------------------------------------------------------------
# score-map fusion

_MATRIX_CACHE: dict = {}


def _resample_matrices(shape, stride, center, size, cell_px, grid_center):
    """Interpolation matrices taking a score map onto a ``size`` x ``size`` displacement grid."""
    key = (shape, float(stride), tuple(float(c) for c in center), size, float(cell_px), float(grid_center))
    mats = _MATRIX_CACHE.get(key)
    if mats is None:
        offs = (np.arange(size) - grid_center) * (cell_px / stride)
        mats = (interp_matrix(center[0] + offs, shape[0]), interp_matrix(center[1] + offs, shape[1]))
        if len(_MATRIX_CACHE) > 256:
            _MATRIX_CACHE.clear()
        _MATRIX_CACHE[key] = mats
    return mats


def minmax_normalize(data) -> np.ndarray:
    lo, hi = data.min(), data.max()
    if hi - lo <= 0:
        return np.full(data.shape, 0.5)
    return (data - lo) / (hi - lo)


def resample_map(score: ScoreMap, size: int, cell_px: float, grid_center=None) -> np.ndarray:
    if grid_center is None:
        grid_center = (size - 1) / 2
    ry, rx = _resample_matrices(score.data.shape, score.stride, score.center, size, cell_px, grid_center)
    return ry @ score.data @ rx.T


def fuse_maps(raw_maps, size: int, cell_px: float, grid_center=None) -> np.ndarray:
    """Average of min-max normalised maps, each resampled to a displacement grid."""
    if not raw_maps:
        raise ValueError("need at least one score map")
    acc = np.zeros((size, size))
    for m in raw_maps:
        acc += resample_map(ScoreMap(minmax_normalize(m.data), m.stride, m.center), size, cell_px, grid_center)
    return acc / len(raw_maps)


def fuse_and_resample(raw_maps, map_size: int = 17, window_px: float = 64) -> np.ndarray:
    """Fused ``map_size`` x ``map_size`` policy map; cell (8, 8) is zero displacement."""
    return fuse_maps(raw_maps, map_size, window_px / map_size)


def translation_from_map(avg_map, search_window_px: float) -> tuple[float, float]:
    """(dx, dy) in search-window pixels from the argmax offset to the grid centre."""
    avg_map = np.asarray(avg_map)
    size = avg_map.shape[0]
    r, c = np.unravel_index(int(np.argmax(avg_map)), avg_map.shape)
    cell = search_window_px / size
    center = (size - 1) / 2
    return ((c - center) * cell, (r - center) * cell)


# --------------------------------------------------------------------------
# sessions


@dataclass
class SearchContext:
    """Per-frame search window and lazily computed conv activations."""

    crop: np.ndarray
    conv_in: np.ndarray = None
    conv_out: list = field(default_factory=list)
    conv_cache: list = field(default_factory=list)


def _conv_input(window):
    return (window - window.mean())[:, :, None]


@dataclass
class TrackerSession:
    config: CascadeConfig
    conv_spec: object
    conv_weights: list
    init_crop: np.ndarray
    box: BoundingBox
    bounds: tuple
    frame_index: int = 0
    dcf: dict = field(default_factory=dict)
    templates: list = field(default_factory=list)
    template_caches: list = field(default_factory=list)
    ref_peaks: list = field(default_factory=list)

    def refresh_templates(self):
        """Recompute conv template features from the stored first-frame template crop."""
        t = self.config.template_size
        o = (self.config.search_size - t) // 2
        x = _conv_input(self.init_crop[o:o + t, o:o + t])
        self.templates, self.template_caches = [], []
        for layer, (w, b), stride in zip(self.conv_spec.layers, self.conv_weights, self.conv_spec.strides()):
            x, cache = conv_layer_forward(layer, w, b, x)
            self.templates.append(FeatureMap(x, stride=stride))
            self.template_caches.append(cache)


def search_window(config: CascadeConfig, box: BoundingBox):
    """Frame-pixel size (width, height) of the search window around ``box``."""
    return config.padding * box.w, config.padding * box.h


def extract_search(frame, box: BoundingBox, config: CascadeConfig) -> np.ndarray:
    """Search window around ``box`` resampled to ``search_size`` pixels, grey levels scaled to [0, 1]."""
    ww, wh = search_window(config, box)
    s = config.search_size
    return crop_resample(frame, box.cx, box.cy, ww, wh, s, s) / 255.0


def _dcf_label(config: CascadeConfig, n_cells: int):
    # the target covers 1/padding of the window per axis
    target_cells = n_cells / config.padding
    return corrfilter.gaussian_label(n_cells, n_cells, config.dcf_sigma_factor * target_cells)


def _cheap_features(name, crop, config):
    if name == "pixel":
        return pixel_layer(crop)
    return hog_layer(crop, config.hog_cell, config.hog_bins)


def init(frame, gt_box: BoundingBox, config: CascadeConfig | None = None, rng=None,
         conv_weights=None) -> TrackerSession:
    """Build templates and correlation filters from the first frame.

    Conv weights are drawn from ``rng`` (seeded uniform) unless given.
    """
    config = config or CascadeConfig()
    frame = np.asarray(frame)
    bounds = (frame.shape[1], frame.shape[0])
    if not gt_box.inside(bounds):
        raise ValueError(f"initial box {gt_box} is not inside the {bounds[0]}x{bounds[1]} frame")
    spec = default_conv_spec(config.conv_depth) if config.conv_depth else None
    if spec is not None:
        spec.output_sizes(config.template_size)  # raises when the template is too small
        if conv_weights is None:
            if rng is None:
                rng = np.random.default_rng(config.seed)
            conv_weights = init_conv_weights(spec, rng)
    crop = extract_search(frame, gt_box, config)
    session = TrackerSession(config=config, conv_spec=spec, conv_weights=list(conv_weights or []),
                             init_crop=crop, box=gt_box, bounds=bounds)
    for name in config.layers:
        if name in ("pixel", "hog"):
            feats = _cheap_features(name, crop, config)
            label = _dcf_label(config, feats.shape[0])
            session.dcf[name] = corrfilter.train(feats, label, config.dcf_lambda, update_rate=config.dcf_rate)
    if spec is not None:
        session.refresh_templates()
    _calibrate(session)
    return session


def _calibrate(session: TrackerSession):
    """Reference peak heights on the first frame (confidence scale of the threshold baseline)."""
    ctx = SearchContext(session.init_crop)
    cfg = session.config
    raw = [layer_score(session, i, session.init_crop, ctx) for i in range(cfg.n_layers)]
    session.ref_peaks = [float(m.data.max()) if m.data.max() > 0 else 1.0 for m in raw]


def layer_score(session: TrackerSession, index: int, search_crop, ctx: SearchContext | None = None) -> ScoreMap:
    """Raw score map of cascade layer ``index`` (0-based) at its native stride."""
    cfg = session.config
    name = cfg.layers[index]
    if name in ("pixel", "hog"):
        model = session.dcf.get(name)
        if model is None:
            raise RuntimeError(f"layer {name!r} has no trained filter")
        return corrfilter.respond(model, _cheap_features(name, search_crop, cfg))
    k = int(name[4:]) - 1
    if k >= len(session.templates):
        raise RuntimeError(f"layer {name!r} has no template")
    if ctx is None:
        ctx = SearchContext(np.asarray(search_crop, dtype=np.float64))
    if ctx.conv_in is None:
        ctx.conv_in = _conv_input(ctx.crop)
    while len(ctx.conv_out) <= k:
        j = len(ctx.conv_out)
        x = ctx.conv_in if j == 0 else ctx.conv_out[-1]
        w, b = session.conv_weights[j]
        out, cache = conv_layer_forward(session.conv_spec.layers[j], w, b, x)
        ctx.conv_out.append(out)
        ctx.conv_cache.append(cache)
    stride = session.conv_spec.strides()[k]
    return cross_correlate(session.templates[k], FeatureMap(ctx.conv_out[k], stride), cfg.xcorr_offset)


def confidence_map(session: TrackerSession, raw_maps, fine: bool = False) -> np.ndarray:
    """Average of raw maps scaled by their first-frame peak heights.

    Sampled on the policy grid, or with ``fine`` at one search-window pixel
    per cell.
    """
    cfg = session.config
    if fine:
        size, cell, center = cfg.search_size, 1.0, cfg.search_size // 2
    else:
        size, cell, center = cfg.map_size, cfg.search_size / cfg.map_size, None
    acc = np.zeros((size, size))
    for i, m in enumerate(raw_maps):
        acc += resample_map(ScoreMap(m.data / session.ref_peaks[i], m.stride, m.center), size, cell, center)
    return acc / len(raw_maps)


def _peak_extent(conf, threshold):
    rows, cols = np.nonzero(conf >= threshold * conf.max())
    return (float(cols.max() - cols.min() + 1), float(rows.max() - rows.min() + 1))


# --------------------------------------------------------------------------
# policies


class Policy:
    """Decides, after each layer, whether to rescale the box and continue or to stop."""

    def act(self, state: CascadeState, layer: int, n_layers: int, rng, frame) -> Action:
        raise NotImplementedError

    def finish(self, box: BoundingBox, frame) -> BoundingBox:
        return box


class QPolicy(Policy):
    """Epsilon-greedy over a Q-network; ``stop_early=False`` gives the always-last-layer variant."""

    def __init__(self, net: QNet, epsilon: float = 0.0, stop_early: bool = True):
        self.net = net
        self.epsilon = epsilon
        self.stop_early = stop_early

    def act(self, state, layer, n_layers, rng, frame):
        last = layer == n_layers - 1
        return select_action(self.net, state, self.epsilon, rng, force_stop=last, allow_stop=self.stop_early)


class StopFirstPolicy(Policy):
    """Stop at the first layer without rescaling (plain correlation-filter tracking)."""

    def act(self, state, layer, n_layers, rng, frame):
        return Action.STOP


class FixedPolicy(Policy):
    """Replays a fixed action list (STOP is forced on the last layer)."""

    def __init__(self, actions):
        self.actions = [Action(a) for a in actions]

    def act(self, state, layer, n_layers, rng, frame):
        if layer == n_layers - 1 or layer >= len(self.actions):
            return Action.STOP
        return self.actions[layer]


class ThresholdPolicy(Policy):
    """Advance while the peak of the confidence map is below ``threshold``.

    Scale follows the region scoring at least ``threshold`` of the peak: each
    box side is nudged by the ratio of that region's current extent to a
    running average of the extents seen on earlier frames.
    """

    def __init__(self, session: TrackerSession, threshold: float | None = None, rate: float | None = None,
                 memory: float = 0.1):
        self.session = session
        self.threshold = session.config.threshold if threshold is None else threshold
        self.rate = session.config.threshold_scale_rate if rate is None else rate
        self.memory = memory
        self.reference = {}

    def act(self, state, layer, n_layers, rng, frame):
        conf = confidence_map(self.session, frame.raw_maps)
        if layer == n_layers - 1 or conf.max() >= self.threshold:
            return Action.STOP
        return Action.NOSCALE

    def finish(self, box, frame):
        n = len(frame.raw_maps)
        ex, ey = _peak_extent(confidence_map(self.session, frame.raw_maps, fine=True), self.threshold)
        ref = self.reference.get(n)
        if ref is None:
            self.reference[n] = (ex, ey)
            return box
        fx = np.clip(ex / ref[0], 0.8, 1.25)
        fy = np.clip(ey / ref[1], 0.8, 1.25)
        m = self.memory
        self.reference[n] = ((1 - m) * ref[0] + m * ex, (1 - m) * ref[1] + m * ey)
        w = box.w * (1 + self.rate * (fx - 1))
        h = box.h * (1 + self.rate * (fy - 1))
        return BoundingBox(box.cx, box.cy, w, h).clamp(self.session.bounds)


# --------------------------------------------------------------------------
# episodes


@dataclass
class FrameResult:
    box: BoundingBox
    stop_layer: int
    steps: int
    actions: list
    durations: list
    boxes: list = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return float(sum(self.durations))


@dataclass
class _FrameState:
    crop: np.ndarray
    ctx: SearchContext
    raw_maps: list = field(default_factory=list)
    norm_info: list = field(default_factory=list)


@dataclass
class EpisodeRecord:
    """What an episode leaves behind for learning."""

    result: FrameResult
    transitions: list
    rewards: list
    frame_state: _FrameState
    layer_of_step: list


class MapFusion:
    """Running average of normalised maps: the policy grid plus the translation it implies.

    ``add`` returns ``(policy_map, dx, dy)`` with the displacement in search-window
    pixels, read from the policy grid or, in ``native`` mode, from a grid with
    one search-window pixel per cell.
    """

    def __init__(self, config: CascadeConfig):
        self.config = config
        self.n = 0
        self.acc = np.zeros((config.map_size, config.map_size))
        self.fine = np.zeros((config.search_size, config.search_size)) if config.translation == "native" else None

    def add(self, raw: ScoreMap):
        cfg = self.config
        norm = ScoreMap(minmax_normalize(raw.data), raw.stride, raw.center)
        self.n += 1
        self.acc += resample_map(norm, cfg.map_size, cfg.search_size / cfg.map_size)
        avg = self.acc / self.n
        if self.fine is None:
            dx, dy = translation_from_map(avg, cfg.search_size)
        else:
            c = cfg.search_size // 2
            self.fine += resample_map(norm, cfg.search_size, 1.0, c)
            r, k = np.unravel_index(int(np.argmax(self.fine)), self.fine.shape)
            dx, dy = float(k - c), float(r - c)
        return avg, dx, dy


def layer_offsets(session: TrackerSession, frame) -> list:
    """Box-centre displacement (frame pixels) implied after each layer; the session is not changed."""
    cfg = session.config
    prev = session.box
    crop = extract_search(frame, prev, cfg)
    ctx = SearchContext(crop)
    win_w, win_h = search_window(cfg, prev)
    fusion = MapFusion(cfg)
    out = []
    for layer in range(cfg.n_layers):
        _, dx, dy = fusion.add(layer_score(session, layer, crop, ctx))
        out.append((dx * win_w / cfg.search_size, dy * win_h / cfg.search_size))
    return out


def _run_episode(session: TrackerSession, frame, policy: Policy, rng, gt: BoundingBox | None = None):
    cfg = session.config
    n_layers = cfg.n_layers
    t_prev = time.perf_counter()
    durations = []
    prev = session.box
    crop = extract_search(frame, prev, cfg)
    fs = _FrameState(crop=crop, ctx=SearchContext(crop))
    win_w, win_h = search_window(cfg, prev)
    to_frame_x = win_w / cfg.search_size
    to_frame_y = win_h / cfg.search_size
    fusion = MapFusion(cfg)
    w, h = prev.w, prev.h
    actions, boxes, transitions, rewards = [], [], [], []
    pending = None  # transition waiting for its next state
    box = prev
    for layer in range(n_layers):
        raw = layer_score(session, layer, crop, fs.ctx)
        fs.raw_maps.append(raw)
        avg, dx, dy = fusion.add(raw)
        box = BoundingBox(prev.cx + dx * to_frame_x, prev.cy + dy * to_frame_y, w, h).clamp(session.bounds)
        state = CascadeState.from_actions(avg, actions[-HISTORY_SLOTS:])
        if pending is not None:
            transitions.append(Transition(pending[0], pending[1], pending[2], state, False,
                                          next_stop_only=(layer == n_layers - 1)))
            pending = None
        action = policy.act(state, layer, n_layers, rng, fs)
        if layer == n_layers - 1:
            action = Action.STOP
        actions.append(action)
        if action is Action.STOP:
            box = policy.finish(box, fs)
            boxes.append(box)
            if gt is not None:
                r_stop = reward(0.0, iou(box, gt), action, cfg.stop_iou)
                rewards.append(r_stop)
                transitions.append(Transition(state, int(action), r_stop, None, True))
            now = time.perf_counter()
            durations.append(now - t_prev)
            t_prev = now
            break
        scaled = apply_action(box, action, session.bounds)
        if gt is not None:
            r = reward(iou(box, gt), iou(scaled, gt), action, cfg.stop_iou)
            rewards.append(r)
            pending = (state, int(action), r)
        box = scaled
        boxes.append(box)
        w, h = box.w, box.h
        now = time.perf_counter()
        durations.append(now - t_prev)
        t_prev = now

    session.box = box
    session.frame_index += 1
    if cfg.dcf_update and session.dcf:
        evaluated = cfg.layers if cfg.dcf_update_skipped else cfg.layers[:len(actions)]
        _update_filters(session, frame, box, [n for n in evaluated if n in session.dcf])
        durations[-1] += time.perf_counter() - t_prev
    steps = len(actions)
    result = FrameResult(box=box, stop_layer=steps, steps=steps, actions=actions, durations=durations, boxes=boxes)
    return EpisodeRecord(result, transitions, rewards, fs, list(range(steps)))


def _update_filters(session: TrackerSession, frame, box: BoundingBox, names=None):
    """Blend the appearance at the final box into the filters named in ``names`` (default: all)."""
    names = list(session.dcf) if names is None else names
    if not names:
        return
    crop = extract_search(frame, box, session.config)
    for name in names:
        feats = _cheap_features(name, crop, session.config)
        session.dcf[name] = corrfilter.update(session.dcf[name], feats, session.config.dcf_rate)


def track_frame(session: TrackerSession, frame, policy, epsilon: float = 0.0, rng=None) -> FrameResult:
    """Process one frame. ``policy`` is a :class:`Policy` or a :class:`QNet` (epsilon-greedy)."""
    if isinstance(policy, QNet):
        policy = QPolicy(policy, epsilon)
    if rng is None:
        rng = np.random.default_rng(0)
    return _run_episode(session, frame, policy, rng).result


def train_episode(session: TrackerSession, frame, gt_box: BoundingBox, policy, epsilon: float,
                  buffer: ReplayBuffer | None, rng) -> EpisodeRecord:
    """Epsilon-greedy episode against ground truth; transitions go into ``buffer``."""
    if isinstance(policy, QNet):
        policy = QPolicy(policy, epsilon)
    record = _run_episode(session, frame, policy, rng, gt=gt_box)
    if buffer is not None:
        buffer.extend(record.transitions)
    return record


def track_sequence(frames, gt0: BoundingBox, policy_factory, config: CascadeConfig, conv_weights=None, rng=None):
    """Run a whole sequence; returns (predicted boxes incl. frame 0, frame results)."""
    session = init(frames[0], gt0, config, conv_weights=conv_weights)
    policy = policy_factory(session)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    boxes, results = [gt0], []
    for frame in frames[1:]:
        res = track_frame(session, frame, policy, rng=rng)
        boxes.append(res.box)
        results.append(res)
    return boxes, results


# --------------------------------------------------------------------------
# deep supervision


def _minmax_backward(data, grad):
    lo_i, hi_i = int(np.argmin(data)), int(np.argmax(data))
    lo, hi = data.flat[lo_i], data.flat[hi_i]
    d = hi - lo
    if d <= 0:
        return np.zeros_like(data)
    out = grad / d
    flat = out.reshape(-1)
    flat[hi_i] += np.sum(grad * -(data - lo)) / d ** 2
    flat[lo_i] += np.sum(grad * (data - hi)) / d ** 2
    return out


def conv_map_chain(session: TrackerSession, fs: _FrameState, layer: int, new_wb=None) -> np.ndarray:
    """Policy map after ``layer`` with that layer's conv weights replaced by ``new_wb``.

    Used to check :func:`deep_supervise_step` against finite differences.
    """
    cfg = session.config
    k = int(cfg.layers[layer][4:]) - 1
    w, b = new_wb if new_wb is not None else session.conv_weights[k]
    lspec = session.conv_spec.layers[k]
    t_in = session.template_caches[k].x
    s_in = fs.ctx.conv_cache[k].x
    t_out, _ = conv_layer_forward(lspec, w, b, t_in)
    s_out, _ = conv_layer_forward(lspec, w, b, s_in)
    stride = session.conv_spec.strides()[k]
    raw = cross_correlate(FeatureMap(t_out, stride), FeatureMap(s_out, stride), cfg.xcorr_offset)
    maps = list(fs.raw_maps[:layer]) + [raw]
    return fuse_and_resample(maps, cfg.map_size, cfg.search_size)


def deep_supervise_step(session: TrackerSession, fs: _FrameState, layer: int, map_grad, lr: float):
    """One SGD step on the conv layer evaluated at cascade position ``layer``.

    ``map_grad`` is dLoss/d(policy map) for the state observed after that layer.
    Returns the new weight list (earlier and later layers untouched) and
    installs it in the session with refreshed templates.
    """
    cfg = session.config
    if not cfg.deep_supervision:
        raise RuntimeError("deep supervision is disabled in this configuration")
    name = cfg.layers[layer]
    if not name.startswith("conv"):
        raise ValueError(f"layer {name!r} has no trainable weights")
    k = int(name[4:]) - 1
    if len(fs.ctx.conv_cache) <= k:
        raise RuntimeError("conv activations for this layer were not cached")
    raw = fs.raw_maps[layer]
    g = np.asarray(map_grad, dtype=np.float64).reshape(cfg.map_size, cfg.map_size) / (layer + 1)
    ry, rx = _resample_matrices(raw.data.shape, raw.stride, raw.center, cfg.map_size,
                                cfg.search_size / cfg.map_size, (cfg.map_size - 1) / 2)
    g_norm = ry.T @ g @ rx
    g_raw = _minmax_backward(raw.data, g_norm)
    lspec = session.conv_spec.layers[k]
    w, b = session.conv_weights[k]
    t_cache = session.template_caches[k]
    s_cache = fs.ctx.conv_cache[k]
    d_t, d_s = cross_correlate_backward(t_cache.out, s_cache.out, g_raw)
    _, dw_t, db_t = conv_layer_backward(lspec, w, t_cache, d_t)
    _, dw_s, db_s = conv_layer_backward(lspec, w, s_cache, d_s)
    weights = list(session.conv_weights)
    weights[k] = (w - lr * (dw_t + dw_s), b - lr * (db_t + db_s))
    session.conv_weights = weights
    session.refresh_templates()
    return weights


def deep_supervision_grads(session, fs, layer, map_grad):
    """(dw, db) that :func:`deep_supervise_step` would apply, without applying them."""
    cfg = session.config
    k = int(cfg.layers[layer][4:]) - 1
    raw = fs.raw_maps[layer]
    g = np.asarray(map_grad, dtype=np.float64).reshape(cfg.map_size, cfg.map_size) / (layer + 1)
    ry, rx = _resample_matrices(raw.data.shape, raw.stride, raw.center, cfg.map_size,
                                cfg.search_size / cfg.map_size, (cfg.map_size - 1) / 2)
    g_raw = _minmax_backward(raw.data, ry.T @ g @ rx)
    lspec = session.conv_spec.layers[k]
    w, _ = session.conv_weights[k]
    t_cache, s_cache = session.template_caches[k], fs.ctx.conv_cache[k]
    d_t, d_s = cross_correlate_backward(t_cache.out, s_cache.out, g_raw)
    _, dw_t, db_t = conv_layer_backward(lspec, w, t_cache, d_t)
    _, dw_s, db_s = conv_layer_backward(lspec, w, s_cache, d_s)
    return dw_t + dw_s, db_t + db_s


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    qnet: QNet
    conv_weights: list
    config: CascadeConfig
    epoch_rewards: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    epoch_steps: list = field(default_factory=list)


def run_training(corpus, config: CascadeConfig | None = None, epochs: int | None = None, rng=None,
                 progress=None) -> TrainResult:
    """Q-learning over a list of sequences (objects with ``frames`` and ``boxes``).

    One episode per frame after the first; after every episode a minibatch is
    drawn from the replay buffer and one SGD step is taken.
    """
    config = config or CascadeConfig()
    epochs = config.epochs if epochs is None else epochs
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    net = QNet.init(rng, hidden=config.hidden, dropout=config.dropout)
    conv_weights = init_conv_weights(default_conv_spec(config.conv_depth), rng) if config.conv_depth else []
    result = TrainResult(net, conv_weights, config)
    if epochs == 0:
        return result
    buffer = ReplayBuffer(config.buffer_capacity)
    for epoch in range(epochs):
        eps = epsilon_schedule(epoch, epochs)
        ep_rewards, ep_losses, ep_steps = [], [], []
        for si in rng.permutation(len(corpus)):
            seq = corpus[si]
            session = init(seq.frames[0], seq.boxes[0], config, conv_weights=conv_weights)
            for t in range(1, len(seq.frames)):
                if config.reset_to_gt:
                    session.box = seq.boxes[t - 1]
                record = train_episode(session, seq.frames[t], seq.boxes[t], net, eps, buffer, rng)
                ep_rewards.append(sum(record.rewards))
                ep_steps.append(record.result.steps)
                if config.deep_supervision:
                    conv_weights = _supervise_episode(session, net, record, config)
                net, loss = q_learn_step(net, buffer.sample(config.batch_size, rng), config.gamma, config.lr, rng)
                ep_losses.append(loss)
        result.epoch_rewards.append(float(np.mean(ep_rewards)))
        result.epoch_losses.append(float(np.mean(ep_losses)))
        result.epoch_steps.append(float(np.mean(ep_steps)))
        if progress is not None:
            progress(epoch, eps, result)
    result.qnet = net
    result.conv_weights = conv_weights
    return result


def _supervise_episode(session, net, record, config):
    fs = record.frame_state
    for step, tr in enumerate(record.transitions):
        layer = record.layer_of_step[step]
        if not config.layers[layer].startswith("conv"):
            continue
        target = batch_targets(net, [tr], config.gamma)[0]
        g = state_gradient(net, tr, target)[: config.map_size ** 2]
        deep_supervise_step(session, fs, layer, g, config.ds_lr)
    return session.conv_weights
