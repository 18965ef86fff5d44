"""Evaluation: overlap-success AUC, stopping statistics, timing and baseline comparison.

Methods compared on identical sequences:

``east``       learned policy, may stop at any layer
``east_last``  learned scaling actions, never stops before the last layer
``east_th``    advance while the confidence peak is below a threshold
``dcf_only``   stop at the first layer (pixel correlation filter), no scaling
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from .agent import QNet
from .config import CascadeConfig
from .data import EASY
from .geometry import iou
from .tracker import QPolicy, StopFirstPolicy, ThresholdPolicy, track_sequence

THRESHOLDS = np.arange(21) / 20.0
METHODS = ("east", "east_last", "east_th", "dcf_only")
REPORT_FORMAT = "cascadetrack-report"
REPORT_VERSION = 1
CHEAP = ("pixel", "hog")


def success_curve(pred_boxes, gt_boxes, thresholds=THRESHOLDS) -> np.ndarray:
    """Fraction of frames whose IoU is strictly above each threshold."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"{len(pred_boxes)} predictions for {len(gt_boxes)} ground-truth boxes")
    if not pred_boxes:
        raise ValueError("no frames to evaluate")
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    return (ious[None, :] > np.asarray(thresholds)[:, None]).mean(axis=1)


def success_auc(pred_boxes, gt_boxes, thresholds=THRESHOLDS) -> float:
    return float(success_curve(pred_boxes, gt_boxes, thresholds).mean())


def stopping_stats(results, n_layers: int | None = None):
    """(per-layer stop probabilities, mean steps) over a list of frame results."""
    steps = np.array([r.steps if hasattr(r, "steps") else int(r) for r in results])
    if steps.size == 0:
        raise ValueError("no frame results")
    n = int(steps.max()) if n_layers is None else n_layers
    if steps.min() < 1 or steps.max() > n:
        raise ValueError("stop layer outside 1..n_layers")
    hist = np.bincount(steps - 1, minlength=n).astype(np.float64)
    return hist / steps.size, float(steps.mean())


@dataclass
class SequenceRow:
    method: str
    sequence: str
    auc: float
    mean_steps: float
    median_ms_per_frame: float
    stop_probs: list
    frame_ms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    tags: list = field(default_factory=list)


@dataclass
class EvalReport:
    layers: tuple
    methods: tuple
    rows: list
    aggregate: dict
    speedup: dict
    config: dict

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def row(self, method: str, sequence: str) -> SequenceRow:
        for r in self.rows:
            if r.method == method and r.sequence == sequence:
                return r
        raise KeyError((method, sequence))


def _policy_factory(method, qnet):
    if method == "east":
        return lambda s: QPolicy(qnet)
    if method == "east_last":
        return lambda s: QPolicy(qnet, stop_early=False)
    if method == "east_th":
        return lambda s: ThresholdPolicy(s)
    if method == "dcf_only":
        return lambda s: StopFirstPolicy()
    raise ValueError(f"unknown method {method!r}")


def evaluate_sequence(seq, method: str, qnet: QNet, conv_weights, config: CascadeConfig, seed: int = 0) -> SequenceRow:
    rng = np.random.default_rng(seed)
    boxes, results = track_sequence(seq.frames, seq.boxes[0], _policy_factory(method, qnet), config,
                                    conv_weights=conv_weights, rng=rng)
    # frame 0 is the given initialisation and is not scored
    auc = success_auc(boxes[1:], seq.boxes[1:])
    probs, mean_steps = stopping_stats(results, config.n_layers)
    frame_ms = [r.total_time * 1e3 for r in results]
    return SequenceRow(method, seq.name, auc, mean_steps, float(np.median(frame_ms)), [float(p) for p in probs],
                       frame_ms, [r.steps for r in results], list(seq.tags[1:]))


def _job(args):
    return evaluate_sequence(*args)


def aggregate_rows(rows, n_layers: int) -> dict:
    """Method -> pooled statistics. AUC is the mean of the per-sequence AUCs."""
    out = {}
    for method in dict.fromkeys(r.method for r in rows):
        rs = [r for r in rows if r.method == method]
        steps = np.concatenate([r.steps for r in rs]).astype(int)
        tags = [t for r in rs for t in r.tags]
        probs, mean_steps = stopping_stats(steps, n_layers)
        easy = np.array([t == EASY for t in tags])
        entry = {
            "auc": float(np.mean([r.auc for r in rs])),
            "mean_steps": mean_steps,
            "median_ms_per_frame": float(np.median(np.concatenate([r.frame_ms for r in rs]))),
            "stop_probs": [float(p) for p in probs],
        }
        for name, mask in (("easy", easy), ("hard", ~easy)):
            if mask.any():
                p, _ = stopping_stats(steps[mask], n_layers)
                entry[f"stop_probs_{name}"] = [float(v) for v in p]
            else:
                entry[f"stop_probs_{name}"] = [0.0] * n_layers
        out[method] = entry
    return out


def speedups(aggregate: dict) -> dict:
    """speedup[m][b] = median frame time of b / median frame time of m."""
    return {m: {b: aggregate[b]["median_ms_per_frame"] / aggregate[m]["median_ms_per_frame"] for b in aggregate}
            for m in aggregate}


def compare_baselines(corpus, qnet: QNet, config: CascadeConfig, conv_weights=None, methods=METHODS,
                      workers: int = 1, seed: int | None = None) -> EvalReport:
    """Run every method on every sequence with the same seeds and collect an :class:`EvalReport`."""
    if qnet is None:
        raise ValueError("a trained Q-network is required")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("evaluation corpus is empty")
    seed = config.seed if seed is None else seed
    if conv_weights is None:
        conv_weights = []
    if config.conv_depth and not conv_weights:
        raise ValueError("configuration has conv layers but no conv weights were given")
    jobs = [(seq, m, qnet, conv_weights, config, seed + i) for m in methods for i, seq in enumerate(corpus)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    agg = aggregate_rows(rows, config.n_layers)
    return EvalReport(tuple(config.layers), tuple(methods), rows, agg, speedups(agg),
                      {f: config_mod.format_value(getattr(config, f)) for f in config.__dataclass_fields__})


# --------------------------------------------------------------------------
# emission

def csv_header(n_layers: int) -> list:
    return ["method", "sequence", "auc", "mean_steps", "median_ms_per_frame"] + [
        f"stop_p{i}" for i in range(1, n_layers + 1)]


def _csv_rows(report: EvalReport):
    for r in report.rows:
        yield [r.method, r.sequence, repr(r.auc), repr(r.mean_steps), repr(r.median_ms_per_frame)] + [
            repr(p) for p in r.stop_probs]
    for m, a in report.aggregate.items():
        yield [m, "ALL", repr(a["auc"]), repr(a["mean_steps"]), repr(a["median_ms_per_frame"])] + [
            repr(p) for p in a["stop_probs"]]


def report_to_json(report: EvalReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "layers": list(report.layers),
        "methods": list(report.methods),
        "sequences": [
            {"method": r.method, "sequence": r.sequence, "auc": r.auc, "mean_steps": r.mean_steps,
             "median_ms_per_frame": r.median_ms_per_frame, "stop_probs": r.stop_probs, "steps": r.steps,
             "frame_ms": r.frame_ms}
            for r in report.rows
        ],
        "aggregate": report.aggregate,
        "speedup": report.speedup,
        "config": report.config,
    }


def emit(report: EvalReport, fmt: str, path):
    """Write the report as ``csv`` or ``json``."""
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(csv_header(report.n_layers))
            w.writerows(_csv_rows(report))
    elif fmt == "json":
        with open(path, "w") as f:
            json.dump(report_to_json(report), f, indent=1)
            f.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_csv(path) -> list:
    """Rows of an emitted CSV as dicts with numeric fields parsed."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k in list(r):
            if k not in ("method", "sequence"):
                r[k] = float(r[k])
    return rows


def read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


# JSON Schema of the emitted report (draft 2020-12)
_PROBS = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "version", "layers", "methods", "sequences", "aggregate", "speedup", "config"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "version": {"const": REPORT_VERSION},
        "layers": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "sequences": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["method", "sequence", "auc", "mean_steps", "median_ms_per_frame", "stop_probs",
                             "steps", "frame_ms"],
                "properties": {
                    "method": {"type": "string"},
                    "sequence": {"type": "string"},
                    "auc": {"type": "number", "minimum": 0, "maximum": 1},
                    "mean_steps": {"type": "number", "minimum": 1},
                    "median_ms_per_frame": {"type": "number", "minimum": 0},
                    "stop_probs": _PROBS,
                    "steps": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    "frame_ms": {"type": "array", "items": {"type": "number", "minimum": 0}},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["auc", "mean_steps", "median_ms_per_frame", "stop_probs", "stop_probs_easy",
                             "stop_probs_hard"],
                "properties": {
                    "auc": {"type": "number", "minimum": 0, "maximum": 1},
                    "mean_steps": {"type": "number", "minimum": 1},
                    "median_ms_per_frame": {"type": "number", "minimum": 0},
                    "stop_probs": _PROBS,
                    "stop_probs_easy": _PROBS,
                    "stop_probs_hard": _PROBS,
                },
            },
        },
        "speedup": {"type": "object", "additionalProperties": {"type": "object",
                                                               "additionalProperties": {"type": "number"}}},
        "config": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}


# --------------------------------------------------------------------------
# overlays

def _draw_rect(img, box, color):
    h, w = img.shape[:2]
    x0 = int(np.clip(np.floor(box.x0), 0, w - 1))
    x1 = int(np.clip(np.ceil(box.x1) - 1, 0, w - 1))
    y0 = int(np.clip(np.floor(box.y0), 0, h - 1))
    y1 = int(np.clip(np.ceil(box.y1) - 1, 0, h - 1))
    img[y0, x0:x1 + 1] = color
    img[y1, x0:x1 + 1] = color
    img[y0:y1 + 1, x0] = color
    img[y0:y1 + 1, x1] = color


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0]))
        f.write(np.ascontiguousarray(rgb).tobytes())


def emit_overlays(sequence, pred_boxes, out_dir, draw_gt: bool = True) -> list:
    """One PPM per frame: prediction in red, ground truth in green. Returns the written paths."""
    if len(pred_boxes) != len(sequence.frames):
        raise ValueError("need one predicted box per frame")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (frame, box) in enumerate(zip(sequence.frames, pred_boxes)):
        rgb = np.repeat(np.asarray(frame, dtype=np.uint8)[:, :, None], 3, axis=2)
        if draw_gt:
            _draw_rect(rgb, sequence.boxes[i], (0, 255, 0))
        _draw_rect(rgb, box, (255, 0, 0))
        path = os.path.join(out_dir, f"overlay_{i:04d}.ppm")
        write_ppm(path, rgb)
        paths.append(path)
    return paths
