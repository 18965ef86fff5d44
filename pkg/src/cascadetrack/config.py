"""Cascade/tracker/training configuration and its flat ``key = value`` text form.

Text format: one ``key = value`` per line, ``#`` starts a comment, tuples are
comma separated, booleans are ``true``/``false``, floats use Python's
round-tripping ``repr``, an unset optional value is ``none``. Unknown keys are
an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

CHEAP_LAYERS = ("pixel", "hog")
CONV_LAYERS = tuple(f"conv{i}" for i in range(1, 6))


@dataclass(frozen=True)
class CascadeConfig:
    layers: tuple = ("pixel", "hog", "conv1", "conv2", "conv3")
    template_size: int = 32
    search_size: int = 64
    map_size: int = 17
    padding: float = 2.0
    stop_iou: float = 0.6
    # correlation filters
    dcf_lambda: float = 1e-2
    dcf_sigma_factor: float = 0.1
    dcf_update: bool = True
    dcf_rate: float = 0.02
    # also refresh filters of layers the episode skipped
    dcf_update_skipped: bool = False
    hog_cell: int = 4
    hog_bins: int = 9
    xcorr_offset: float = 0.0
    # "native": argmax of the fused maps at one search-window pixel; "grid": argmax of the 17x17 policy map
    translation: str = "native"
    # threshold-heuristic baseline
    threshold: float = 0.9
    threshold_scale_rate: float = 0.1
    # agent and training
    gamma: float = 0.9
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 10_000
    dropout: float = 0.5
    hidden: int = 128
    epochs: int = 50
    # start each training episode from the previous ground-truth box instead of the tracked one
    reset_to_gt: bool = True
    deep_supervision: bool = False
    ds_lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ValueError("cascade needs at least one layer")
        for name in layers:
            if name not in CHEAP_LAYERS + CONV_LAYERS:
                raise ValueError(f"unknown layer {name!r}")
        if len(set(layers)) != len(layers):
            raise ValueError("duplicate layers")
        convs = [n for n in layers if n.startswith("conv")]
        if convs != list(CONV_LAYERS[: len(convs)]):
            raise ValueError("conv layers must be conv1..convK in order")
        if convs and layers[-len(convs):] != tuple(convs):
            raise ValueError("conv layers must come after the cheap layers")
        if self.translation not in ("grid", "native"):
            raise ValueError("translation must be 'grid' or 'native'")
        if self.search_size != 2 * self.template_size:
            raise ValueError("search window must be twice the template size")
        if self.search_size % self.hog_cell:
            raise ValueError("search size must be a multiple of the HOG cell")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def conv_depth(self) -> int:
        return sum(1 for n in self.layers if n.startswith("conv"))

    def replace(self, **changes) -> "CascadeConfig":
        return dataclasses.replace(self, **changes)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, like):
    """Parse ``text`` into the type of the default value ``like``."""
    text = text.strip()
    if like is None:
        # optional reals default to None
        return None if text.lower() in ("", "none") else float(text)
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if like and not isinstance(like[0], str):
            return tuple(parse_value(t, like[0]) for t in items)
        return tuple(items)
    return text


def to_text(obj) -> str:
    lines = [f"{f.name} = {format_value(getattr(obj, f.name))}" for f in fields(obj)]
    return "\n".join(lines) + "\n"


def parse_pairs(text: str) -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def apply_pairs(cls_or_obj, pairs: dict, strict: bool = True):
    """Build (or update) a dataclass instance from string pairs; returns (obj, unused_pairs)."""
    base = cls_or_obj() if isinstance(cls_or_obj, type) else cls_or_obj
    known = {f.name for f in fields(base)}
    changes, unused = {}, {}
    for key, value in pairs.items():
        if key in known:
            changes[key] = parse_value(value, getattr(base, key))
        elif strict:
            raise ValueError(f"unknown configuration key {key!r}")
        else:
            unused[key] = value
    return dataclasses.replace(base, **changes), unused


def from_text(text: str, cls=CascadeConfig):
    obj, _ = apply_pairs(cls, parse_pairs(text))
    return obj
