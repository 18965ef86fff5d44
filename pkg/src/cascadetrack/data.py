"""Synthetic grayscale video with exact ground truth, and sequence files.

A textured target patch moves over a textured background. Frames are tagged
easy or hard in alternating blocks; hard frames get extra blur, distractor
patches drawn from the same texture generator as the target, and faster
motion. The tags are for evaluation slicing only.

On disk a sequence is a directory holding ``frame_NNNN.pgm`` (binary P5,
8-bit), ``groundtruth.txt`` (``index cx cy w h`` per line) and
``manifest.json``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import BoundingBox, format_annotation, parse_annotation

EASY, HARD = "easy", "hard"
MANIFEST_FORMAT = "cascadetrack-sequence"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SceneSpec:
    frame_width: int = 128
    frame_height: int = 128
    texture_seed: int = 0
    target_w: float = 24.0
    target_h: float = 24.0
    start_cx: float | None = None  # frame centre when None
    start_cy: float | None = None
    velocity_x: float = 1.0  # px per frame
    velocity_y: float = 0.0
    scale_drift: float = 0.0  # relative size change per frame
    clutter: int = 0  # distractor patches shown on hard frames
    blur: float = 0.0  # Gaussian sigma on every frame
    noise: float = 0.0  # additive Gaussian noise sigma (grey levels)
    hard_blur: float = 1.5  # extra blur sigma on hard frames
    hard_motion: float = 2.0  # velocity multiplier on hard frames
    hard_block: int = 0  # length of alternating easy/hard blocks; 0 = all easy
    start_hard: bool = False
    texture_scale: float = 2.0  # smoothing sigma of the random textures
    bounce: bool = True  # reflect the velocity at the frame border

    def __post_init__(self):
        for name in ("target_w", "target_h", "clutter", "blur", "noise", "hard_blur", "hard_motion",
                     "hard_block", "texture_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.frame_width < 8 or self.frame_height < 8:
            raise ValueError("frames must be at least 8x8")
        if not (self.target_w > 0 and self.target_h > 0):
            raise ValueError("target size must be positive")
        if not -0.5 < self.scale_drift < 0.5:
            raise ValueError("scale drift must lie in (-0.5, 0.5)")

    @property
    def bounds(self):
        return (self.frame_width, self.frame_height)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Sequence:
    frames: list
    boxes: list
    tags: list
    name: str = "sequence"
    spec: SceneSpec | None = None

    def __post_init__(self):
        if not (len(self.frames) == len(self.boxes) == len(self.tags)):
            raise ValueError(f"length mismatch: {len(self.frames)} frames, {len(self.boxes)} boxes, "
                             f"{len(self.tags)} tags")
        for t in self.tags:
            if t not in (EASY, HARD):
                raise ValueError(f"unknown difficulty tag {t!r}")

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        return (self.boxes == other.boxes and self.tags == other.tags and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames)))


def difficulty_schedule(length: int, block: int, start_hard: bool = False) -> list:
    if block <= 0:
        return [EASY] * length
    first, second = (HARD, EASY) if start_hard else (EASY, HARD)
    return [first if (i // block) % 2 == 0 else second for i in range(length)]


def _texture(rng, size: int, scale: float) -> np.ndarray:
    """Smoothed random texture stretched to the 0..1 range."""
    t = rng.standard_normal((size, size))
    if scale > 0:
        t = ndimage.gaussian_filter(t, scale, mode="wrap")
    t -= t.min()
    return t / max(t.max(), 1e-12)


def _paint(canvas, tex, cx, cy, w, h, lo, hi):
    """Draw ``tex`` stretched over the box with area-weighted edge coverage."""
    fh, fw = canvas.shape
    x0, x1, y0, y1 = cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
    c0, c1 = max(int(np.floor(x0)), 0), min(int(np.ceil(x1)), fw)
    r0, r1 = max(int(np.floor(y0)), 0), min(int(np.ceil(y1)), fh)
    if c0 >= c1 or r0 >= r1:
        return
    cols = np.arange(c0, c1)
    rows = np.arange(r0, r1)
    cov_x = np.clip(np.minimum(cols + 1, x1) - np.maximum(cols, x0), 0, 1)
    cov_y = np.clip(np.minimum(rows + 1, y1) - np.maximum(rows, y0), 0, 1)
    ts = tex.shape[0]
    # texture coordinates of the pixel centres, clamped to the patch
    u = np.clip((cols + 0.5 - x0) / w, 0, 1) * (ts - 1)
    v = np.clip((rows + 0.5 - y0) / h, 0, 1) * (ts - 1)
    patch = ndimage.map_coordinates(tex, np.meshgrid(v, u, indexing="ij"), order=1, mode="nearest")
    patch = lo + (hi - lo) * patch
    alpha = cov_y[:, None] * cov_x[None, :]
    region = canvas[r0:r1, c0:c1]
    canvas[r0:r1, c0:c1] = (1 - alpha) * region + alpha * patch


def generate(spec: SceneSpec, length: int, rng: np.random.Generator | None = None, name: str = "sequence") -> Sequence:
    """Render ``length`` frames. Textures come from ``spec.texture_seed``; noise from ``rng``."""
    if length < 2:
        raise ValueError("a sequence needs at least two frames")
    fw, fh = spec.frame_width, spec.frame_height
    if spec.target_w > fw or spec.target_h > fh:
        raise ValueError("target is larger than the frame")
    if rng is None:
        rng = np.random.default_rng(spec.texture_seed)
    trng = np.random.default_rng(spec.texture_seed)
    background = 40 + 120 * _texture(trng, max(fw, fh), 3 * spec.texture_scale)[:fh, :fw]
    target_tex = _texture(trng, 48, spec.texture_scale)
    distractors = []
    for _ in range(int(spec.clutter)):
        dtex = _texture(trng, 48, spec.texture_scale)
        dx = trng.uniform(spec.target_w / 2, fw - spec.target_w / 2)
        dy = trng.uniform(spec.target_h / 2, fh - spec.target_h / 2)
        distractors.append((dtex, dx, dy))

    tags = difficulty_schedule(length, spec.hard_block, spec.start_hard)
    cx = fw / 2 if spec.start_cx is None else spec.start_cx
    cy = fh / 2 if spec.start_cy is None else spec.start_cy
    w, h = spec.target_w, spec.target_h
    vx, vy = spec.velocity_x, spec.velocity_y
    drift = spec.scale_drift
    box = BoundingBox(cx, cy, w, h)
    if not box.inside(spec.bounds):
        raise ValueError(f"starting box {box} leaves the {fw}x{fh} frame")

    frames, boxes = [], []
    for i in range(length):
        hard = tags[i] == HARD
        if i > 0:
            k = spec.hard_motion if hard else 1.0
            nw, nh = w * (1 + drift), h * (1 + drift)
            if nw > fw or nh > fh or nw < 4 or nh < 4:
                drift = -drift
                nw, nh = w * (1 + drift), h * (1 + drift)
            w, h = nw, nh
            ncx, ncy = cx + k * vx, cy + k * vy
            if spec.bounce:
                if ncx - w / 2 < 0 or ncx + w / 2 > fw:
                    vx = -vx
                    ncx = cx + k * vx
                if ncy - h / 2 < 0 or ncy + h / 2 > fh:
                    vy = -vy
                    ncy = cy + k * vy
            cx, cy = ncx, ncy
            box = BoundingBox(cx, cy, w, h)
            if not box.inside(spec.bounds):
                raise ValueError(f"frame {i}: target box {box} leaves the frame")
        canvas = background.copy()
        if hard:
            for dtex, dx, dy in distractors:
                _paint(canvas, dtex, dx, dy, spec.target_w, spec.target_h, 30, 230)
        _paint(canvas, target_tex, cx, cy, w, h, 30, 230)
        sigma = spec.blur + (spec.hard_blur if hard else 0.0)
        if sigma > 0:
            canvas = ndimage.gaussian_filter(canvas, sigma, mode="nearest")
        if spec.noise > 0:
            canvas = canvas + rng.normal(0, spec.noise, canvas.shape)
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
        boxes.append(box)
    return Sequence(frames, boxes, tags, name, spec)


# --------------------------------------------------------------------------
# standard corpus

TRAIN_SEEDS = tuple(range(1000, 1040))
TEST_SEEDS = tuple(range(2000, 2020))
CORPUS_LENGTH = 100


def corpus_spec(seed: int) -> SceneSpec:
    """Scene recipe of one corpus sequence; every random choice derives from ``seed``."""
    r = np.random.default_rng(seed)
    size = r.uniform(20, 28)
    aspect = r.uniform(0.85, 1.15)
    speed = r.uniform(0.5, 1.5)
    angle = r.uniform(0, 2 * np.pi)
    return SceneSpec(
        texture_seed=seed,
        target_w=float(size * np.sqrt(aspect)),
        target_h=float(size / np.sqrt(aspect)),
        start_cx=float(r.uniform(40, 88)),
        start_cy=float(r.uniform(40, 88)),
        velocity_x=float(speed * np.cos(angle)),
        velocity_y=float(speed * np.sin(angle)),
        scale_drift=float(r.uniform(-0.004, 0.004)),
        clutter=3,
        noise=2.0,
        hard_blur=1.5,
        hard_motion=2.5,
        hard_block=10,
    )


def corpus_sequence(seed: int, length: int = CORPUS_LENGTH) -> Sequence:
    spec = corpus_spec(seed)
    return generate(spec, length, np.random.default_rng(seed + 7919), name=f"seq{seed}")


def standard_corpus(rng=None, n_train: int = 40, n_test: int = 20, length: int = CORPUS_LENGTH):
    """(train, test) lists: seeds 1000.. for training and 2000.. for testing.

    ``rng`` is accepted for interface symmetry and ignored: the recipe is fixed
    by its documented seeds.
    """
    train = [corpus_sequence(s, length) for s in TRAIN_SEEDS[:n_train]]
    test = [corpus_sequence(s, length) for s in TEST_SEEDS[:n_test]]
    return train, test


# --------------------------------------------------------------------------
# files


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM frames must be 2-D uint8 arrays")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if maxval != 255 or width < 1 or height < 1:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace after maxval
    payload = data[pos:]
    if len(payload) != width * height:
        raise ValueError(f"{path}: expected {width * height} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def save_sequence(seq: Sequence, path):
    os.makedirs(path, exist_ok=True)
    names = [f"frame_{i:04d}.pgm" for i in range(len(seq))]
    for name, frame in zip(names, seq.frames):
        write_pgm(os.path.join(path, name), frame)
    with open(os.path.join(path, "groundtruth.txt"), "w") as f:
        for i, box in enumerate(seq.boxes):
            f.write(format_annotation(i, box) + "\n")
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "name": seq.name,
        "width": int(seq.frames[0].shape[1]),
        "height": int(seq.frames[0].shape[0]),
        "frames": names,
        "tags": list(seq.tags),
        "spec": seq.spec.to_dict() if seq.spec is not None else None,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_sequence(path) -> Sequence:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{mpath}: malformed manifest ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{mpath}: not a sequence manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{mpath}: unsupported manifest version {manifest.get('version')}")
    names = manifest["frames"]
    tags = manifest["tags"]
    boxes = []
    with open(os.path.join(path, "groundtruth.txt")) as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            index, box = parse_annotation(line)
            if index != len(boxes):
                raise ValueError(f"groundtruth line {lineno + 1}: expected index {len(boxes)}, got {index}")
            boxes.append(box)
    if len(boxes) != len(names) or len(tags) != len(names):
        raise ValueError(f"{path}: {len(names)} frames but {len(boxes)} annotations and {len(tags)} tags")
    frames = [read_pgm(os.path.join(path, n)) for n in names]
    for n, fr in zip(names, frames):
        if fr.shape != (manifest["height"], manifest["width"]):
            raise ValueError(f"{n}: size {fr.shape[::-1]} differs from manifest")
    spec = SceneSpec(**manifest["spec"]) if manifest.get("spec") else None
    return Sequence(frames, boxes, tags, manifest.get("name", os.path.basename(path)), spec)


def save_corpus(seqs, path):
    os.makedirs(path, exist_ok=True)
    for seq in seqs:
        save_sequence(seq, os.path.join(path, seq.name))


def load_corpus(path) -> list:
    """Every sequence directory directly under ``path``, or ``path`` itself if it is one."""
    if os.path.exists(os.path.join(path, "manifest.json")):
        return [load_sequence(path)]
    dirs = sorted(d for d in os.listdir(path) if os.path.exists(os.path.join(path, d, "manifest.json")))
    if not dirs:
        raise ValueError(f"{path}: no sequences found")
    return [load_sequence(os.path.join(path, d)) for d in dirs]
