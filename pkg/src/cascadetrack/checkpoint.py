"""Model and session checkpoints.

Layout (little-endian)::

    magic     8 bytes   b"CTCKPT\\0\\0"
    version   uint32
    count     uint32    number of sections
    then per section:
      tag     4 ASCII bytes
      length  uint64    payload bytes
      payload

Sections: ``CONF`` (configuration text), ``CONV`` (conv weight blob, absent
without conv layers), ``QNET`` (Q-network), ``SESS`` (optional tracking
session: box, frame counter, frame bounds, first-frame search crop, reference
peaks and correlation-filter statistics). Conv templates are not stored; they
are recomputed from the stored crop and weights.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import config as config_mod
from .agent import QNet
from .config import CascadeConfig
from .corrfilter import DcfModel
from .features import default_conv_spec, weights_from_bytes, weights_to_bytes
from .geometry import BoundingBox

MAGIC = b"CTCKPT\x00\x00"
VERSION = 1


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u32(self, *values):
        self.buf.write(struct.pack(f"<{len(values)}I", *values))

    def f64(self, *values):
        self.buf.write(struct.pack(f"<{len(values)}d", *values))

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf.write(raw)

    def array(self, a, dtype):
        a = np.asarray(a)
        self.u32(a.ndim, *a.shape)
        self.buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.off = 0
        self.what = what

    def _take(self, n):
        if self.off + n > len(self.data):
            raise ValueError(f"truncated {self.what} section")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self, n=1):
        vals = struct.unpack(f"<{n}I", self._take(4 * n))
        return vals[0] if n == 1 else vals

    def f64(self, n=1):
        vals = struct.unpack(f"<{n}d", self._take(8 * n))
        return vals[0] if n == 1 else vals

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def array(self, dtype):
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))

    def done(self):
        if self.off != len(self.data):
            raise ValueError(f"trailing bytes in {self.what} section")


def qnet_to_bytes(net: QNet) -> bytes:
    w = _Writer()
    w.f64(net.dropout)
    w.u32(len(net.layers))
    for weight, bias in net.layers:
        w.array(weight, "<f8")
        w.array(bias, "<f8")
    return w.getvalue()


def qnet_from_bytes(data: bytes) -> QNet:
    r = _Reader(data, "QNET")
    dropout = r.f64()
    layers = [(r.array("<f8"), r.array("<f8")) for _ in range(r.u32())]
    r.done()
    return QNet(layers, dropout)


def _session_to_bytes(session) -> bytes:
    w = _Writer()
    b = session.box
    w.f64(b.cx, b.cy, b.w, b.h)
    w.u32(session.frame_index, *session.bounds)
    w.array(session.init_crop, "<f8")
    w.array(np.asarray(session.ref_peaks, dtype=np.float64), "<f8")
    w.u32(len(session.dcf))
    for name, model in session.dcf.items():
        w.text(name)
        w.f64(model.lam, model.update_rate)
        w.array(model.num, "<c16")
        w.array(model.den, "<f8")
        w.array(model.label_hat, "<c16")
        w.array(model.window, "<f8")
    return w.getvalue()


def _session_from_bytes(data: bytes, config: CascadeConfig, conv_weights):
    from .tracker import TrackerSession

    r = _Reader(data, "SESS")
    box = BoundingBox(*r.f64(4))
    frame_index, bw, bh = r.u32(3)
    crop = r.array("<f8")
    ref_peaks = [float(v) for v in r.array("<f8")]
    dcf = {}
    for _ in range(r.u32()):
        name = r.text()
        lam, rate = r.f64(2)
        num = r.array("<c16")
        den = r.array("<f8")
        label_hat = r.array("<c16")
        window = r.array("<f8")
        dcf[name] = DcfModel(num=num, den=den, lam=lam, label_hat=label_hat, window=window, update_rate=rate)
    r.done()
    spec = default_conv_spec(config.conv_depth) if config.conv_depth else None
    session = TrackerSession(config=config, conv_spec=spec, conv_weights=list(conv_weights), init_crop=crop,
                             box=box, bounds=(bw, bh), frame_index=frame_index, dcf=dcf, ref_peaks=ref_peaks)
    if spec is not None:
        session.refresh_templates()
    return session


@dataclass
class Checkpoint:
    config: CascadeConfig
    qnet: QNet
    conv_weights: list
    session: object = None  # TrackerSession or None


def to_bytes(ckpt: Checkpoint) -> bytes:
    sections = [(b"CONF", config_mod.to_text(ckpt.config).encode("utf-8"))]
    if ckpt.config.conv_depth:
        spec = default_conv_spec(ckpt.config.conv_depth)
        sections.append((b"CONV", weights_to_bytes(spec, ckpt.conv_weights)))
    sections.append((b"QNET", qnet_to_bytes(ckpt.qnet)))
    if ckpt.session is not None:
        sections.append((b"SESS", _session_to_bytes(ckpt.session)))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(sections)))
    for tag, payload in sections:
        out.write(tag)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if len(data) < 16:
        raise ValueError("truncated checkpoint header")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    sections = {}
    for _ in range(count):
        if off + 12 > len(data):
            raise ValueError("truncated checkpoint section header")
        tag = data[off:off + 4].decode("ascii", "replace")
        (length,) = struct.unpack_from("<Q", data, off + 4)
        off += 12
        if off + length > len(data):
            raise ValueError(f"truncated {tag} section")
        sections[tag] = data[off:off + length]
        off += length
    if off != len(data):
        raise ValueError("trailing bytes after the last section")
    for tag in ("CONF", "QNET"):
        if tag not in sections:
            raise ValueError(f"checkpoint lacks the {tag} section")
    config = config_mod.from_text(sections["CONF"].decode("utf-8"))
    conv_weights = []
    if config.conv_depth:
        if "CONV" not in sections:
            raise ValueError("checkpoint lacks the CONV section")
        spec, conv_weights = weights_from_bytes(sections["CONV"])
        if spec != default_conv_spec(config.conv_depth):
            raise ValueError("stored conv stack does not match the configuration")
    qnet = qnet_from_bytes(sections["QNET"])
    session = _session_from_bytes(sections["SESS"], config, conv_weights) if "SESS" in sections else None
    return Checkpoint(config, qnet, conv_weights, session)


def save(path, ckpt: Checkpoint):
    with open(path, "wb") as f:
        f.write(to_bytes(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read())
