"""NEAW binary model files and their JSON sidecars.

Layout (all little-endian)::

    b"NEAW"  u32 version  u32 n_layers
    per layer: u32 d_in  u32 d_out  f64[d_in*d_out] row-major W
    u32 n_sections
    per section: 4-byte tag  u64 payload length  payload

The only section so far is ``b"CLSF"`` (classifier): u32 order flag,
u32 n_fc, then per FC layer u32 d_in, u32 d_out, W, b and, for hidden
layers, LayerNorm gain and shift (f64 arrays of length d_out).
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .classifier import ClassifierModel
from .encoder import EncoderModel, WtaLayer

MAGIC = b"NEAW"
VERSION = 1
TAG_CLASSIFIER = b"CLSF"
_ORDERS = ("ln-relu", "relu-ln")


class ModelFormatError(ValueError):
    pass


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encoder_bytes(model: EncoderModel) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(model.layers))]
    for layer in model.layers:
        out.append(struct.pack("<II", layer.d_in, layer.d_out))
        out.append(_f64(layer.W))
    return b"".join(out)


def encoder_hash(model: EncoderModel) -> str:
    return hashlib.sha256(encoder_bytes(model)).hexdigest()


def classifier_bytes(clf: ClassifierModel) -> bytes:
    out = [struct.pack("<II", _ORDERS.index(clf.order), clf.n_fc)]
    for i in range(1, clf.n_fc + 1):
        W = clf.params[f"W{i}"]
        out.append(struct.pack("<II", *W.shape))
        out.append(_f64(W))
        out.append(_f64(clf.params[f"b{i}"]))
        if i < clf.n_fc:
            out.append(_f64(clf.params[f"g{i}"]))
            out.append(_f64(clf.params[f"s{i}"]))
    return b"".join(out)


def to_bytes(encoder: EncoderModel, classifier: ClassifierModel | None = None) -> bytes:
    sections = []
    if classifier is not None:
        sections.append((TAG_CLASSIFIER, classifier_bytes(classifier)))
    out = [encoder_bytes(encoder), struct.pack("<I", len(sections))]
    for tag, payload in sections:
        out += [tag, struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.f = io.BytesIO(buf)
        self.n = len(buf)

    def take(self, k: int) -> bytes:
        b = self.f.read(k)
        if len(b) != k:
            raise ModelFormatError(f"truncated model file at byte {self.f.tell()}")
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, count: int, shape=None) -> np.ndarray:
        a = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)
        return a.reshape(shape) if shape is not None else a

    def done(self) -> bool:
        return self.f.tell() == self.n


def _read_classifier(payload: bytes) -> ClassifierModel:
    r = _Reader(payload)
    order = r.u32()
    if order >= len(_ORDERS):
        raise ModelFormatError(f"unknown classifier block order {order}")
    n_fc = r.u32()
    params = {}
    for i in range(1, n_fc + 1):
        d_in, d_out = r.u32(), r.u32()
        params[f"W{i}"] = r.f64(d_in * d_out, (d_in, d_out))
        params[f"b{i}"] = r.f64(d_out)
        if i < n_fc:
            params[f"g{i}"] = r.f64(d_out)
            params[f"s{i}"] = r.f64(d_out)
    if not r.done():
        raise ModelFormatError("trailing bytes in classifier section")
    return ClassifierModel(params, _ORDERS[order])


def from_bytes(buf: bytes):
    """Returns ``(encoder, classifier_or_None)``."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ModelFormatError("not a NEAW model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    n = r.u32()
    if n == 0:
        raise ModelFormatError("model has no layers")
    layers = []
    for _ in range(n):
        d_in, d_out = r.u32(), r.u32()
        layers.append(WtaLayer(r.f64(d_in * d_out, (d_in, d_out))))
    enc = EncoderModel(layers)
    clf = None
    for _ in range(r.u32()):
        tag = r.take(4)
        payload = r.take(r.u64())
        if tag == TAG_CLASSIFIER:
            clf = _read_classifier(payload)
        # unknown sections are skipped so newer files still load
    if not r.done():
        raise ModelFormatError("trailing bytes after last section")
    return enc, clf


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_model(path, encoder: EncoderModel, classifier: ClassifierModel | None = None, meta: dict | None = None):
    """Write the binary file plus ``<path>.json`` with dims, hashes and whatever ``meta`` holds."""
    path = Path(path)
    _atomic_write(path, to_bytes(encoder, classifier))
    side = {"dims": list(encoder.dims), "encoder_sha256": encoder_hash(encoder), "format_version": VERSION}
    if classifier is not None:
        side["classifier_widths"] = list(classifier.widths)
        side["classifier_order"] = classifier.order
    side.update(meta or {})
    _atomic_write(sidecar_path(path), (json.dumps(side, indent=2, sort_keys=True) + "\n").encode())
    return path


def load_model(path):
    return from_bytes(Path(path).read_bytes())


def load_sidecar(path) -> dict:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else {}
