"""Point-cloud construction: synthetic shapes, OFF meshes, point-MNIST.

Clouds are ``N x D`` float64 arrays (D = 2 or 3) wrapped in
:class:`PointCloud`. Every constructor ends with :func:`normalize`, which
centres the cloud and scales it into the unit ball.
"""
from __future__ import annotations

import csv
import gzip
import json
import math
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import SeededRng, derive_seed

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus")


class MeshParseError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass
class PointCloud:
    points: np.ndarray
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] not in (2, 3):
            raise ValueError(f"point cloud must be N x 2 or N x 3 with N >= 1, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    def areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


@dataclass
class DatasetSplit:
    clouds: list
    class_names: list
    fraction: float = 1.0

    def __post_init__(self):
        k = len(self.class_names)
        for c in self.clouds:
            if c.label is None or not 0 <= c.label < k:
                raise ValueError(f"cloud {c.source_id!r} has label {c.label} outside {k} classes")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")

    def __len__(self):
        return len(self.clouds)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clouds], dtype=np.int64)


def normalize(cloud: PointCloud) -> PointCloud:
    pts = cloud.points - cloud.points.mean(axis=0)
    r = np.sqrt((pts * pts).sum(axis=1)).max()
    if r > 0:
        pts = pts / r
    return replace(cloud, points=pts)


# -- synthetic shapes -----------------------------------------------------

def _sphere(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng):
    # half-extent 1; six faces of equal area
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    side = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        m = axis == a
        others = [b for b in range(3) if b != a]
        pts[m, a] = side[m]
        pts[m, others[0]] = uv[m, 0]
        pts[m, others[1]] = uv[m, 1]
    return pts


def _cylinder(n, rng, radius=1.0, height=2.0):
    side = 2 * math.pi * radius * height
    cap = math.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * math.pi, size=n)
    u = rng.uniform(size=n)
    z = rng.uniform(-height / 2, height / 2, size=n)
    r = np.where(part == 0, radius, radius * np.sqrt(u))
    z = np.where(part == 0, z, np.where(part == 1, -height / 2, height / 2))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(n, rng, radius=1.0, height=2.0):
    slant = math.hypot(radius, height)
    side = math.pi * radius * slant
    base = math.pi * radius ** 2
    on_side = rng.uniform(size=n) < side / (side + base)
    theta = rng.uniform(0, 2 * math.pi, size=n)
    s = np.sqrt(rng.uniform(size=n))
    # lateral: fraction s of the way from apex to rim; base: disc of radius R*s
    r = radius * s
    z = np.where(on_side, height / 2 - height * s, -height / 2)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _torus(n, rng, major=1.0, minor=0.4):
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.uniform(0, 2 * math.pi, size=m)
        v = rng.uniform(0, 2 * math.pi, size=m)
        # area element is proportional to (R + r cos v)
        keep = rng.uniform(size=m) * (major + minor) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)])
    return out[:n]


_SAMPLERS = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def shape_surface(kind: str, n: int, seed: int) -> np.ndarray:
    """Raw area-uniform surface samples of a canonical shape, before jitter or normalisation."""
    if kind not in _SAMPLERS:
        raise ValueError(f"unknown shape {kind!r}; expected one of {', '.join(SHAPES)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return _SAMPLERS[kind](int(n), SeededRng(seed))


def generate_shape(kind: str, n: int, seed: int, jitter: float = 0.0, label=None, source_id="") -> PointCloud:
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    pts = shape_surface(kind, n, seed)
    if jitter > 0:
        pts = pts + SeededRng(seed).child("jitter").normal(0.0, jitter, size=pts.shape)
    return normalize(PointCloud(pts, label, source_id or f"{kind}-{seed}"))


def synthetic_dataset(n_per_class: int, n_points: int = 1024, seed: int = 0, split: str = "train",
                      jitter: float = 0.02, shapes=SHAPES) -> DatasetSplit:
    """Balanced labelled set of synthetic shapes; per-cloud seeds hash (seed, split, id)."""
    clouds = []
    for label, kind in enumerate(shapes):
        for i in range(n_per_class):
            sid = f"{split}/{kind}/{i:05d}"
            clouds.append(generate_shape(kind, n_points, derive_seed(seed, sid), jitter, label, sid))
    return DatasetSplit(clouds, list(shapes))


# -- OFF meshes -----------------------------------------------------------

def _off_lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def parse_off(text) -> TriMesh:
    """Parse an OFF mesh, including ModelNet's fused ``OFF<nv> <nf> <ne>`` header.

    Polygons are fan-triangulated from their first vertex; triangles with a
    repeated vertex index are dropped.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8", errors="replace")
    lines = _off_lines(text)
    try:
        no, first = next(lines)
    except StopIteration:
        raise MeshParseError("empty file", 1) from None
    if not first.startswith("OFF"):
        raise MeshParseError("missing OFF header", no)
    rest = first[3:].strip()
    if rest:
        counts_line, counts_no = rest, no
    else:
        try:
            counts_no, counts_line = next(lines)
        except StopIteration:
            raise MeshParseError("missing element counts", no) from None
    try:
        counts = [int(t) for t in counts_line.split()]
    except ValueError:
        raise MeshParseError(f"malformed counts {counts_line!r}", counts_no) from None
    if len(counts) < 2 or min(counts[:2]) < 0:
        raise MeshParseError(f"malformed counts {counts_line!r}", counts_no)
    nv, nf = counts[0], counts[1]
    if nv == 0 or nf == 0:
        raise MeshParseError("empty mesh (no vertices or faces)", counts_no)
    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            no, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {nv} vertices, found {i}", counts_no) from None
        parts = line.split()
        try:
            verts[i] = [float(t) for t in parts[:3]]
        except ValueError:
            raise MeshParseError(f"bad vertex {line!r}", no) from None
        if len(parts) < 3:
            raise MeshParseError(f"vertex needs 3 coordinates: {line!r}", no)
    tris = []
    for f in range(nf):
        try:
            no, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {nf} faces, found {f}", counts_no) from None
        try:
            parts = [int(t) for t in line.split()]
        except ValueError:
            # trailing colour values may be floats
            parts = line.split()
            try:
                parts = [int(parts[0])] + [int(t) for t in parts[1:1 + int(parts[0])]]
            except (ValueError, IndexError):
                raise MeshParseError(f"bad face {line!r}", no) from None
        k = parts[0]
        idx = parts[1:1 + k]
        if k < 3 or len(idx) != k:
            raise MeshParseError(f"face needs at least 3 indices: {line!r}", no)
        for v in idx:
            if not 0 <= v < nv:
                raise MeshParseError(f"vertex index {v} out of range [0, {nv})", no)
        for t in range(1, k - 1):
            tri = (idx[0], idx[t], idx[t + 1])
            if len(set(tri)) == 3:
                tris.append(tri)
    return TriMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def serialize_off(mesh: TriMesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(out) + "\n"


def sample_surface(mesh: TriMesh, n: int, seed: int, label=None, source_id="") -> PointCloud:
    pts = sample_surface_raw(mesh, n, seed)[0]
    return normalize(PointCloud(pts, label, source_id))


def sample_surface_raw(mesh: TriMesh, n: int, seed: int):
    """Area-weighted samples plus the triangle each came from (unnormalised)."""
    areas = mesh.areas() if len(mesh.faces) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has no triangle with nonzero area")
    rng = SeededRng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.uniform(size=(n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    v = mesh.vertices[mesh.faces[tri]]
    pts = v[:, 0] + u[:, :1] * (v[:, 1] - v[:, 0]) + u[:, 1:] * (v[:, 2] - v[:, 0])
    return pts, tri


def load_modelnet(root, n_points: int = 1024, seed: int = 0, split: str = "train", classes=None) -> DatasetSplit:
    """Read a ModelNet-style tree: ``root/<class>/<split>/*.off``."""
    root = Path(root)
    names = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if classes is not None:
        names = [c for c in names if c in classes]
    files = [(label, f) for label, c in enumerate(names) for f in sorted((root / c / split).glob("*.off"))]
    if not files:
        raise FileNotFoundError(
            f"no OFF files under {root}; expected layout <root>/<class>/{split}/<name>.off "
            "(e.g. ModelNet10/chair/train/chair_0001.off)")
    clouds = []
    for label, f in files:
        sid = f"{names[label]}/{split}/{f.stem}"
        clouds.append(sample_surface(parse_off(f.read_bytes()), n_points, derive_seed(seed, sid), label, sid))
    return DatasetSplit(clouds, names)


# -- MNIST ----------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _open_maybe_gz(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an MNIST IDX file (images ``n x 28 x 28`` or labels ``n``) as uint8."""
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES:
        n, rows, cols = struct.unpack(">III", raw[4:16])
        body, shape = raw[16:], (n, rows, cols)
    elif magic == IDX_LABELS:
        n = struct.unpack(">I", raw[4:8])[0]
        body, shape = raw[8:], (n,)
    else:
        raise ValueError(f"{path}: unknown IDX magic 0x{magic:08x}")
    size = int(np.prod(shape))
    if len(body) < size:
        raise ValueError(f"{path}: expected {size} data bytes, found {len(body)}")
    return np.frombuffer(body[:size], dtype=np.uint8).reshape(shape)


def write_idx(path, array) -> None:
    a = np.ascontiguousarray(array, dtype=np.uint8)
    if a.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES, *a.shape)
    elif a.ndim == 1:
        header = struct.pack(">II", IDX_LABELS, a.shape[0])
    else:
        raise ValueError("IDX writer supports n x rows x cols images or 1-D labels")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + a.tobytes())


def mnist_to_points(image, max_points: int = 256, seed: int = 0, label=None, source_id="") -> PointCloud:
    """Stroke pixels (intensity > 127) as 2-D points in [-1, 1]^2.

    Pixel (row, col) maps to ((col - 13.5) / 13.5, (row - 13.5) / 13.5). When
    there are more than ``max_points`` stroke pixels a seeded subsample is
    kept. The result is not re-normalised.
    """
    img = np.asarray(image, dtype=np.uint8).reshape(-1)
    if img.size != 784:
        raise ValueError(f"expected 784 pixels, got {img.size}")
    rows, cols = np.nonzero(img.reshape(28, 28) > 127)
    if rows.size == 0:
        raise ValueError("blank image: no pixel above the stroke threshold")
    pts = np.stack([(cols - 13.5) / 13.5, (rows - 13.5) / 13.5], axis=1)
    if len(pts) > max_points:
        keep = np.sort(SeededRng(seed).choice(len(pts), size=max_points, replace=False))
        pts = pts[keep]
    return PointCloud(pts, label, source_id)


def mnist_dataset(images, labels, max_points: int = 256, seed: int = 0, split: str = "train") -> DatasetSplit:
    clouds = []
    for i, (img, lab) in enumerate(zip(images, labels)):
        sid = f"mnist/{split}/{i:05d}"
        clouds.append(mnist_to_points(img, max_points, derive_seed(seed, sid), int(lab), sid))
    return DatasetSplit(clouds, [str(d) for d in range(10)])


def stratified_subset(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Keep ceil(fraction * count) clouds of every class, chosen by a seeded shuffle."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return replace(split, clouds=list(split.clouds))
    labels = split.labels
    keep = []
    for c in range(len(split.class_names)):
        members = np.flatnonzero(labels == c)
        k = math.ceil(fraction * len(members) - 1e-12)
        pick = SeededRng(derive_seed(seed, "subset", c)).permutation(len(members))[:k]
        keep.extend(members[np.sort(pick)].tolist())
    keep.sort()
    return DatasetSplit([split.clouds[i] for i in keep], list(split.class_names), fraction * split.fraction)


def stratified_take(split: DatasetSplit, per_class: int, seed: int) -> DatasetSplit:
    """Exactly ``per_class`` clouds from every class (or all of them if fewer)."""
    labels = split.labels
    keep = []
    for c in range(len(split.class_names)):
        members = np.flatnonzero(labels == c)
        pick = SeededRng(derive_seed(seed, "take", c)).permutation(len(members))[:per_class]
        keep.extend(members[np.sort(pick)].tolist())
    keep.sort()
    return DatasetSplit([split.clouds[i] for i in keep], list(split.class_names), split.fraction)


def stratified_indices(labels, n: int, seed: int) -> np.ndarray:
    """``n`` indices spread over classes as evenly as possible (per-class counts differ by at most 1).

    Classes with too few members contribute all they have; the shortfall is
    spread over the others.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    pools = {c: np.flatnonzero(labels == c) for c in classes}
    pools = {c: m[SeededRng(derive_seed(seed, "strat", int(c))).permutation(len(m))] for c, m in pools.items()}
    quota = {c: 0 for c in classes}
    left = min(n, len(labels))
    while left > 0:
        open_ = [c for c in classes if quota[c] < len(pools[c])]
        share, extra = divmod(left, len(open_))
        for i, c in enumerate(open_):
            take = min(share + (i < extra), len(pools[c]) - quota[c])
            quota[c] += take
            left -= take
    return np.sort(np.concatenate([pools[c][:quota[c]] for c in classes]))


# -- on-disk datasets -----------------------------------------------------

def save_split(split: DatasetSplit, root, name: str) -> Path:
    """Write one CSV per cloud under ``root/name/`` plus ``root/name.jsonl``."""
    root = Path(root)
    folder = root / name
    folder.mkdir(parents=True, exist_ok=True)
    manifest = root / f"{name}.jsonl"
    cols = ["x", "y", "z"]
    with open(manifest, "w") as mf:
        for i, c in enumerate(split.clouds):
            rel = f"{name}/{i:06d}.csv"
            with open(root / rel, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols[:c.dim])
                for p in c.points:
                    w.writerow([repr(float(v)) for v in p])
            mf.write(json.dumps({"path": rel, "label": c.label, "class_name": split.class_names[c.label],
                                 "source_id": c.source_id}) + "\n")
    return manifest


def load_split(manifest) -> DatasetSplit:
    manifest = Path(manifest)
    root = manifest.parent
    rows = [json.loads(l) for l in manifest.read_text().splitlines() if l.strip()]
    names = {}
    for r in rows:
        names.setdefault(r["label"], r["class_name"])
    class_names = [names.get(i, str(i)) for i in range(max(names) + 1)] if names else []
    clouds = []
    for r in rows:
        pts = np.loadtxt(root / r["path"], delimiter=",", skiprows=1, ndmin=2)
        clouds.append(PointCloud(pts, r["label"], r.get("source_id", r["path"])))
    return DatasetSplit(clouds, class_names)
