import gzip

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neaw import data as D


# -- synthetic shapes -----------------------------------------------------

def test_shape_surfaces_lie_on_their_surfaces():
    n = 4000
    s = D.shape_surface("sphere", n, 1)
    assert np.allclose(np.linalg.norm(s, axis=1), 1.0)
    c = D.shape_surface("cube", n, 1)
    assert np.allclose(np.abs(c).max(axis=1), 1.0)
    cy = D.shape_surface("cylinder", n, 1)
    r = np.hypot(cy[:, 0], cy[:, 1])
    on_side = np.isclose(r, 1.0)
    on_cap = np.isclose(np.abs(cy[:, 2]), 1.0) & (r <= 1 + 1e-12)
    assert np.all(on_side | on_cap)
    # side area 4*pi vs caps 2*pi
    assert on_side.mean() == pytest.approx(2 / 3, abs=0.03)
    co = D.shape_surface("cone", n, 1)
    r = np.hypot(co[:, 0], co[:, 1])
    lateral = np.isclose(r, (1.0 - co[:, 2]) / 2.0)
    base = np.isclose(co[:, 2], -1.0)
    assert np.all(lateral | base)
    t = D.shape_surface("torus", n, 1)
    ring = np.hypot(t[:, 0], t[:, 1])
    assert np.allclose(np.hypot(ring - 1.0, t[:, 2]), 0.4)


def test_torus_area_weighting():
    # outer half (cos v > 0) has more area: fraction (pi R + 2r) / (2 pi R)
    t = D.shape_surface("torus", 20000, 3)
    outer = (np.hypot(t[:, 0], t[:, 1]) > 1.0).mean()
    assert outer == pytest.approx((np.pi + 0.8) / (2 * np.pi), abs=0.015)


def test_generate_shape_normalised_and_seeded():
    c = D.generate_shape("cone", 500, seed=4, jitter=0.02, label=3)
    assert np.allclose(c.points.mean(axis=0), 0.0, atol=1e-12)
    assert np.linalg.norm(c.points, axis=1).max() == pytest.approx(1.0)
    assert c.label == 3
    assert np.array_equal(c.points, D.generate_shape("cone", 500, seed=4, jitter=0.02).points)
    with pytest.raises(ValueError):
        D.generate_shape("pyramid", 10, 0)


def test_synthetic_dataset_counts_and_labels():
    ds = D.synthetic_dataset(3, 64, seed=7)
    assert len(ds) == 15
    assert np.bincount(ds.labels).tolist() == [3] * 5
    assert ds.class_names == list(D.SHAPES)
    test = D.synthetic_dataset(3, 64, seed=7, split="test")
    assert not np.array_equal(ds.clouds[0].points, test.clouds[0].points)


def test_pointcloud_validation():
    with pytest.raises(ValueError):
        D.PointCloud(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        D.PointCloud(np.array([[np.nan, 0.0, 0.0]]))


# -- OFF ------------------------------------------------------------------

CUBE = """OFF
8 6 0
-1 -1 -1
1 -1 -1
1 1 -1
-1 1 -1
-1 -1 1
1 -1 1
1 1 1
-1 1 1
4 0 1 2 3
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 3 7 4
"""


def test_parse_off_cube_fan_triangulated():
    m = D.parse_off(CUBE)
    assert m.vertices.shape == (8, 3)
    assert m.faces.shape == (12, 3)
    assert m.areas().sum() == pytest.approx(24.0)


def test_parse_off_fused_header_and_comments():
    text = "OFF3 1 0\n# comment\n0 0 0\n1 0 0\n0 1 0 # trailing\n3 0 1 2\n"
    m = D.parse_off(text)
    assert m.faces.tolist() == [[0, 1, 2]]
    assert m.areas()[0] == pytest.approx(0.5)


def test_parse_off_drops_degenerate_triangles():
    m = D.parse_off("OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 0 1\n")
    assert len(m.faces) == 1


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("PLY\n", 1),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n", 2),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", 6),
    ("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n", 4),
    ("OFF\nthree 1 0\n", 2),
])
def test_parse_off_errors_name_line(text, line):
    with pytest.raises(D.MeshParseError) as e:
        D.parse_off(text)
    assert e.value.line == line
    assert f"line {line}" in str(e.value)


def test_off_round_trip():
    m = D.parse_off(CUBE)
    m2 = D.parse_off(D.serialize_off(m))
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.faces, m2.faces)


def test_surface_sampling_area_weighted():
    # two triangles, the second with 3x the area
    m = D.TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [3, 0, 1], [0, 1, 1.0]]),
                  np.array([[0, 1, 2], [3, 4, 5]]))
    pts, tri = D.sample_surface_raw(m, 20000, seed=2)
    assert (tri == 1).mean() == pytest.approx(0.75, abs=0.01)
    a = pts[tri == 0]
    assert np.all(a[:, 0] >= -1e-12) and np.all(a[:, 1] >= -1e-12) and np.all(a.sum(axis=1) <= 1 + 1e-12)


def test_sample_surface_rejects_zero_area():
    m = D.TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        D.sample_surface(m, 10, 0)


def test_load_modelnet_layout(tmp_path):
    with pytest.raises(FileNotFoundError, match="expected layout"):
        D.load_modelnet(tmp_path)
    for cls in ("chair", "desk"):
        (tmp_path / cls / "train").mkdir(parents=True)
        (tmp_path / cls / "train" / f"{cls}_0001.off").write_text(CUBE)
    ds = D.load_modelnet(tmp_path, n_points=64, seed=1)
    assert ds.class_names == ["chair", "desk"]
    assert ds.labels.tolist() == [0, 1]
    assert ds.clouds[0].points.shape == (64, 3)


# -- MNIST ----------------------------------------------------------------

def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
    labs = np.arange(5, dtype=np.uint8)
    D.write_idx(tmp_path / "i.gz", imgs)
    D.write_idx(tmp_path / "l", labs)
    assert np.array_equal(D.read_idx(tmp_path / "i.gz"), imgs)
    assert np.array_equal(D.read_idx(tmp_path / "l"), labs)
    with gzip.open(tmp_path / "i.gz") as fh:
        assert fh.read(4) == b"\x00\x00\x08\x03"


def test_idx_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x00\x00\x09\x99\x00\x00\x00\x01")
    with pytest.raises(ValueError, match="magic"):
        D.read_idx(tmp_path / "bad")
    (tmp_path / "short").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05\x01")
    with pytest.raises(ValueError, match="expected"):
        D.read_idx(tmp_path / "short")


def test_mnist_to_points_mapping():
    img = np.zeros((28, 28), dtype=np.uint8)
    img[0, 0] = 255
    img[27, 14] = 200
    img[5, 5] = 127  # not above threshold
    c = D.mnist_to_points(img, label=7)
    assert c.dim == 2 and c.label == 7
    assert sorted(map(tuple, c.points.tolist())) == sorted([(-1.0, -1.0), ((14 - 13.5) / 13.5, 1.0)])
    with pytest.raises(ValueError):
        D.mnist_to_points(np.zeros((28, 28), dtype=np.uint8))


def test_mnist_subsample_cap(mnist_arrays):
    X, y = mnist_arrays
    for img in X[:50]:
        c = D.mnist_to_points(img, max_points=64, seed=1)
        assert 1 <= len(c) <= 64
        assert np.abs(c.points).max() <= 1.0


def test_stratified_indices_balanced(mnist_arrays):
    _, y = mnist_arrays
    idx = D.stratified_indices(y, 2000, seed=3)
    assert len(idx) == 2000 == len(set(idx.tolist()))
    counts = np.bincount(y[idx], minlength=10)
    assert counts.max() - counts.min() <= 1


@given(st.lists(st.integers(0, 4), min_size=1, max_size=80), st.integers(1, 100))
def test_stratified_indices_property(labels, n):
    y = np.array(labels)
    idx = D.stratified_indices(y, n, seed=0)
    assert len(idx) == min(n, len(y))
    counts = np.bincount(y[idx], minlength=5)
    avail = np.bincount(y, minlength=5)
    # any class below another's count by more than one must be exhausted
    for a in range(5):
        for b in range(5):
            if counts[a] + 1 < counts[b]:
                assert counts[a] == avail[a]


def test_stratified_subset_fraction():
    ds = D.synthetic_dataset(10, 16, seed=0)
    sub = D.stratified_subset(ds, 0.25, seed=1)
    assert np.bincount(sub.labels).tolist() == [3] * 5
    assert sub.fraction == pytest.approx(0.25)
    assert D.stratified_subset(ds, 0.25, seed=1).labels.tolist() == sub.labels.tolist()
    with pytest.raises(ValueError):
        D.stratified_subset(ds, 0.0, seed=1)


def test_save_load_split_round_trip(tmp_path):
    ds = D.synthetic_dataset(2, 32, seed=5)
    manifest = D.save_split(ds, tmp_path, "train")
    back = D.load_split(manifest)
    assert back.class_names == ds.class_names
    assert back.labels.tolist() == ds.labels.tolist()
    for a, b in zip(ds.clouds, back.clouds):
        assert np.array_equal(a.points, b.points)
