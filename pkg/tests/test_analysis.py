import csv

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp

from neaw import analysis as A
from neaw import rules
from neaw.data import synthetic_dataset
from neaw.encoder import global_features, init_encoder
from neaw.numerics import SeededRng


# -- activity variance ----------------------------------------------------

def test_activity_variance_examples():
    assert A.activity_variance([3, 3, 3, 3], 5) == 0.0
    assert A.activity_variance([0, 1, 2, 3], 4) == pytest.approx(1 - 1 / 4)
    assert A.activity_variance([0, 0, 1, 1], 2) == 0.5
    with pytest.raises(ValueError):
        A.activity_variance([], 3)
    with pytest.raises(IndexError):
        A.activity_variance([0, 3], 3)


@given(st.integers(1, 16).flatmap(lambda d: st.tuples(st.just(d), st.lists(st.integers(0, d - 1), min_size=1,
                                                                             max_size=60))))
def test_variance_equals_pairwise_sum(case):
    d, w = case
    assert abs(A.activity_variance(w, d) - A.pairwise_variance(np.array(w), d)) < 1e-12


def test_eq5_suite_small():
    res = A.eq5_suite(n=50, seed=3)
    assert res.violations == 0
    assert res.extra["max_abs_error"] < 1e-12


def test_activity_report_rows(tiny_synthetic):
    train, _ = tiny_synthetic
    enc = init_encoder((3, 8, 8, 16), seed=1)
    rep = A.activity_report(enc, train.clouds, 5)
    assert rep.p.sum() == pytest.approx(1.0)
    assert np.all((rep.per_class >= 0) & (rep.per_class <= 1))
    assert np.allclose(rep.per_class_share.sum(axis=1), 1.0)
    assert rep.variance == pytest.approx(rules.last_layer_variance(enc, train.clouds))


# -- flip condition and corollaries ----------------------------------------

def g(x, wj, wjp, r):
    return A.GeometryInstance(np.atleast_1d(x), np.atleast_1d(wj), np.atleast_1d(wjp), r)


def test_theorem1_examples():
    r = A.theorem1_check(g(0.0, 1.0, -2.0, 0.5))
    assert r.condition and r.flipped
    assert r.d_after == pytest.approx((1.5, 1.0))
    r = A.theorem1_check(g(0.0, 1.0, -2.0, 0.1))
    assert not r.condition and not r.flipped
    assert r.d_after == pytest.approx((1.1, 1.8))


def test_theorem1_zero_distance_winner_stays():
    # x - w_j = 0 so column j does not move; (1+r)*0 > (1-r)*d' is false and no flip happens
    r = A.theorem1_check(g([0.3, -0.2], [0.3, -0.2], [1.0, 1.0], 0.7))
    assert r.d_after[0] == 0.0
    assert not r.condition and not r.flipped


def test_theorem1_boundary_rejected():
    # (1 + 0.5) * 1 == (1 - 0.5) * 3
    with pytest.raises(A.BoundaryInstance):
        A.theorem1_check(g(0.0, 1.0, -3.0, 0.5))


def test_geometry_premise_enforced():
    with pytest.raises(ValueError):
        g(0.0, 2.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        g(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        g([0.0, 1.0], 1.0, 2.0, 0.5)


def test_corollary_examples():
    r = A.corollary_check(g(0.0, 1.0, -2.0, 0.9), "both_hebbian")
    assert not r.flipped and r.d_after == pytest.approx((0.1, 0.2))
    r = A.corollary_check(g(0.0, 1.0, -2.0, 0.5), "both_anti")
    assert not r.flipped and r.d_after == pytest.approx((1.5, 3.0))
    r = A.corollary_check(g(0.0, 1.0, -2.0, 1e-12), "both_anti")
    assert r.d_after == pytest.approx((1.0, 2.0))
    with pytest.raises(ValueError):
        A.corollary_check(g(0.0, 1.0, -2.0, 0.5), "mixed")


instances = st.integers(1, 6).flatmap(lambda d: st.tuples(
    hnp.arrays(np.float64, d, elements=st.floats(-5, 5)),
    hnp.arrays(np.float64, d, elements=st.floats(-5, 5)),
    hnp.arrays(np.float64, d, elements=st.floats(-5, 5)),
    st.floats(0.01, 0.99)))


@given(instances)
def test_theorem1_iff_property(case):
    x, a, b, r = case
    da, db = np.linalg.norm(x - a), np.linalg.norm(x - b)
    assume(da != db)
    wj, wjp = (a, b) if da < db else (b, a)
    inst = g(x, wj, wjp, r)
    try:
        res = A.theorem1_check(inst)
    except A.BoundaryInstance:
        return
    assert res.condition == res.flipped
    for mode in ("both_hebbian", "both_anti"):
        assert not A.corollary_check(inst, mode).flipped


def test_sampler_premise_and_dims():
    dims = set()
    total = 0
    for d, x, wj, wjp, r in A.sample_instances(3000, seed=2):
        dims.add(d)
        total += len(x)
        dj = np.linalg.norm(x - wj, axis=1)
        djp = np.linalg.norm(x - wjp, axis=1)
        assert np.all(dj < djp)
        assert np.all((r > 0.01) & (r < 0.99))
        assert not A.near_boundary(dj, djp, r).any()
    assert total == 3000
    assert dims == set(range(1, 17))


def test_suites_small_and_json():
    t = A.theorem1_suite(5000, seed=4)
    assert t.violations == 0
    assert 0 < t.extra["condition_true"] < 5000
    j = t.to_json()
    assert {"suite", "instances", "violations", "seed"} <= set(j)
    for mode in ("both_hebbian", "both_anti"):
        assert A.corollary_suite(5000, seed=4, mode=mode).violations == 0


def test_sign_flip_mutation_detected(monkeypatch):
    real = rules.update_signs
    monkeypatch.setattr(rules, "update_signs", lambda p, d, cfg: -real(p, d, cfg))
    res = A.theorem1_suite(2000, seed=1)
    assert res.violations > 0
    assert res.counterexample is not None
    # a global sign swap maps one homogeneous mode onto the other, so the corollaries still hold
    assert A.corollary_suite(2000, seed=1, mode="both_hebbian").violations == 0


def test_pair_signs_follow_rule():
    assert A.pair_signs("neaw") == (-1.0, 1.0)
    assert A.pair_signs("both_hebbian") == (1.0, 1.0)
    assert A.pair_signs("both_anti") == (-1.0, -1.0)


# -- dissimilarity --------------------------------------------------------

def test_dissimilarity_examples():
    same = A.dissimilarity(np.array([[1.0, 2.0], [1.0, 2.0], [2.0, 4.0]]))
    assert np.allclose(same.D, 0.0, atol=1e-12)
    orth = A.dissimilarity(np.eye(3))
    assert np.array_equal(orth.D, 1.0 - np.eye(3))
    assert orth.frobenius == pytest.approx(np.sqrt(6))


def test_dissimilarity_errors():
    with pytest.raises(ValueError, match="cube"):
        A.dissimilarity(np.array([[1.0, 0.0], [0.0, 0.0]]), ["sphere", "cube"])
    with pytest.raises(ValueError):
        A.dissimilarity(np.ones((1, 3)))


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_dissimilarity_invariants(seed, k):
    rng = SeededRng(seed)
    X = np.abs(rng.normal(size=(k, 5))) + 1e-3
    dm = A.dissimilarity(X)
    assert np.array_equal(dm.D, dm.D.T)
    assert np.all(np.diag(dm.D) == 0.0)
    assert np.all((dm.D >= 0) & (dm.D <= 2))
    perm = rng.permutation(k)
    assert A.dissimilarity(X[perm]).frobenius == pytest.approx(dm.frobenius, rel=1e-12)


def test_class_prototypes_mean_and_medoid():
    F = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 0, 0, 1])
    assert A.class_prototypes(F, y, 2)[0].tolist() == [4.0, 0.0]
    assert A.class_prototypes(F, y, 2, "medoid")[0].tolist() == [2.0, 0.0]


def test_ablation_dead_neuron():
    F = np.array([[1.0, 0.0, 2.0], [0.5, 0.0, 1.0], [0.0, 0.0, 3.0]])
    res = A.deactivation_ablation(F, [0, 1, 2], 1)
    assert res.delta_frobenius == 0.0
    assert res.cross_class_variance == 0.0


def test_ablation_class_specific_neuron_lowers_dissimilarity():
    F = np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    res = A.deactivation_ablation(F, [0, 1, 2], 1)
    assert res.delta_frobenius < 0
    assert res.cross_class_variance > 0


def test_ablation_shared_neuron_does_not_lower():
    F = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    res = A.deactivation_ablation(F, [0, 1], 0)
    assert res.delta_frobenius >= 0
    assert res.cross_class_variance == 0.0
    with pytest.raises(IndexError):
        A.deactivation_ablation(F, [0, 1], 5)


def test_ablation_sweep_skips_dead():
    F = np.array([[1.0, 0.0, 2.0], [0.5, 0.0, 1.0]])
    assert [r.neuron for r in A.ablation_sweep(F, [0, 1])] == [0, 2]


# -- ordering experiment ---------------------------------------------------

def test_ordering_eta_zero_all_equal(tiny_synthetic):
    train, test = tiny_synthetic
    rows = A.variance_ordering_experiment(train.clouds[:5], test.clouds[:5], [1, 2, 3], epochs=1, eta=0.0,
                                          dims=(3, 6, 8, 10))
    fin = A.final_variances(rows)
    for s in (1, 2, 3):
        assert fin["neaw"][s] == fin["neaw-h"][s] == fin["neaw-ah"][s]
    assert {r["epoch"] for r in rows} == {-1, 0}


def test_ordering_needs_three_seeds(tiny_synthetic):
    with pytest.raises(ValueError):
        A.variance_ordering_experiment(tiny_synthetic[0].clouds, tiny_synthetic[1].clouds, [1, 2])


def test_median_final_variance():
    rows = [{"rule": "x", "seed": s, "epoch": e, "variance": v}
            for s, e, v in [(1, 0, 0.1), (1, 1, 0.5), (2, 1, 0.2), (3, 1, 0.9)]]
    assert A.median_final_variance(rows) == {"x": 0.5}


# -- export -----------------------------------------------------------------

def test_export_round_trip(tmp_path, tiny_synthetic):
    _, test = tiny_synthetic
    enc = init_encoder((3, 8, 8, 16), seed=2)
    files = A.export_artifacts(enc, test.clouds, tmp_path, test.class_names)
    W = A.read_matrix_csv(files["weights"])
    assert np.array_equal(W, enc.layers[-1].W)
    F = A.read_matrix_csv(files["features"], skip_cols=1)
    assert np.array_equal(F, global_features(enc, test.clouds))
    with open(files["features"]) as fh:
        labels = [r[0] for r in list(csv.reader(fh))[1:]]
    assert labels == [str(c.label) for c in test.clouds]
    per = A.read_matrix_csv(files["per_class_fraction"], skip_cols=1)
    assert per.shape == (5, 16)
    assert np.all((per >= 0) & (per <= 1)) and np.all(per.sum(axis=1) <= 16)
    share = A.read_matrix_csv(files["per_class_share"], skip_cols=1)
    assert np.allclose(share.sum(axis=1), 1.0)
    hist = (tmp_path / "activity_histogram.csv").read_text().splitlines()
    assert hist[0] == "neuron,count,activity" and len(hist) == 17


def test_export_empty_dataset_header_only(tmp_path):
    enc = init_encoder((3, 4, 4, 6), seed=0)
    files = A.export_artifacts(enc, [], tmp_path)
    assert files["features"].read_text().strip().splitlines() == ["label," + ",".join(f"f{j}" for j in range(6))]


def test_export_unwritable_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        A.export_artifacts(init_encoder((3, 4, 4, 6)), [], blocker / "sub")
