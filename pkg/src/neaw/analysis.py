"""Diagnostics: activity variance, boundary-flip checks, class dissimilarity, exports.

The boundary-flip checks reproduce the two-neuron scenario behind the
activity-aware rule: one over-active neuron ``j`` currently winning an input
``x`` and one under-active neuron ``j'``. The signs of their updates come
from :func:`neaw.rules.update_signs`, so the checks exercise the rule itself.
"""
from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rules
from .encoder import EncoderModel, forward_batch, global_features
from .numerics import SeededRng, derive_seed

BOUNDARY_RTOL = 1e-9


# -- activity -------------------------------------------------------------

def variance_from_counts(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    if n <= 0:
        raise ValueError("no winners recorded")
    return float(1.0 - np.dot(c, c) / (n * n))


def activity_variance(winners, d: int) -> float:
    """Spread of one-hot WTA codes: ``1 - sum_j c_j^2 / N^2`` over winner counts ``c``."""
    w = np.asarray(winners, dtype=np.int64).ravel()
    if w.size == 0:
        raise ValueError("empty winner list")
    if w.min() < 0 or w.max() >= d:
        raise IndexError(f"winner index out of range for d={d}")
    return variance_from_counts(np.bincount(w, minlength=d))


@dataclass
class ActivityReport:
    p: np.ndarray
    variance: float
    per_class: np.ndarray
    per_class_share: np.ndarray = None
    counts: np.ndarray = None


def activity_report(model: EncoderModel, clouds, n_classes: int | None = None) -> ActivityReport:
    """Last-layer activity over a labelled set.

    ``per_class[c, j]`` is the fraction of class-``c`` samples in which neuron
    ``j`` wins at least one point. ``per_class_share[c, j]`` is neuron ``j``'s
    share of all class-``c`` wins (rows sum to 1).
    """
    d = model.d_out
    labels = [c.label for c in clouds]
    k = n_classes if n_classes is not None else (max(labels) + 1 if clouds else 0)
    counts = np.zeros(d, dtype=np.int64)
    fired = np.zeros((k, d))
    share = np.zeros((k, d))
    per_label = np.zeros(k)
    for c in clouds:
        w, _ = forward_batch(model, c.points)
        cnt = np.bincount(w[-1], minlength=d)
        counts += cnt
        if c.label is not None:
            fired[c.label] += cnt > 0
            share[c.label] += cnt
            per_label[c.label] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        fired = np.where(per_label[:, None] > 0, fired / np.maximum(per_label[:, None], 1), 0.0)
        totals = share.sum(axis=1, keepdims=True)
        share = np.where(totals > 0, share / np.maximum(totals, 1), 0.0)
    total = counts.sum()
    p = counts / total if total else np.zeros(d)
    var = variance_from_counts(counts) if total else 0.0
    return ActivityReport(p, var, fired, share, counts)


# -- boundary-flip checks -------------------------------------------------

@dataclass
class GeometryInstance:
    x: np.ndarray
    w_j: np.ndarray
    w_jp: np.ndarray
    eta_over_n: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.w_j = np.asarray(self.w_j, dtype=np.float64).ravel()
        self.w_jp = np.asarray(self.w_jp, dtype=np.float64).ravel()
        if not (self.x.shape == self.w_j.shape == self.w_jp.shape):
            raise ValueError("x, w_j and w_jp must share a dimension")
        if not 0 < self.eta_over_n < 1:
            raise ValueError("eta/N must lie in (0, 1)")
        if not all(np.all(np.isfinite(a)) for a in (self.x, self.w_j, self.w_jp)):
            raise ValueError("instance must be finite")
        if not np.linalg.norm(self.x - self.w_j) < np.linalg.norm(self.x - self.w_jp):
            raise ValueError("w_j must be strictly closer to x than w_jp")


class BoundaryInstance(ValueError):
    """The instance sits too close to the flip condition's boundary to adjudicate."""


@dataclass
class FlipResult:
    condition: bool
    flipped: bool
    d_before: tuple
    d_after: tuple


_MODES = {
    # (activity of j, activity of j') with two neurons, so the balanced value is 1/2
    "neaw": (rules.RuleKind.NEAW, 1.0, 0.0),
    "both_hebbian": (rules.RuleKind.NEAW_H, 1.0, 0.0),
    "both_anti": (rules.RuleKind.NEAW_AH, 1.0, 0.0),
}


def pair_signs(mode: str) -> tuple:
    """Signs the rule assigns to (j, j') in the two-neuron biased-activity scenario."""
    kind, pj, pjp = _MODES[mode]
    s = rules.update_signs(np.array([pj, pjp]), 2, rules.RuleConfig(kind=kind, a=1.0, b=1.0))
    return float(s[0]), float(s[1])


def pair_update(x, w_j, w_jp, r, mode: str = "neaw"):
    """One rule step on both columns toward/away from the single input ``x`` (vectorised over rows)."""
    sj, sjp = pair_signs(mode)
    r = np.asarray(r, dtype=np.float64)[..., None] if np.ndim(r) else r
    return w_j + sj * r * (x - w_j), w_jp + sjp * r * (x - w_jp)


def _flip_batch(x, w_j, w_jp, r, mode):
    dj = np.linalg.norm(x - w_j, axis=-1)
    djp = np.linalg.norm(x - w_jp, axis=-1)
    nj, njp = pair_update(x, w_j, w_jp, r, mode)
    aj = np.linalg.norm(x - nj, axis=-1)
    ajp = np.linalg.norm(x - njp, axis=-1)
    return dj, djp, aj, ajp


def flip_condition(d_j, d_jp, r):
    """Squared-ratio form: ``d_jp^2 / d_j^2 < (1 + r)^2 / (1 - r)^2`` with denominators cleared."""
    return (d_jp * d_jp) * (1 - r) ** 2 < (d_j * d_j) * (1 + r) ** 2


def near_boundary(d_j, d_jp, r, rtol=BOUNDARY_RTOL):
    return np.abs((1 + r) * d_j - (1 - r) * d_jp) < rtol * np.maximum(d_j, d_jp)


def theorem1_check(g: GeometryInstance) -> FlipResult:
    """Apply the mixed update (j anti-Hebbian, j' Hebbian) and report whether the winner flips."""
    r = g.eta_over_n
    dj, djp, aj, ajp = _flip_batch(g.x[None], g.w_j[None], g.w_jp[None], np.array([r]), "neaw")
    if near_boundary(dj, djp, r)[0]:
        raise BoundaryInstance("instance within the relative 1e-9 band of the flip condition")
    return FlipResult(bool(flip_condition(dj, djp, r)[0]), bool(aj[0] > ajp[0]),
                      (float(dj[0]), float(djp[0])), (float(aj[0]), float(ajp[0])))


def corollary_check(g: GeometryInstance, mode: str) -> FlipResult:
    """Same-sign update of both columns; the nearer column should stay nearer."""
    if mode not in ("both_hebbian", "both_anti"):
        raise ValueError(f"mode must be both_hebbian or both_anti, got {mode!r}")
    dj, djp, aj, ajp = _flip_batch(g.x[None], g.w_j[None], g.w_jp[None], np.array([g.eta_over_n]), mode)
    return FlipResult(False, bool(aj[0] > ajp[0]), (float(dj[0]), float(djp[0])), (float(aj[0]), float(ajp[0])))


def sample_instances(n: int, seed: int, dims=(1, 16), r_range=(0.01, 0.99), reject_boundary=True):
    """Random premise-satisfying instances as dense arrays grouped by dimension.

    Yields ``(dim, x, w_j, w_jp, r)`` blocks whose sizes sum to ``n``. Pairs
    are swapped so ``w_j`` is the nearer column; exact ties and (optionally)
    boundary-band instances are redrawn.
    """
    rng = SeededRng(seed)
    lo, hi = dims
    dim_of = rng.child("dims").integers(lo, hi + 1, size=n)
    for dim in range(lo, hi + 1):
        need = int((dim_of == dim).sum())
        sub = rng.child("block", dim)
        out = []
        got = 0
        rounds = 0
        while got < need:
            m = (need - got) + 8
            x = sub.normal(size=(m, dim))
            a = sub.normal(size=(m, dim))
            b = sub.normal(size=(m, dim))
            r = sub.uniform(r_range[0], r_range[1], size=m)
            da = np.linalg.norm(x - a, axis=1)
            db = np.linalg.norm(x - b, axis=1)
            swap = da > db
            wj = np.where(swap[:, None], b, a)
            wjp = np.where(swap[:, None], a, b)
            dj = np.minimum(da, db)
            djp = np.maximum(da, db)
            ok = dj < djp
            if reject_boundary:
                ok &= ~near_boundary(dj, djp, r)
            keep = np.flatnonzero(ok)[:need - got]
            out.append((x[keep], wj[keep], wjp[keep], r[keep]))
            got += keep.size
            rounds += 1
        if need:
            yield (dim,) + tuple(np.concatenate(parts) for parts in zip(*out))


@dataclass
class SuiteResult:
    suite: str
    instances: int
    violations: int
    seed: int
    counterexample: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"suite": self.suite, "instances": self.instances, "violations": self.violations, "seed": self.seed}
        out.update(self.extra)
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        return out


def _example(x, wj, wjp, r, i):
    return {"x": x[i].tolist(), "w_j": wj[i].tolist(), "w_jp": wjp[i].tolist(), "eta_over_n": float(r[i])}


def theorem1_suite(n: int = 100_000, seed: int = 1) -> SuiteResult:
    """Flip happens exactly when the ratio condition holds, on ``n`` random instances."""
    bad = 0
    first = None
    holds = 0
    for _, x, wj, wjp, r in sample_instances(n, seed):
        dj, djp, aj, ajp = _flip_batch(x, wj, wjp, r, "neaw")
        cond = flip_condition(dj, djp, r)
        flipped = aj > ajp
        holds += int(cond.sum())
        wrong = np.flatnonzero(cond != flipped)
        bad += wrong.size
        if wrong.size and first is None:
            first = _example(x, wj, wjp, r, wrong[0])
            first.update(condition=bool(cond[wrong[0]]), flipped=bool(flipped[wrong[0]]))
    return SuiteResult("theorem1", n, bad, seed, first, {"condition_true": holds})


def corollary_suite(n: int = 100_000, seed: int = 1, mode: str = "both_hebbian") -> SuiteResult:
    bad = 0
    first = None
    for _, x, wj, wjp, r in sample_instances(n, seed):
        _, _, aj, ajp = _flip_batch(x, wj, wjp, r, mode)
        flipped = np.flatnonzero(aj > ajp)
        bad += flipped.size
        if flipped.size and first is None:
            first = _example(x, wj, wjp, r, flipped[0])
    return SuiteResult(f"corollary_{mode}", n, bad, seed, first)


def eq5_suite(n: int = 1000, seed: int = 1, max_points: int = 512, max_d: int = 64, tol: float = 1e-12) -> SuiteResult:
    """Closed-form variance against the explicit pairwise sum of one-hot dot products."""
    rng = SeededRng(seed)
    worst = 0.0
    bad = 0
    first = None
    for t in range(n):
        sub = rng.child("eq5", t)
        N = int(sub.integers(1, max_points + 1))
        d = int(sub.integers(1, max_d + 1))
        w = sub.integers(0, d, size=N)
        closed = activity_variance(w, d)
        pairwise = pairwise_variance(w, d)
        err = abs(closed - pairwise)
        worst = max(worst, err)
        if err >= tol:
            bad += 1
            if first is None:
                first = {"winners": w.tolist(), "d": d, "closed": closed, "pairwise": pairwise}
    return SuiteResult("eq5", n, bad, seed, first, {"max_abs_error": worst})


def pairwise_variance(winners, d: int) -> float:
    """Mean squared norm minus (1/N^2) sum over all (k, w) of y_k . y_w, for one-hot y."""
    Y = np.zeros((len(winners), d))
    Y[np.arange(len(winners)), winners] = 1.0
    N = len(winners)
    first = sum(float(Y[k] @ Y[k]) for k in range(N)) / N
    gram = Y @ Y.T
    return first - float(gram.sum()) / (N * N)


# -- dissimilarity --------------------------------------------------------

@dataclass
class DissimilarityMatrix:
    D: np.ndarray
    frobenius: float


def class_prototypes(features, labels, k: int, method: str = "mean") -> np.ndarray:
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    out = np.zeros((k, F.shape[1]))
    for c in range(k):
        members = F[y == c]
        if len(members) == 0:
            continue
        if method == "mean":
            out[c] = members.mean(axis=0)
        elif method == "medoid":
            d = np.linalg.norm(members[:, None, :] - members[None, :, :], axis=2).sum(axis=1)
            out[c] = members[int(np.argmin(d))]
        else:
            raise ValueError(f"unknown prototype method {method!r}")
    return out


def dissimilarity(prototypes, class_names=None, strict: bool = True) -> DissimilarityMatrix:
    """``D[a][b] = 1 - cos(x_a, x_b)`` over class prototypes, with an exact zero diagonal.

    With ``strict=False`` a zero-norm prototype is treated as orthogonal to
    everything (off-diagonal entries 1) instead of raising.
    """
    X = np.asarray(prototypes, dtype=np.float64)
    k = len(X)
    if k < 2:
        raise ValueError("need at least two classes")
    norms = np.linalg.norm(X, axis=1)
    for c in range(k):
        if norms[c] == 0 and strict:
            name = class_names[c] if class_names is not None else c
            raise ValueError(f"class {name!r} has a zero-norm prototype")
    D = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            if norms[a] == 0 or norms[b] == 0:
                cos = 0.0
            else:
                cos = float(X[a] @ X[b]) / (norms[a] * norms[b])
            D[a, b] = D[b, a] = min(max(1.0 - cos, 0.0), 2.0)
    return DissimilarityMatrix(D, float(np.sqrt((D * D).sum())))


@dataclass
class AblationResult:
    neuron: int
    delta_frobenius: float
    cross_class_variance: float


def cross_class_activity(features, labels, k: int) -> np.ndarray:
    """Per class, the fraction of samples in which each neuron is nonzero (``k x d``)."""
    F = np.asarray(features) > 0
    y = np.asarray(labels)
    out = np.zeros((k, F.shape[1]))
    for c in range(k):
        m = y == c
        if m.any():
            out[c] = F[m].mean(axis=0)
    return out


def deactivation_ablation(features, labels, neuron: int, k: int | None = None, method: str = "mean") -> AblationResult:
    """Change in dissimilarity Frobenius norm when one neuron is silenced everywhere."""
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not 0 <= neuron < F.shape[1]:
        raise IndexError(f"neuron {neuron} out of range")
    k = int(y.max()) + 1 if k is None else k
    before = dissimilarity(class_prototypes(F, y, k, method)).frobenius
    G = F.copy()
    G[:, neuron] = 0.0
    # silencing a neuron can empty a sparse class prototype; count it as orthogonal
    after = dissimilarity(class_prototypes(G, y, k, method), strict=False).frobenius
    var = float(np.var(cross_class_activity(F, y, k)[:, neuron]))
    return AblationResult(neuron, after - before, var)


def ablation_sweep(features, labels, k: int | None = None, neurons=None) -> list:
    """Ablate each neuron that is active somewhere (or each listed neuron)."""
    F = np.asarray(features)
    if neurons is None:
        neurons = np.flatnonzero((F > 0).any(axis=0))
    return [deactivation_ablation(F, labels, int(j), k) for j in neurons]


# -- variance-ordering experiment ----------------------------------------

ORDERING_RULES = ("neaw", "neaw-h", "neaw-ah")


def variance_ordering_experiment(train, probe, seeds, epochs: int = 50, eta: float = 1e-2, batch: int = 4,
                                 rules_=ORDERING_RULES, dims=None, init_scale: float = 0.5, a: float = 1.0,
                                 b: float = 1.0, models=None):
    """Train each rule from the same seeded init; record last-layer variance on ``probe`` per epoch.

    Returns rows ``{"rule", "seed", "epoch", "variance"}``; epoch -1 is the
    untrained model. ``models`` (a dict) receives the final encoders keyed by
    ``(rule, seed)`` when given.
    """
    from .encoder import DEFAULT_DIMS, init_encoder
    if len(seeds) < 3:
        raise ValueError("need at least three seeds")
    dims = DEFAULT_DIMS if dims is None else dims
    rows = []
    for seed in seeds:
        for rule in rules_:
            m0 = init_encoder(dims, seed=derive_seed(seed, "encoder-init"), scale=init_scale)
            rows.append({"rule": rule, "seed": seed, "epoch": -1, "variance": rules.last_layer_variance(m0, probe)})
            cfg = rules.RuleConfig(kind=rule, eta=eta, a=a, b=b)

            def record(epoch, model, rule=rule, seed=seed):
                rows.append({"rule": rule, "seed": seed, "epoch": epoch,
                             "variance": rules.last_layer_variance(model, probe)})

            m = rules.train_encoder(m0, train, cfg, epochs, derive_seed(seed, "encoder-train"), batch=batch,
                                    callback=record)
            if models is not None:
                models[(rule, seed)] = m
    return rows


def final_variances(rows) -> dict:
    """``{rule: {seed: variance}}`` at each run's last recorded epoch."""
    last = {}
    for r in rows:
        key = (r["rule"], r["seed"])
        if key not in last or r["epoch"] > last[key]["epoch"]:
            last[key] = r
    out = {}
    for (rule, seed), r in last.items():
        out.setdefault(rule, {})[seed] = r["variance"]
    return out


def median_final_variance(rows) -> dict:
    return {rule: statistics.median(v.values()) for rule, v in final_variances(rows).items()}


# -- exports --------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M, header, row_labels=None, label_name=None):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(([label_name] if row_labels is not None else []) + list(header))
            for i, row in enumerate(np.atleast_2d(M) if len(M) else []):
                lead = [row_labels[i]] if row_labels is not None else []
                w.writerow(lead + [_fmt(v) for v in row])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def read_matrix_csv(path, skip_cols: int = 0) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[skip_cols:]] for r in rows])


def export_artifacts(model: EncoderModel, clouds, out_dir, class_names=None) -> dict:
    """Write last-layer weights, per-sample features, per-class activity and activity histogram CSVs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e}") from e
    d = model.d_out
    files = {}
    W = model.layers[-1].W
    files["weights"] = write_matrix_csv(out / "last_layer_weights.csv", W, [f"n{j}" for j in range(d)])
    feats = global_features(model, clouds) if len(clouds) else np.zeros((0, d))
    labels = [("" if c.label is None else c.label) for c in clouds]
    files["features"] = write_matrix_csv(out / "global_features.csv", feats, [f"f{j}" for j in range(d)],
                                         row_labels=labels, label_name="label")
    if len(clouds):
        labelled = [c for c in clouds if c.label is not None]
        k = len(class_names) if class_names is not None else (max(c.label for c in labelled) + 1 if labelled else 0)
        rep = activity_report(model, clouds, k)
        names = list(class_names) if class_names is not None else [str(c) for c in range(k)]
    else:
        rep = ActivityReport(np.zeros(d), 0.0, np.zeros((0, d)), np.zeros((0, d)), np.zeros(d, dtype=np.int64))
        names = []
    files["per_class_fraction"] = write_matrix_csv(out / "per_class_activity_fraction.csv", rep.per_class,
                                                   [f"n{j}" for j in range(d)], names, "class")
    files["per_class_share"] = write_matrix_csv(out / "per_class_activity_share.csv", rep.per_class_share,
                                                [f"n{j}" for j in range(d)], names, "class")
    with open(out / "activity_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron", "count", "activity"])
        for j in range(d):
            w.writerow([j, int(rep.counts[j]), _fmt(rep.p[j])])
    files["histogram"] = out / "activity_histogram.csv"
    return files


def write_rows_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items() if k in fields})
    return Path(path)


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
