"""Supervised head: FC -> LayerNorm -> ReLU blocks and a softmax output.

Backpropagation is written out by hand and trained with Adam on frozen
global features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .numerics import DimensionError, SeededRng

LN_EPS = 1e-5
DEFAULT_WIDTHS = (1024, 512, 256)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


class ClassifierModel:
    """Parameters live in ``self.params`` keyed ``W1, b1, g1, s1, ..., W{L}, b{L}``.

    ``g``/``s`` are the LayerNorm gain and shift. ``order`` is ``"ln-relu"``
    (FC, LayerNorm, ReLU) or ``"relu-ln"``.
    """

    def __init__(self, params: dict, order: str = "ln-relu"):
        if order not in ("ln-relu", "relu-ln"):
            raise ValueError(f"unknown block order {order!r}")
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
        self.order = order
        self.n_fc = sum(1 for k in self.params if k.startswith("W"))

    @property
    def widths(self) -> tuple:
        return tuple(self.params[f"W{i}"].shape[0] for i in range(1, self.n_fc + 1)) + (self.k,)

    @property
    def k(self) -> int:
        return self.params[f"W{self.n_fc}"].shape[1]

    @property
    def d_in(self) -> int:
        return self.params["W1"].shape[0]

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "ClassifierModel":
        return ClassifierModel({k: v.copy() for k, v in self.params.items()}, self.order)

    def keys(self):
        return list(self.params)


def init_classifier(k: int, widths=DEFAULT_WIDTHS, seed: int = 0, order: str = "ln-relu") -> ClassifierModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; LayerNorm gain 1, shift 0."""
    if k < 2:
        raise ValueError("need at least two classes")
    rng = SeededRng(seed)
    dims = tuple(widths) + (k,)
    params = {}
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        params[f"W{i + 1}"] = rng.child("W", i).uniform(-bound, bound, size=(dims[i], dims[i + 1]))
        params[f"b{i + 1}"] = rng.child("b", i).uniform(-bound, bound, size=dims[i + 1])
        if i < len(dims) - 2:
            params[f"g{i + 1}"] = np.ones(dims[i + 1])
            params[f"s{i + 1}"] = np.zeros(dims[i + 1])
    return ClassifierModel(params, order)


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> np.ndarray:
    """LayerNorm over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be > 0")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    return np.exp(log_softmax(z))


def _ln_backward(dy, xhat, rstd, gamma):
    g = dy * gamma
    n = xhat.shape[-1]
    return rstd * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)), \
        (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _forward(model: ClassifierModel, X):
    P = model.params
    cache = []
    h = X
    for i in range(1, model.n_fc):
        z = h @ P[f"W{i}"] + P[f"b{i}"]
        if model.order == "ln-relu":
            mu = z.mean(axis=1, keepdims=True)
            rstd = 1.0 / np.sqrt(((z - mu) ** 2).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = (z - mu) * rstd
            a = xhat * P[f"g{i}"] + P[f"s{i}"]
            out = np.maximum(a, 0.0)
            cache.append((h, xhat, rstd, a))
        else:
            r = np.maximum(z, 0.0)
            mu = r.mean(axis=1, keepdims=True)
            rstd = 1.0 / np.sqrt(((r - mu) ** 2).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = (r - mu) * rstd
            out = xhat * P[f"g{i}"] + P[f"s{i}"]
            cache.append((h, xhat, rstd, z))
        h = out
    logits = h @ P[f"W{model.n_fc}"] + P[f"b{model.n_fc}"]
    cache.append((h,))
    return logits, cache


def logits(model: ClassifierModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.d_in:
        raise DimensionError(f"feature width {X.shape[1]} != classifier input {model.d_in}")
    return _forward(model, X)[0]


def forward(model: ClassifierModel, gf) -> np.ndarray:
    """Class probabilities for one feature vector (or a stack of them)."""
    x = np.asarray(gf, dtype=np.float64)
    p = softmax(logits(model, x))
    return p[0] if x.ndim == 1 else p


def loss_and_grads(model: ClassifierModel, X, y):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    P = model.params
    z, cache = _forward(model, X)
    lp = log_softmax(z)
    B = len(y)
    loss = -lp[np.arange(B), y].mean()
    dz = np.exp(lp)
    dz[np.arange(B), y] -= 1.0
    dz /= B
    grads = {}
    L = model.n_fc
    (h,) = cache[-1]
    grads[f"W{L}"] = h.T @ dz
    grads[f"b{L}"] = dz.sum(axis=0)
    dh = dz @ P[f"W{L}"].T
    for i in range(L - 1, 0, -1):
        hin, xhat, rstd, pre = cache[i - 1]
        if model.order == "ln-relu":
            da = dh * (pre > 0)
            dzi, grads[f"g{i}"], grads[f"s{i}"] = _ln_backward(da, xhat, rstd, P[f"g{i}"])
        else:
            dr, grads[f"g{i}"], grads[f"s{i}"] = _ln_backward(dh, xhat, rstd, P[f"g{i}"])
            dzi = dr * (pre > 0)
        grads[f"W{i}"] = hin.T @ dzi
        grads[f"b{i}"] = dzi.sum(axis=0)
        dh = dzi @ P[f"W{i}"].T
    return float(loss), grads


def loss(model: ClassifierModel, X, y) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    lp = log_softmax(_forward(model, X)[0])
    return float(-lp[np.arange(len(y)), y].mean())


def _check_labels(y, k):
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label outside [0, {k})")


def train(model: ClassifierModel, features, labels, cfg: TrainConfig = TrainConfig()) -> ClassifierModel:
    """Mini-batch Adam on mean cross-entropy; returns a trained copy."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty feature set with one label per row")
    _check_labels(y, model.k)
    model = model.copy()
    P = model.params
    m = {k: np.zeros_like(v) for k, v in P.items()}
    v = {k: np.zeros_like(v) for k, v in P.items()}
    rng = SeededRng(cfg.seed).child("classifier-shuffle")
    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X)) if cfg.shuffle else np.arange(len(X))
        for start in range(0, len(X), cfg.batch):
            sel = order[start:start + cfg.batch]
            _, grads = loss_and_grads(model, X[sel], y[sel])
            t += 1
            c1 = 1 - cfg.beta1 ** t
            c2 = 1 - cfg.beta2 ** t
            for name, g in grads.items():
                _kernels.adam_step(P[name].reshape(-1), np.ascontiguousarray(g).reshape(-1), m[name].reshape(-1),
                                   v[name].reshape(-1), cfg.lr, cfg.beta1, cfg.beta2, c1, c2, cfg.adam_eps)
    return model


def predict(model: ClassifierModel, features) -> np.ndarray:
    # argmax keeps the lowest index on ties
    return np.argmax(logits(model, features), axis=1)


def accuracy(model: ClassifierModel, features, labels):
    """Instance accuracy and per-class accuracy (NaN for classes absent from ``labels``)."""
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    pred = predict(model, features)
    per = np.full(model.k, np.nan)
    for c in range(model.k):
        m = y == c
        if m.any():
            per[c] = float((pred[m] == c).mean())
    return float((pred == y).mean()), per


def evaluate(encoder, classifier: ClassifierModel, dataset) -> float:
    from .encoder import global_features
    clouds = getattr(dataset, "clouds", dataset)
    if len(clouds) == 0:
        raise ValueError("empty dataset")
    feats = global_features(encoder, clouds)
    return accuracy(classifier, feats, [c.label for c in clouds])[0]


def _relu_pattern(model: ClassifierModel, X) -> bytes:
    _, cache = _forward(model, X)
    return b"".join(np.packbits(c[3] > 0).tobytes() for c in cache[:-1])


def grad_check(model: ClassifierModel, x, label: int, h: float = 1e-5, floor: float = 1e-8,
               max_params=None, seed: int = 0, grad_fn=None, stats: dict | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Every parameter
    entry is probed unless ``max_params`` caps it to a seeded random subset.
    Coordinates whose +-h probes flip a ReLU on or off straddle a kink where
    the loss has no derivative; they are skipped and counted in
    ``stats["kinks"]``. ``grad_fn`` substitutes the analytic gradient (used
    to test the checker).
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.array([label])
    _, grads = (grad_fn or loss_and_grads)(model, X, y)
    probe = model.copy()
    base = _relu_pattern(probe, X)
    coords = [(name, i) for name in probe.keys() for i in range(probe.params[name].size)]
    if max_params is not None and max_params < len(coords):
        pick = SeededRng(seed).child("gradcheck").choice(len(coords), size=max_params, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    kinks = 0
    for name, i in coords:
        flat = probe.params[name].reshape(-1)
        old = flat[i]
        flat[i] = old + h
        up = loss(probe, X, y)
        kink = _relu_pattern(probe, X) != base
        flat[i] = old - h
        down = loss(probe, X, y)
        kink = kink or _relu_pattern(probe, X) != base
        flat[i] = old
        if kink:
            kinks += 1
            continue
        num = (up - down) / (2 * h)
        ana = grads[name].reshape(-1)[i]
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    if stats is not None:
        stats["checked"] = len(coords) - kinks
        stats["kinks"] = kinks
    return worst
