"""WTA-MLP point encoder and the max-pooled global feature.

Each layer holds a ``d_in x d_out`` matrix whose columns compete for every
input. The winner is the column nearest the input in Euclidean distance; it
carries ``max(0, w . x)`` forward and every other output is zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import DimensionError, SeededRng, argmin_tiebreak, as_vec, euclid_dist

DEFAULT_DIMS = (3, 64, 128, 1024)


@dataclass
class WtaLayer:
    W: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise DimensionError("layer weights must be a 2-D matrix")
        if self.W.shape[1] < 2:
            raise ValueError("a competitive layer needs at least two output neurons")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("layer weights must be finite")

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "WtaLayer":
        return WtaLayer(self.W.copy())


@dataclass
class EncoderModel:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise DimensionError(f"layer widths do not chain: {a.d_out} -> {b.d_in}")

    @property
    def dims(self) -> tuple:
        return (self.layers[0].d_in,) + tuple(l.d_out for l in self.layers)

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def n_params(self) -> int:
        return sum(l.W.size for l in self.layers)

    def copy(self) -> "EncoderModel":
        return EncoderModel([l.copy() for l in self.layers])


@dataclass
class PointCode:
    winners: list
    values: list
    out: np.ndarray = field(repr=False)


def init_encoder(dims=DEFAULT_DIMS, seed=0, scale=0.5, scheme="gaussian", points=None) -> EncoderModel:
    """Random encoder.

    ``scheme="gaussian"`` draws every weight from N(0, scale^2). ``"data"``
    sets first-layer columns to points drawn from ``points`` (an ``M x d_in``
    array) and later-layer columns to the WTA outputs those points produce
    after the layers below have been initialised the same way.
    """
    rng = SeededRng(seed)
    dims = tuple(int(d) for d in dims)
    if scheme == "gaussian":
        layers = [WtaLayer(rng.child("layer", k).normal(0.0, scale, size=(dims[k], dims[k + 1])))
                  for k in range(len(dims) - 1)]
        return EncoderModel(layers)
    if scheme != "data":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if points is None or len(points) == 0:
        raise ValueError("data init needs sample points")
    points = np.asarray(points, dtype=np.float64)
    layers = []
    # first layer: columns are sampled input points
    pick = rng.child("layer", 0).choice(len(points), size=dims[1], replace=len(points) < dims[1])
    layers.append(WtaLayer(points[pick].T.copy()))
    idx, val = _kernels.dense_winners(points, layers[0].W)
    for k in range(1, len(dims) - 1):
        sub = rng.child("layer", k)
        pick = sub.choice(len(points), size=dims[k + 1], replace=len(points) < dims[k + 1])
        W = np.zeros((dims[k], dims[k + 1]))
        W[idx[pick], np.arange(dims[k + 1])] = val[pick]
        # break exact duplicates between columns built from the same input
        W += sub.normal(0.0, 1e-3 * scale, size=W.shape)
        layers.append(WtaLayer(W))
        W_sq = (W * W).sum(axis=0)
        idx, val = _kernels.sparse_winners(idx, val, W, W_sq)
    return EncoderModel(layers)


def layer_forward(layer: WtaLayer, x):
    """Winner index, its ReLU value, and the sparse output vector for one input."""
    x = as_vec(x)
    if x.shape[0] != layer.d_in:
        raise DimensionError(f"input length {x.shape[0]} != layer d_in {layer.d_in}")
    dists = [euclid_dist(x, layer.W[:, j]) for j in range(layer.d_out)]
    winner = argmin_tiebreak(dists)
    value = max(0.0, float(layer.W[:, winner] @ x))
    out = np.zeros(layer.d_out)
    out[winner] = value
    return winner, value, out


def encode_point(model: EncoderModel, p) -> PointCode:
    x = as_vec(p)
    winners, values = [], []
    for layer in model.layers:
        w, v, x = layer_forward(layer, x)
        winners.append(w)
        values.append(v)
    return PointCode(winners, values, x)


def forward_batch(model: EncoderModel, X):
    """Winners and values at every layer for a stack of points.

    Returns two lists (one entry per layer) of length-``N`` arrays. Same
    winners as calling :func:`encode_point` on each row.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layers[0].d_in:
        raise DimensionError(f"points of shape {X.shape} do not fit input width {model.layers[0].d_in}")
    winners, values = [], []
    idx, val = _kernels.dense_winners(X, model.layers[0].W)
    winners.append(idx)
    values.append(val)
    for layer in model.layers[1:]:
        W = layer.W
        with np.errstate(over="ignore"):
            colsq = (W * W).sum(axis=0)
        idx, val = _kernels.sparse_winners(idx, val, W, colsq)
        winners.append(idx)
        values.append(val)
    return winners, values


def pool(winners, values, d) -> np.ndarray:
    """Per-neuron max over points of the last-layer sparse codes."""
    gf = np.zeros(d)
    np.maximum.at(gf, winners, values)
    return gf


def global_feature(model: EncoderModel, cloud) -> np.ndarray:
    points = getattr(cloud, "points", cloud)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("global_feature needs a non-empty N x D point array")
    winners, values = forward_batch(model, points)
    return pool(winners[-1], values[-1], model.d_out)


def global_features(model: EncoderModel, clouds) -> np.ndarray:
    """Stacked global features, one row per cloud."""
    out = np.zeros((len(clouds), model.d_out))
    for i, c in enumerate(clouds):
        out[i] = global_feature(model, c)
    return out


def code_activity(model: EncoderModel, cloud):
    """Last-layer winner index for every point of ``cloud``."""
    points = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    winners, _ = forward_batch(model, points)
    return winners[-1]
