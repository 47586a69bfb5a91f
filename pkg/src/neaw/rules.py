"""Unsupervised weight updates and neuron-activity bookkeeping.

Baselines (Hebb, Oja, Grossberg) update only the winning column, once per
point. The activity-aware family moves every column toward (Hebbian) or
away from (anti-Hebbian) its nearest input in the batch, with the branch
picked by comparing the neuron's activity against the balanced value 1/d.
"""
from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .encoder import EncoderModel, WtaLayer, forward_batch
from .numerics import SeededRng, as_vec


class RuleKind(str, enum.Enum):
    HEBB = "hebb"
    OJA = "oja"
    GROSSBERG = "grossberg"
    NEAW = "neaw"
    NEAW_H = "neaw-h"
    NEAW_AH = "neaw-ah"

    @property
    def activity_aware(self) -> bool:
        return self in (RuleKind.NEAW, RuleKind.NEAW_H, RuleKind.NEAW_AH)


_BASELINE_CODE = {RuleKind.HEBB: _kernels.HEBB, RuleKind.OJA: _kernels.OJA,
                  RuleKind.GROSSBERG: _kernels.GROSSBERG}


@dataclass(frozen=True)
class RuleConfig:
    kind: RuleKind = RuleKind.NEAW
    eta: float = 1e-2
    a: float = 1.0
    b: float = 1.0
    activity_epsilon: float = 0.0
    # "batch": activity from the current batch only; "ema": exponential average across batches
    activity_window: str = "batch"
    ema_decay: float = 0.9
    # "all" or "last": which layers the activity-aware rule trains
    neaw_layers: str = "all"
    # "simultaneous" or "greedy" (layer-wise, one layer at a time)
    schedule: str = "simultaneous"

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be >= 0")
        if self.activity_epsilon < 0:
            raise ValueError("activity_epsilon must be >= 0")
        if self.activity_window not in ("batch", "ema"):
            raise ValueError(f"unknown activity window {self.activity_window!r}")
        if self.neaw_layers not in ("all", "last"):
            raise ValueError(f"unknown layer scope {self.neaw_layers!r}")
        if self.schedule not in ("simultaneous", "greedy"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


def limited_data_eta(fraction: float, base: float = 1e-2) -> float:
    """Encoder learning rate for a labeled-data fraction: base/fraction in [0.01, 0.1]."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    return min(max(base / fraction, 0.01), 0.1)


@dataclass
class ActivityState:
    d: int
    counts: np.ndarray = None
    total_points: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("need at least one neuron")
        if self.counts is None:
            self.counts = np.zeros(self.d, dtype=np.int64)

    @property
    def p(self) -> np.ndarray:
        if self.total_points == 0:
            return np.zeros(self.d)
        return self.counts / self.total_points

    @property
    def p_star(self) -> float:
        return 1.0 / self.d

    def copy(self) -> "ActivityState":
        return ActivityState(self.d, self.counts.copy(), self.total_points)


def record_winners(state: ActivityState, winners) -> ActivityState:
    w = np.asarray(winners, dtype=np.int64).ravel()
    if w.size and (w.min() < 0 or w.max() >= state.d):
        raise IndexError(f"winner index out of range for d={state.d}")
    counts = state.counts + np.bincount(w, minlength=state.d)
    return ActivityState(state.d, counts, state.total_points + int(w.size))


def update_signs(p, d: int, cfg: RuleConfig) -> np.ndarray:
    """Signed step multiplier per neuron: +a below 1/d, -b above, 0 inside the band."""
    p = np.asarray(p, dtype=np.float64)
    if cfg.kind is RuleKind.NEAW_H:
        return np.ones_like(p)
    if cfg.kind is RuleKind.NEAW_AH:
        return -np.ones_like(p)
    p_star = 1.0 / d
    sign = np.zeros_like(p)
    sign[p_star > p + cfg.activity_epsilon] = cfg.a
    sign[p_star < p - cfg.activity_epsilon] = -cfg.b
    return sign


def _batch_inputs(inputs):
    """Normalise a layer input batch to either ("dense", X) or ("sparse", idx, val)."""
    if isinstance(inputs, tuple) and len(inputs) == 2:
        idx = np.ascontiguousarray(inputs[0], dtype=np.int64)
        val = np.ascontiguousarray(inputs[1], dtype=np.float64)
        return ("sparse", idx, val)
    X = np.ascontiguousarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return ("dense", X)


def nearest_inputs(W, batch) -> np.ndarray:
    if batch[0] == "dense":
        return _kernels.dense_nearest_inputs(batch[1], W)
    return _kernels.sparse_nearest_inputs(batch[1], batch[2], W)


def neaw_step(W, batch, p, cfg: RuleConfig, offsets=None) -> None:
    """In-place activity-aware update of ``W``.

    ``offsets`` splits the batch into clouds (``offsets[c]:offsets[c+1]``);
    each cloud contributes its own nearest-input pull or push scaled by
    eta / (points in that cloud). All contributions are computed from the
    weights as they were on entry. Without ``offsets`` the whole batch is
    one cloud.
    """
    n = len(batch[1])
    if n == 0:
        raise ValueError("empty batch")
    offsets = np.asarray((0, n) if offsets is None else offsets, dtype=np.int64)
    sign = update_signs(p, W.shape[1], cfg)
    if cfg.eta == 0.0 or not sign.any():
        return
    if batch[0] == "dense":
        _kernels.neaw_apply(W, batch[1], _NO_IDX, _NO_VAL, False, offsets, sign, float(cfg.eta))
    else:
        _kernels.neaw_apply(W, _NO_X, batch[1], batch[2], True, offsets, sign, float(cfg.eta))


_NO_IDX = np.zeros(0, dtype=np.int64)
_NO_VAL = np.zeros(0)
_NO_X = np.zeros((0, 1))


def neaw_update(layer: WtaLayer, inputs, state: ActivityState, cfg: RuleConfig) -> WtaLayer:
    """Activity-aware update returning a new layer.

    ``inputs`` is an ``N x d_in`` array, or an ``(idx, val)`` pair for one-hot
    inputs coming out of a WTA layer.
    """
    if not cfg.kind.activity_aware:
        raise ValueError(f"{cfg.kind.value} is not an activity-aware rule")
    if state.d != layer.d_out:
        raise ValueError(f"activity state has d={state.d}, layer has {layer.d_out} outputs")
    batch = _batch_inputs(inputs)
    if batch[0] == "dense" and batch[1].shape[1] != layer.d_in:
        raise ValueError("input width does not match layer")
    W = layer.W.copy()
    neaw_step(W, batch, state.p, cfg)
    return WtaLayer(W)


def baseline_update(layer: WtaLayer, x, winner: int, value: float, cfg: RuleConfig) -> WtaLayer:
    """Single-point Hebb / Oja / Grossberg update of the winning column."""
    if cfg.kind not in _BASELINE_CODE:
        raise ValueError(f"{cfg.kind.value} is not a baseline rule")
    if not 0 <= winner < layer.d_out:
        raise IndexError(f"winner {winner} out of range for {layer.d_out} neurons")
    x = as_vec(x)
    W = layer.W.copy()
    _kernels.dense_baseline_pass(W, x[None, :], np.array([winner]), np.array([float(value)]),
                                 float(cfg.eta), _BASELINE_CODE[cfg.kind])
    return WtaLayer(W)


def _baseline_pass(W, batch, win, val, cfg):
    code = _BASELINE_CODE[cfg.kind]
    if batch[0] == "dense":
        _kernels.dense_baseline_pass(W, batch[1], win, val, float(cfg.eta), code)
    else:
        _kernels.sparse_baseline_pass(W, batch[1], batch[2], win, val, float(cfg.eta), code)


def _trainable(cfg: RuleConfig, n_layers: int, only=None):
    layers = range(n_layers)
    if cfg.kind.activity_aware and cfg.neaw_layers == "last":
        layers = [n_layers - 1]
    if only is not None:
        layers = [k for k in layers if k in only]
    return list(layers)


@dataclass
class TrainState:
    """Mutable training carry: model, per-layer activity and optional EMA of activity."""
    model: EncoderModel
    activity: list = field(default_factory=list)
    ema: list = None


def train_batch(model: EncoderModel, clouds, cfg: RuleConfig, ema=None, layers=None):
    """One unsupervised step on a batch of clouds; updates ``model`` in place.

    All layer inputs come from a single forward pass made before any update.
    Activity is counted over every point of the batch. Returns the per-layer
    :class:`ActivityState` of this batch.
    """
    parts = [_points(c) for c in clouds]
    offsets = np.cumsum([0] + [len(c) for c in parts])
    points = np.concatenate(parts)
    winners, values = forward_batch(model, points)
    n_layers = len(model.layers)
    states = []
    for k, layer in enumerate(model.layers):
        states.append(record_winners(ActivityState(layer.d_out), winners[k]))
    for k in _trainable(cfg, n_layers, layers):
        layer = model.layers[k]
        batch = ("dense", np.ascontiguousarray(points, dtype=np.float64)) if k == 0 else \
            ("sparse", winners[k - 1], values[k - 1])
        if cfg.kind.activity_aware:
            p = states[k].p
            if cfg.activity_window == "ema" and ema is not None:
                ema[k] = p if ema[k] is None else cfg.ema_decay * ema[k] + (1 - cfg.ema_decay) * p
                p = ema[k]
            neaw_step(layer.W, batch, p, cfg, offsets)
        else:
            _baseline_pass(layer.W, batch, winners[k], values[k], cfg)
        if not np.all(np.isfinite(layer.W)):
            raise FloatingPointError(f"{cfg.kind.value} update produced non-finite weights in layer {k}")
    return states


def epoch_order(n_clouds: int, seed: int, epoch: int) -> np.ndarray:
    return SeededRng(seed).child("epoch", epoch).permutation(n_clouds)


def train_encoder_epoch(model: EncoderModel, dataset, cfg: RuleConfig, seed: int, batch: int = 4,
                        epoch: int = 0, ema=None, layers=None):
    """One pass over ``dataset`` in seeded-shuffled batches of clouds.

    Returns ``(model, states)``, where ``model`` is a trained copy and
    ``states`` holds the last batch's per-layer activity.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    states = None
    order = epoch_order(len(dataset), seed, epoch)
    for start in range(0, len(order), batch):
        states = train_batch(model, [dataset[i] for i in order[start:start + batch]], cfg, ema=ema, layers=layers)
    return model, states


def _points(cloud):
    return np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)


def last_layer_variance(model: EncoderModel, dataset) -> float:
    """Activity variance of the last layer over all points of ``dataset``."""
    from .analysis import variance_from_counts
    counts = np.zeros(model.d_out, dtype=np.int64)
    for c in dataset:
        w, _ = forward_batch(model, _points(c))
        counts += np.bincount(w[-1], minlength=model.d_out)
    return variance_from_counts(counts)


def layer_variances(model: EncoderModel, dataset) -> list:
    from .analysis import variance_from_counts
    counts = [np.zeros(l.d_out, dtype=np.int64) for l in model.layers]
    for c in dataset:
        w, _ = forward_batch(model, _points(c))
        for k, wk in enumerate(w):
            counts[k] += np.bincount(wk, minlength=len(counts[k]))
    return [variance_from_counts(c) for c in counts]


TELEMETRY_FIELDS = ["epoch", "layer", "activity_variance", "mean_weight_norm", "max_weight_norm", "wall_time_s"]


def train_encoder(model: EncoderModel, dataset, cfg: RuleConfig, epochs: int, seed: int, batch: int = 4,
                  telemetry=None, probe=None, callback=None, on_diverge: str = "raise",
                  info: dict | None = None) -> EncoderModel:
    """Full unsupervised training run.

    ``telemetry`` is an optional CSV path; one row per (epoch, layer) with the
    activity variance measured on ``probe`` (defaults to the training set).
    ``callback(epoch, model)`` runs after every epoch.

    If an epoch drives weights non-finite (plain Hebb does, eventually),
    ``on_diverge="raise"`` propagates the FloatingPointError and ``"stop"``
    returns the model from the last finite epoch. ``info`` (a dict) receives
    ``epochs_completed`` and ``diverged_epoch`` (None when training finished).
    """
    if on_diverge not in ("raise", "stop"):
        raise ValueError(f"on_diverge must be 'raise' or 'stop', got {on_diverge!r}")
    probe = dataset if probe is None else probe
    writer = None
    fh = None
    if telemetry is not None:
        fh = open(telemetry, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(TELEMETRY_FIELDS)
    try:
        n_layers = len(model.layers)
        ema = [None] * n_layers
        if cfg.schedule == "greedy":
            plan = [(k, e) for k in range(n_layers) for e in range(epochs)]
        else:
            plan = [(None, e) for e in range(epochs)]
        done, diverged = 0, None
        for step, (layer, e) in enumerate(plan):
            t0 = time.perf_counter()
            only = None if layer is None else [layer]
            try:
                model, _ = train_encoder_epoch(model, dataset, cfg, seed, batch=batch, epoch=step, ema=ema,
                                               layers=only)
            except FloatingPointError:
                if on_diverge == "raise":
                    raise
                diverged = step
                break
            done = step + 1
            wall = time.perf_counter() - t0
            if writer is not None:
                for k, var in enumerate(layer_variances(model, probe)):
                    norms = np.linalg.norm(model.layers[k].W, axis=0)
                    writer.writerow([step, k, repr(var), repr(float(norms.mean())), repr(float(norms.max())),
                                     f"{wall:.3f}"])
                fh.flush()
            if callback is not None:
                callback(step, model)
    finally:
        if fh is not None:
            fh.close()
    if info is not None:
        info["epochs_completed"] = done
        info["diverged_epoch"] = diverged
    return model
