"""360-degree orientation estimation from robot crops.

A small fully-connected network maps a crop to a probability distribution
over angle bins; the continuous estimate is the circular expectation of
that distribution (unit-vector averaging followed by atan2), which removes
the 0/2pi seam and stays differentiable.  Training combines a wrap-aware
squared error on the continuous angle with a cross-entropy term on the
binned angle.  A tanh regression head over the same features serves as
the baseline.

All gradients are derived by hand and checked against finite differences;
everything runs in double precision with plain numpy.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .data import AugmentationParams, Dataset, OrientationLabel, augment
from .errors import (
    DegenerateExpectation,
    EmptyDataset,
    ModelLoadError,
    ShapeMismatch,
)
from .geometry import TWO_PI, ang_diff, wrap_angle

_R_EPS = 1e-9  # resultant length below this is a degenerate expectation
_P_FLOOR = 1e-12  # probability floor inside the cross-entropy
_LC_SUP = math.pi * math.pi  # supremum of the wrap-aware squared error


class BinLayout:
    """Evenly spaced angle bins over [0, 2*pi): centers at i * 2*pi/k."""

    def __init__(self, k: int = 100):
        if k < 2:
            raise ValueError("need at least 2 bins")
        self.k = k
        self.delta = TWO_PI / k
        self.centers = np.arange(k) * self.delta
        self._cos = np.cos(self.centers)
        self._sin = np.sin(self.centers)

    def target_bin(self, phi: float) -> int:
        """Nearest bin center; ties between centers round upward."""
        return int(math.floor(wrap_angle(phi) / self.delta + 0.5)) % self.k

    def __eq__(self, other):
        return isinstance(other, BinLayout) and other.k == self.k

    def __repr__(self):
        return f"BinLayout(k={self.k})"


@dataclass
class ModelParams:
    """Classification head: crop -> hidden tanh layer -> group-average
    pooled features -> affine -> k logits."""

    w1: np.ndarray  # (crop_size^2, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (pooled, k)
    b2: np.ndarray  # (k,)
    bins: BinLayout
    crop_size: int
    pool_size: int

    def copy(self) -> "ModelParams":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(), w2=self.w2.copy(), b2=self.b2.copy())


@dataclass
class RegressionParams:
    """Baseline head: same features -> single scalar -> pi * tanh."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray  # (pooled,)
    b2: float
    crop_size: int
    pool_size: int

    def copy(self) -> "RegressionParams":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(), w2=self.w2.copy())


AnyParams = Union[ModelParams, RegressionParams]


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    augmentation: Optional[AugmentationParams] = AugmentationParams()
    hidden: int = 128
    pool_size: int = 8
    bins_k: int = 100
    crop_size: int = 32
    optimizer: str = "sgd"
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("lr, batch size and epochs must be positive")
        if self.hidden % self.pool_size != 0:
            raise ValueError("hidden width must be a multiple of the pool size")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init_params(config: TrainConfig, rng: np.random.Generator) -> ModelParams:
    n = config.crop_size * config.crop_size
    m = config.hidden // config.pool_size
    return ModelParams(
        w1=rng.normal(0.0, 1.0 / math.sqrt(n), size=(n, config.hidden)),
        b1=np.zeros(config.hidden),
        w2=rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, config.bins_k)),
        b2=np.zeros(config.bins_k),
        bins=BinLayout(config.bins_k),
        crop_size=config.crop_size,
        pool_size=config.pool_size,
    )


def init_regression_params(config: TrainConfig, rng: np.random.Generator) -> RegressionParams:
    n = config.crop_size * config.crop_size
    m = config.hidden // config.pool_size
    return RegressionParams(
        w1=rng.normal(0.0, 1.0 / math.sqrt(n), size=(n, config.hidden)),
        b1=np.zeros(config.hidden),
        w2=rng.normal(0.0, 1.0 / math.sqrt(m), size=m),
        b2=0.0,
        crop_size=config.crop_size,
        pool_size=config.pool_size,
    )


# --- forward ------------------------------------------------------------------


def _as_batch(params: AnyParams, crops: np.ndarray) -> np.ndarray:
    x = np.asarray(crops, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != params.crop_size or x.shape[2] != params.crop_size:
        raise ShapeMismatch(f"crop shape {x.shape[1:]} != {params.crop_size}x{params.crop_size}")
    return x.reshape(x.shape[0], -1) - 0.5  # center pixel values for the tanh layer


def _features(params: AnyParams, x: np.ndarray):
    z1 = x @ params.w1 + params.b1
    h = np.tanh(z1)
    b = h.shape[0]
    f = h.reshape(b, -1, params.pool_size).mean(axis=2)
    return h, f


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def circular_expectation(probs: np.ndarray, bins: BinLayout) -> float:
    """atan2 of the probability-weighted mean unit vector, in [0, 2*pi)."""
    p = np.asarray(probs, dtype=float)
    if p.shape != (bins.k,):
        raise ShapeMismatch(f"distribution shape {p.shape} != ({bins.k},)")
    xbar = float(p @ bins._cos)
    ybar = float(p @ bins._sin)
    if math.hypot(xbar, ybar) < _R_EPS:
        raise DegenerateExpectation(f"resultant length {math.hypot(xbar, ybar):.2e}")
    return float(wrap_angle(math.atan2(ybar, xbar)))


def forward(params: ModelParams, crop: np.ndarray):
    """Logits, bin distribution and continuous angle for one crop.

    Raises DegenerateExpectation when the distribution has no usable mean
    direction (e.g. exactly uniform logits).
    """
    x = _as_batch(params, crop)
    _, f = _features(params, x)
    logits = (f @ params.w2 + params.b2)[0]
    probs = softmax(logits)
    angle = circular_expectation(probs, params.bins)
    return logits, probs, angle


def forward_regression(params: RegressionParams, crop: np.ndarray) -> float:
    x = _as_batch(params, crop)
    _, f = _features(params, x)
    z = (f @ params.w2 + params.b2).item()
    return float(wrap_angle(math.pi * math.tanh(z)))


def predict_angle(params: AnyParams, crop: np.ndarray) -> float:
    """Angle estimate for either head.

    Propagates DegenerateExpectation for classification heads whose
    distribution has no usable mean direction.
    """
    if isinstance(params, RegressionParams):
        return forward_regression(params, crop)
    return forward(params, crop)[2]


# --- losses -------------------------------------------------------------------


def loss_continuous(phi: float, phi_hat: float) -> float:
    """Wrap-aware squared error: min over the three 2*pi-shifted branches."""
    phi = float(wrap_angle(phi))
    phi_hat = float(wrap_angle(phi_hat))
    return min(
        (phi - phi_hat) ** 2,
        (phi + TWO_PI - phi_hat) ** 2,
        (phi - TWO_PI - phi_hat) ** 2,
    )


def loss_discrete(phi: float, probs: np.ndarray, bins: BinLayout) -> float:
    """Cross entropy against the one-hot nearest-bin target."""
    j = bins.target_bin(phi)
    return float(-math.log(max(probs[j], _P_FLOOR)))


def loss_total(phi: float, probs: np.ndarray, bins: BinLayout, alpha: float) -> float:
    """Combined angular loss; a degenerate expectation contributes the
    continuous term's supremum (pi^2) so training remains defined."""
    try:
        phi_hat = circular_expectation(probs, bins)
        lc = loss_continuous(phi, phi_hat)
    except DegenerateExpectation:
        lc = _LC_SUP
    return lc + alpha * loss_discrete(phi, probs, bins)


def _wrap_branch_residual(phi: np.ndarray, phi_hat: np.ndarray) -> np.ndarray:
    """Signed residual of the selected wrap branch: loss = residual^2."""
    d0 = phi - phi_hat
    cands = np.stack([d0, d0 + TWO_PI, d0 - TWO_PI])
    idx = np.argmin(cands**2, axis=0)
    return np.take_along_axis(cands, idx[None], axis=0)[0]


# --- backward -----------------------------------------------------------------


@dataclass
class ParamGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: Union[np.ndarray, float]


def _grad_batch_classifier(params: ModelParams, x: np.ndarray, phis: np.ndarray, alpha: float):
    """Mean loss and its exact gradient over a batch (already flattened x)."""
    bins = params.bins
    b = x.shape[0]
    z1 = x @ params.w1 + params.b1
    h = np.tanh(z1)
    f = h.reshape(b, -1, params.pool_size).mean(axis=2)
    logits = f @ params.w2 + params.b2
    probs = softmax(logits)

    xbar = probs @ bins._cos
    ybar = probs @ bins._sin
    r2 = xbar * xbar + ybar * ybar
    ok = np.sqrt(r2) >= _R_EPS

    phi = wrap_angle(phis)
    phi_hat = wrap_angle(np.arctan2(ybar, xbar))
    res = _wrap_branch_residual(phi, phi_hat)

    targets = np.array([bins.target_bin(p) for p in phis])
    p_t = probs[np.arange(b), targets]
    ld = -np.log(np.maximum(p_t, _P_FLOOR))
    lc = np.where(ok, res**2, _LC_SUP)
    loss = float(np.mean(lc + alpha * ld))

    # d(loss)/d(logits), degenerate rows contribute only the discrete term
    dphi_hat = np.where(ok, -2.0 * res, 0.0)
    denom = np.where(r2 < 1e-300, 1.0, r2)
    gp = dphi_hat[:, None] * (-ybar[:, None] * bins._cos + xbar[:, None] * bins._sin) / denom[:, None]
    gp = np.where(ok[:, None], gp, 0.0)
    dlogits = probs * (gp - np.sum(gp * probs, axis=1, keepdims=True))
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), targets] = 1.0
    dlogits = (dlogits + alpha * (probs - onehot)) / b

    gw2 = f.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    df = dlogits @ params.w2.T
    dh = np.repeat(df / params.pool_size, params.pool_size, axis=1)
    dz1 = dh * (1.0 - h * h)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, ParamGrads(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def _grad_batch_regression(params: RegressionParams, x: np.ndarray, phis: np.ndarray):
    b = x.shape[0]
    z1 = x @ params.w1 + params.b1
    h = np.tanh(z1)
    f = h.reshape(b, -1, params.pool_size).mean(axis=2)
    z = f @ params.w2 + params.b2
    tz = np.tanh(z)
    phi_hat = wrap_angle(math.pi * tz)
    res = _wrap_branch_residual(wrap_angle(phis), phi_hat)
    loss = float(np.mean(res**2))

    dz = (-2.0 * res) * math.pi * (1.0 - tz * tz) / b
    gw2 = f.T @ dz
    gb2 = float(dz.sum())
    df = dz[:, None] * params.w2[None, :]
    dh = np.repeat(df / params.pool_size, params.pool_size, axis=1)
    dz1 = dh * (1.0 - h * h)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, ParamGrads(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def backward(params: AnyParams, crop: np.ndarray, phi: float, alpha: float = 1.0):
    """Loss and exact gradient of the total loss for one sample."""
    x = _as_batch(params, crop)
    if isinstance(params, RegressionParams):
        return _grad_batch_regression(params, x, np.array([phi]))
    return _grad_batch_classifier(params, x, np.array([phi]), alpha)


def flatten_params(params: AnyParams) -> np.ndarray:
    parts = [params.w1.ravel(), params.b1.ravel(), np.ravel(params.w2), np.atleast_1d(params.b2).ravel()]
    return np.concatenate(parts).astype(float)


def set_flat_params(params: AnyParams, vec: np.ndarray) -> None:
    i = 0
    for name in ("w1", "b1", "w2"):
        arr = getattr(params, name)
        n = arr.size
        arr[...] = vec[i : i + n].reshape(arr.shape)
        i += n
    if isinstance(params.b2, np.ndarray):
        params.b2[...] = vec[i : i + params.b2.size].reshape(params.b2.shape)
    else:
        params.b2 = float(vec[i])


def flatten_grads(grads: ParamGrads) -> np.ndarray:
    parts = [grads.w1.ravel(), grads.b1.ravel(), np.ravel(grads.w2), np.atleast_1d(grads.b2).ravel()]
    return np.concatenate(parts).astype(float)


# --- training / evaluation -------------------------------------------------------


def _angle_errors_deg(params: AnyParams, entries: Sequence[OrientationLabel]) -> np.ndarray:
    errs = []
    for e in entries:
        if isinstance(params, RegressionParams):
            est = forward_regression(params, e.crop)
        else:
            try:
                est = forward(params, e.crop)[2]
            except DegenerateExpectation:
                errs.append(math.pi)
                continue
        errs.append(abs(ang_diff(e.phi, est)))
    return np.degrees(errs)


def evaluate(params: AnyParams, entries: Sequence[OrientationLabel]) -> dict:
    """Median and decile wrap-aware absolute errors in degrees."""
    if not entries:
        raise EmptyDataset("evaluation split is empty")
    errs = _angle_errors_deg(params, entries)
    return {
        "n": len(entries),
        "median_deg": float(np.median(errs)),
        "deciles_deg": [float(np.percentile(errs, q)) for q in range(10, 100, 10)],
    }


def train(
    dataset: Dataset,
    config: TrainConfig,
    arch: str = "classification",
    log_every: int = 0,
):
    """Mini-batch SGD with momentum; returns the parameters with the best
    validation median error seen across epochs, plus the epoch history.

    Deterministic for a fixed config: initialization, shuffling and
    augmentation each use their own stream derived from ``config.seed``.
    """
    train_entries = dataset.train_entries()
    val_entries = dataset.val_entries()
    if not train_entries:
        raise EmptyDataset("training split is empty")
    if arch not in ("classification", "regression"):
        raise ValueError(f"unknown arch {arch!r}")

    kids = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(kids[0])
    rng_shuffle = np.random.default_rng(kids[1])
    rng_aug = np.random.default_rng(kids[2])

    if arch == "classification":
        params: AnyParams = init_params(config, rng_init)
    else:
        params = init_regression_params(config, rng_init)

    crops = [e.crop for e in train_entries]
    phis = np.array([e.phi for e in train_entries])
    n = len(crops)

    names = ("w1", "b1", "w2", "b2")
    velocity = {k: np.zeros_like(np.asarray(getattr(params, k), dtype=float)) for k in names}
    adam_v = {k: np.zeros_like(velocity[k]) for k in names}
    adam_t = 0
    best_params = params.copy()
    best_median = math.inf
    history = []

    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            if config.augmentation is not None:
                batch = np.stack([augment(crops[i], config.augmentation, rng_aug) for i in idx])
            else:
                batch = np.stack([crops[i] for i in idx])
            x = _as_batch(params, batch)
            if arch == "classification":
                loss, grads = _grad_batch_classifier(params, x, phis[idx], config.alpha)
            else:
                loss, grads = _grad_batch_regression(params, x, phis[idx])
            epoch_loss += loss
            n_batches += 1
            gs = {k: np.asarray(getattr(grads, k), dtype=float) for k in names}
            if config.clip_norm is not None:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in gs.values()))
                if gnorm > config.clip_norm:
                    scale = config.clip_norm / gnorm
                    gs = {k: g * scale for k, g in gs.items()}
            if config.optimizer == "adam":
                adam_t += 1
                b1c = 1.0 - 0.9**adam_t
                b2c = 1.0 - 0.999**adam_t
                for name in names:
                    velocity[name] = 0.9 * velocity[name] + 0.1 * gs[name]
                    adam_v[name] = 0.999 * adam_v[name] + 0.001 * gs[name] ** 2
                    step = -config.lr * (velocity[name] / b1c) / (np.sqrt(adam_v[name] / b2c) + 1e-8)
                    cur = getattr(params, name)
                    if isinstance(cur, np.ndarray):
                        cur += step
                    else:
                        params.b2 = cur + float(step)
            else:
                for name in names:
                    velocity[name] = config.momentum * velocity[name] - config.lr * gs[name]
                    cur = getattr(params, name)
                    if isinstance(cur, np.ndarray):
                        cur += velocity[name]
                    else:
                        params.b2 = cur + float(velocity[name])
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches)}
        if val_entries:
            entry["val_median_deg"] = float(np.median(_angle_errors_deg(params, val_entries)))
            if entry["val_median_deg"] < best_median:
                best_median = entry["val_median_deg"]
                best_params = params.copy()
        history.append(entry)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch+1}/{config.epochs}: " + ", ".join(f"{k}={v:.4f}" for k, v in entry.items() if k != "epoch"))

    if not val_entries:
        best_params = params.copy()
    return best_params, history


# --- checkpoints -------------------------------------------------------------------

_CKPT_FORMAT = "deskservo-model"
_CKPT_VERSION = 1


def _array_json(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}


def _array_from_json(d: dict) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8")
    return raw.reshape(d["shape"]).copy()


def save_checkpoint(path: str | Path, params: AnyParams) -> None:
    kind = "regression" if isinstance(params, RegressionParams) else "classification"
    obj = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "kind": kind,
        "crop_size": params.crop_size,
        "pool_size": params.pool_size,
        "arrays": {
            "w1": _array_json(params.w1),
            "b1": _array_json(params.b1),
            "w2": _array_json(np.asarray(params.w2)),
            "b2": _array_json(np.atleast_1d(params.b2)),
        },
    }
    if kind == "classification":
        obj["bins"] = params.bins.k
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_checkpoint(path: str | Path) -> AnyParams:
    try:
        with open(path) as f:
            obj = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ModelLoadError(f"cannot read checkpoint {path}: {e}") from e
    if obj.get("format") != _CKPT_FORMAT or obj.get("version") != _CKPT_VERSION:
        raise ModelLoadError(f"unrecognized checkpoint format in {path}")
    try:
        arrays = {k: _array_from_json(v) for k, v in obj["arrays"].items()}
        if obj["kind"] == "classification":
            return ModelParams(
                w1=arrays["w1"],
                b1=arrays["b1"],
                w2=arrays["w2"],
                b2=arrays["b2"],
                bins=BinLayout(obj["bins"]),
                crop_size=obj["crop_size"],
                pool_size=obj["pool_size"],
            )
        if obj["kind"] == "regression":
            return RegressionParams(
                w1=arrays["w1"],
                b1=arrays["b1"],
                w2=arrays["w2"],
                b2=float(arrays["b2"][0]),
                crop_size=obj["crop_size"],
                pool_size=obj["pool_size"],
            )
    except (KeyError, ValueError) as e:
        raise ModelLoadError(f"corrupt checkpoint {path}: {e}") from e
    raise ModelLoadError(f"unknown checkpoint kind {obj.get('kind')!r}")
