"""Dense binary classifier with a mutual-learning loss, written directly in numpy.

Predictions are carried around as 1-D arrays holding the positive-class
probability ``p`` of each example; the full binary distribution is
``(p, 1 - p)`` and :func:`as_pairs` materialises it when needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

EPSILON = 1e-7


class ShapeError(ValueError):
    """Raised when arrays do not chain through the network."""


@dataclass
class ModelParameters:
    """Ordered dense layers. ``weights[k]`` has shape ``(out, in)``.

    Hidden layers use ReLU followed by inverted dropout at ``dropout[k]``;
    the last layer is a single sigmoid unit.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix and at least one layer")
        if not self.dropout:
            self.dropout = (0.0,) * (len(self.weights) - 1)
        self.dropout = tuple(float(r) for r in self.dropout)
        if len(self.dropout) != len(self.weights) - 1:
            raise ShapeError(
                f"{len(self.weights) - 1} hidden layers but {len(self.dropout)} dropout rates"
            )
        if any(not 0.0 <= r < 1.0 for r in self.dropout):
            raise ValueError(f"dropout rates must lie in [0, 1), got {self.dropout}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weights {w.shape} and biases {b.shape} disagree")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {w.shape[1]} inputs but layer {k - 1} "
                    f"produces {self.weights[k - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} holds non-finite values")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("final layer must have exactly one output unit")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def layer_sizes(self) -> list[int]:
        return [w.size + b.size for w, b in zip(self.weights, self.biases)]

    def count(self, layers: Optional[int] = None) -> int:
        """Number of scalars in the first ``layers`` layers (all by default)."""
        return sum(self.layer_sizes()[:layers])

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def same_shape(self, other: "ModelParameters") -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == c.shape and b.shape == d.shape
            for a, b, c, d in zip(self.weights, self.biases, other.weights, other.biases)
        )


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.weights + self.biases)))


@dataclass
class LossSpec:
    """Which objective :func:`compute_gradients` differentiates.

    ``mode`` is ``"bce"`` or ``"bce+kld"``. Peer predictions are constants.
    ``kl_direction="paper"`` uses KL(own || peer); ``"reverse"`` uses
    KL(peer || own) as in the original deep mutual learning setup.
    """

    mode: str = "bce"
    peers: list[np.ndarray] = field(default_factory=list)
    epsilon: float = EPSILON
    kl_direction: str = "paper"
    kl_coefficient: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("bce", "bce+kld"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.kl_direction not in ("paper", "reverse"):
            raise ValueError(f"unknown kl_direction {self.kl_direction!r}")
        if self.mode == "bce+kld" and not self.peers:
            raise ValueError("bce+kld mode needs at least one peer prediction sequence")


def init_params(
    layer_dims: Sequence[int],
    dropout: Sequence[float] = (),
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> ModelParameters:
    """Glorot-uniform weights and zero biases for ``layer_dims = [in, h1, ..., 1]``."""
    if rng is None:
        rng = np.random.default_rng(seed)
    if len(layer_dims) < 2:
        raise ShapeError("layer_dims needs an input size and at least one layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParameters(weights, biases, tuple(dropout))


def as_pairs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.stack([p, 1.0 - p], axis=-1)


def clamp(p: np.ndarray, epsilon: float = EPSILON) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), epsilon, 1.0 - epsilon)


def _check_batch(params: ModelParameters, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch of shape {np.shape(batch)} does not fit first layer expecting {params.input_dim} columns"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def dropout_masks(
    params: ModelParameters, n_rows: int, rng: np.random.Generator
) -> list[Optional[np.ndarray]]:
    """Inverted-dropout masks (already divided by the keep probability)."""
    masks: list[Optional[np.ndarray]] = []
    for k, rate in enumerate(params.dropout):
        if rate == 0.0:
            masks.append(None)
            continue
        keep = 1.0 - rate
        width = params.weights[k].shape[0]
        masks.append((rng.random((n_rows, width)) < keep) / keep)
    return masks


def forward(
    params: ModelParameters,
    batch: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    masks: Optional[list[Optional[np.ndarray]]] = None,
) -> tuple[np.ndarray, dict]:
    """Run the network; returns clamped probabilities and a cache for backprop.

    In ``"train"`` mode dropout masks come from ``masks`` if given, otherwise
    they are drawn from ``rng``.
    """
    x = _check_batch(params, batch)
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and masks is None:
        if any(r > 0 for r in params.dropout):
            if rng is None:
                raise ValueError("train mode needs an rng for dropout masks")
            masks = dropout_masks(params, x.shape[0], rng)
        else:
            masks = [None] * len(params.dropout)
    if mode == "eval":
        masks = [None] * len(params.dropout)

    inputs, pre = [], []
    h = x
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
            if masks[k] is not None:
                h = h * masks[k]
    logits = pre[-1][:, 0]
    raw = expit(logits)
    cache = {"inputs": inputs, "pre": pre, "masks": masks, "raw": raw}
    return clamp(raw), cache


def predict(params: ModelParameters, batch: np.ndarray) -> np.ndarray:
    return forward(params, batch, mode="eval")[0]


def bce_loss(preds: np.ndarray, labels: np.ndarray, epsilon: float = EPSILON) -> float:
    p = clamp(preds, epsilon)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"{p.shape[0] if p.ndim else 1} predictions vs {y.size} labels")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def kl_divergence(P, Q, epsilon: float = EPSILON):
    """KL(P || Q) in nats over the last axis of two binary distributions.

    Both inputs are clamped to ``[epsilon, 1 - epsilon]`` and renormalised.
    Returns a float for a single pair, an array for stacked pairs.
    """
    P = np.clip(np.asarray(P, dtype=float), epsilon, 1.0 - epsilon)
    Q = np.clip(np.asarray(Q, dtype=float), epsilon, 1.0 - epsilon)
    P = P / P.sum(axis=-1, keepdims=True)
    Q = Q / Q.sum(axis=-1, keepdims=True)
    out = np.sum(P * np.log(P / Q), axis=-1)
    return float(out) if out.ndim == 0 else out


def _pointwise_kl(own: np.ndarray, peer: np.ndarray, direction: str) -> np.ndarray:
    if direction == "paper":
        return own * np.log(own / peer) + (1 - own) * np.log((1 - own) / (1 - peer))
    return peer * np.log(peer / own) + (1 - peer) * np.log((1 - peer) / (1 - own))


def kld_avg(
    own: np.ndarray,
    peers: Sequence[np.ndarray],
    epsilon: float = EPSILON,
    direction: str = "paper",
) -> float:
    """Mean over examples of the KL to each of the K-1 peers, averaged over peers."""
    if len(peers) == 0:
        raise ValueError("average KL needs at least one peer (undefined for a single client)")
    p = clamp(own, epsilon)
    total = np.zeros_like(p)
    for j, q in enumerate(peers):
        q = clamp(q, epsilon)
        if q.shape != p.shape:
            raise ShapeError(f"peer {j} has {q.size} predictions, expected {p.size}")
        total += _pointwise_kl(p, q, direction)
    return float(np.mean(total / len(peers)))


def mutual_loss(model_loss: float, kld: float, coefficient: float = 1.0) -> float:
    return model_loss + coefficient * kld


def loss_terms(
    preds: np.ndarray, labels: np.ndarray, spec: LossSpec
) -> tuple[float, float, float]:
    """``(total, bce, kld)`` of ``preds``; kld is 0.0 in bce-only mode."""
    bce = bce_loss(preds, labels, spec.epsilon)
    if spec.mode == "bce":
        return bce, bce, 0.0
    kld = kld_avg(preds, spec.peers, spec.epsilon, spec.kl_direction)
    return mutual_loss(bce, kld, spec.kl_coefficient), bce, kld


def compute_gradients(
    params: ModelParameters,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: LossSpec,
    rng: Optional[np.random.Generator] = None,
    masks: Optional[list[Optional[np.ndarray]]] = None,
    mode: str = "train",
) -> tuple[float, GradientSet]:
    """Loss and its exact gradient with respect to every parameter."""
    y = np.asarray(labels, dtype=float)
    p, cache = forward(params, batch, mode=mode, rng=rng, masks=masks)
    if y.shape != p.shape:
        raise ShapeError(f"{p.size} predictions vs {y.size} labels")
    n = p.size
    total, _, _ = loss_terms(p, y, spec)

    raw = cache["raw"]
    eps = spec.epsilon
    # clamping flattens the loss outside (eps, 1-eps)
    live = (raw > eps) & (raw < 1.0 - eps)
    dz = np.where(live, p - y, 0.0)
    if spec.mode == "bce+kld":
        acc = np.zeros(n)
        for q in spec.peers:
            q = clamp(q, eps)
            if q.shape != p.shape:
                raise ShapeError(f"peer sequence of length {q.size} vs batch of {n}")
            if spec.kl_direction == "paper":
                # d/dz KL(p||q) = p(1-p) * (logit p - logit q)
                acc += p * (1 - p) * (np.log(p / (1 - p)) - np.log(q / (1 - q)))
            else:
                acc += p - q
        dz = dz + np.where(live, spec.kl_coefficient * acc / len(spec.peers), 0.0)
    delta = (dz / n)[:, None]

    gw: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for k in range(params.n_layers - 1, -1, -1):
        gw[k] = delta.T @ cache["inputs"][k]
        gb[k] = delta.sum(axis=0)
        if k == 0:
            break
        back = delta @ params.weights[k]
        if cache["masks"][k - 1] is not None:
            back = back * cache["masks"][k - 1]
        delta = back * (cache["pre"][k - 1] > 0)
    return total, GradientSet(gw, gb)


def sgd_step(params: ModelParameters, grads: GradientSet, lr: float) -> ModelParameters:
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if len(grads.weights) != params.n_layers:
        raise ShapeError(f"{len(grads.weights)} gradient layers for a {params.n_layers}-layer model")
    for k, (w, g, b, gbk) in enumerate(zip(params.weights, grads.weights, params.biases, grads.biases)):
        if w.shape != g.shape or b.shape != gbk.shape:
            raise ShapeError(f"layer {k}: gradient shape {g.shape} vs parameter shape {w.shape}")
    return ModelParameters(
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
        params.dropout,
    )


def finite_difference_check(
    params: ModelParameters,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: LossSpec,
    h: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    max_coords: Optional[int] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout masks are drawn once from ``rng`` and frozen for every evaluation;
    without an rng the network runs in eval mode. ``max_coords`` samples a
    subset of coordinates for large models.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-6, 1e-3], got {h}")
    x = _check_batch(params, batch)
    if rng is not None:
        masks = dropout_masks(params, x.shape[0], rng)
        mode = "train"
    else:
        masks, mode = None, "eval"
    _, grads = compute_gradients(params, x, labels, spec, masks=masks, mode=mode)

    def loss_at(p: ModelParameters) -> float:
        out, _ = forward(p, x, mode=mode, masks=masks)
        return loss_terms(out, labels, spec)[0]

    coords = [
        (kind, k, idx)
        for k in range(params.n_layers)
        for kind, arr in (("w", params.weights[k]), ("b", params.biases[k]))
        for idx in np.ndindex(arr.shape)
    ]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(0).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    for kind, k, idx in coords:
        shifted = []
        for sign in (1.0, -1.0):
            p = params.copy()
            target = p.weights[k] if kind == "w" else p.biases[k]
            target[idx] += sign * h
            shifted.append(loss_at(p))
        numeric = (shifted[0] - shifted[1]) / (2 * h)
        analytic = (grads.weights[k] if kind == "w" else grads.biases[k])[idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
