"""Client-update strategies and the weight aggregation primitives they share."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .nn import LossSpec, ModelParameters

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    VANILLA = "vanilla"
    ASYNC = "async"
    DML = "dml"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        aliases = {
            "vanilla": cls.VANILLA,
            "sync": cls.VANILLA,
            "async": cls.ASYNC,
            "asyncweights": cls.ASYNC,
            "async_weights": cls.ASYNC,
            "dml": cls.DML,
            "mutual": cls.DML,
            "distributedmutuallearning": cls.DML,
        }
        try:
            return aliases[name.strip().lower().replace("-", "_")]
        except KeyError:
            raise ValueError(
                f"unknown strategy {name!r}; expected one of vanilla, async, dml"
            ) from None


class LayerKind(str, enum.Enum):
    SHALLOW = "shallow"
    DEEP = "deep"


@dataclass(frozen=True)
class LayerPartition:
    kind: LayerKind
    boundary: int

    def shared_layers(self, n_layers: int) -> int:
        return n_layers if self.kind is LayerKind.DEEP else self.boundary


def default_boundary(n_layers: int) -> int:
    # first half of the layers counts as shallow
    return max(1, math.ceil(n_layers / 2))


@dataclass
class ClientReport:
    accuracy: float
    loss: float
    examples_seen: int
    epoch_losses: list[float] = field(default_factory=list)


@dataclass
class StrategySpec:
    kind: Strategy = Strategy.DML
    delta: int = 3
    warmup: int = 5
    local_epochs: int = 5
    mutual_epochs: int = 5
    lr: float = 0.05
    batch_size: int = 32
    kl_direction: str = "paper"
    kl_coefficient: float = 1.0
    boundary: Optional[int] = None

    def problems(self) -> list[str]:
        out = []
        if self.delta < 1:
            out.append(f"delta must be >= 1, got {self.delta}")
        if self.warmup < 0:
            out.append(f"warmup must be >= 0, got {self.warmup}")
        if self.local_epochs < 1:
            out.append(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.mutual_epochs < 1:
            out.append(f"mutual_epochs must be >= 1, got {self.mutual_epochs}")
        if not self.lr > 0:
            out.append(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.kl_direction not in ("paper", "reverse"):
            out.append(f"kl_direction must be 'paper' or 'reverse', got {self.kl_direction!r}")
        if self.kl_coefficient < 0:
            out.append(f"kl_coefficient must be >= 0, got {self.kl_coefficient}")
        if self.boundary is not None and self.boundary < 1:
            out.append(f"boundary must be >= 1, got {self.boundary}")
        return out


def select_partition(round_index: int, delta: int, warmup: int = 5) -> LayerKind:
    if (round_index + 1) % delta == 0 and round_index >= warmup:
        return LayerKind.DEEP
    return LayerKind.SHALLOW


def preprocess_weights(
    client_params: Sequence[ModelParameters], reports: Sequence[ClientReport]
) -> list[tuple[float, ModelParameters]]:
    """Pair each client's parameters with its share of the summed accuracy."""
    if not client_params or len(client_params) != len(reports):
        raise ValueError(
            f"need matching non-empty lists, got {len(client_params)} models and {len(reports)} reports"
        )
    acc = np.array([r.accuracy for r in reports], dtype=float)
    if np.any(acc < 0) or np.any(acc > 1):
        raise ValueError(f"accuracies must lie in [0, 1], got {acc.tolist()}")
    total = acc.sum()
    if total == 0:
        log.warning("all client accuracies are zero; falling back to uniform weighting")
        coeffs = np.full(acc.size, 1.0 / acc.size)
    else:
        coeffs = acc / total
    return [(float(c), p) for c, p in zip(coeffs, client_params)]


def average_weights(weighted: Sequence[tuple[float, ModelParameters]]) -> ModelParameters:
    if not weighted:
        raise ValueError("nothing to average")
    coeffs = [c for c, _ in weighted]
    if abs(sum(coeffs) - 1.0) > 1e-9:
        raise ValueError(f"coefficients sum to {sum(coeffs)!r}, expected 1")
    ref = weighted[0][1]
    for i, (_, p) in enumerate(weighted[1:], start=1):
        if len(p.weights) != ref.n_layers:
            raise nn.ShapeError(f"model {i} has {len(p.weights)} layers, expected {ref.n_layers}")
        for k in range(ref.n_layers):
            if p.weights[k].shape != ref.weights[k].shape or p.biases[k].shape != ref.biases[k].shape:
                raise nn.ShapeError(
                    f"model {i} layer {k}: shape {p.weights[k].shape} vs {ref.weights[k].shape}"
                )
    weights, biases = [], []
    for k in range(ref.n_layers):
        w = np.zeros_like(ref.weights[k])
        b = np.zeros_like(ref.biases[k])
        for c, p in weighted:
            w += c * p.weights[k]
            b += c * p.biases[k]
        weights.append(w)
        biases.append(b)
    return ModelParameters(weights, biases, ref.dropout)


def uniform_average(client_params: Sequence[ModelParameters]) -> ModelParameters:
    c = 1.0 / len(client_params)
    return average_weights([(c, p) for p in client_params])


def update_weights(
    current: ModelParameters, avg: ModelParameters, partition: LayerPartition
) -> ModelParameters:
    """Deep: take ``avg`` wholesale. Shallow: layers below the boundary from ``avg``."""
    if not current.same_shape(avg):
        raise nn.ShapeError("current and averaged parameters differ in shape")
    if not 1 <= partition.boundary <= current.n_layers:
        raise ValueError(f"boundary {partition.boundary} outside 1..{current.n_layers}")
    if partition.kind is LayerKind.DEEP:
        return avg.copy()
    cut = partition.boundary
    src = [avg] * cut + [current] * (current.n_layers - cut)
    return ModelParameters(
        [s.weights[k].copy() for k, s in enumerate(src)],
        [s.biases[k].copy() for k, s in enumerate(src)],
        current.dropout,
    )


def _train(
    params: ModelParameters,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    make_spec,
    trace_spec=None,
):
    """Shared mini-batch loop. ``make_spec(idx)`` builds the LossSpec for a batch."""
    epoch_losses, trace = [], []
    n = y.size
    for _ in range(epochs):
        if trace_spec is not None:
            trace.append(nn.loss_terms(nn.predict(params, x), y, trace_spec))
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = nn.compute_gradients(params, x[idx], y[idx], make_spec(idx), rng=rng)
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            batch_losses.append(loss * idx.size)
            try:
                params = nn.sgd_step(params, grads, lr)
            except nn.ShapeError:
                raise
            except ValueError as exc:
                raise FloatingPointError(f"parameters diverged: {exc}") from None
        epoch_losses.append(float(sum(batch_losses) / n))
    return params, epoch_losses, trace


def local_train(
    params: ModelParameters,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int = 32,
) -> tuple[ModelParameters, ClientReport]:
    """Mini-batch SGD on BCE, then score the result on the same fold."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot train on an empty fold")
    spec = LossSpec()
    params, losses, _ = _train(params, x, y, epochs, lr, batch_size, rng, lambda idx: spec)
    acc, loss = evaluate_arrays(params, x, y)
    return params, ClientReport(acc, loss, int(y.size) * epochs, losses)


def mutual_update(
    params: ModelParameters,
    x: np.ndarray,
    y: np.ndarray,
    peer_predictions: Sequence[np.ndarray],
    spec: StrategySpec,
    rng: np.random.Generator,
) -> tuple[ModelParameters, list[tuple[float, float, float]]]:
    """SGD on BCE + kl_coefficient * average KL to fixed peer predictions.

    The trace holds ``(total, bce, kld)`` over the whole common set at the
    start of each epoch, with dropout off.
    """
    if len(peer_predictions) == 0:
        raise ValueError("mutual update needs at least one peer")
    y = np.asarray(y)
    peers = [np.asarray(q, dtype=float) for q in peer_predictions]
    for j, q in enumerate(peers):
        if q.shape != y.shape:
            raise nn.ShapeError(f"peer {j} sent {q.size} predictions for {y.size} common rows")

    def make_spec(idx):
        return LossSpec("bce+kld", [q[idx] for q in peers],
                        kl_direction=spec.kl_direction, kl_coefficient=spec.kl_coefficient)

    full = LossSpec("bce+kld", peers, kl_direction=spec.kl_direction,
                    kl_coefficient=spec.kl_coefficient)
    params, _, trace = _train(
        params, x, y, spec.mutual_epochs, spec.lr, spec.batch_size, rng, make_spec, full
    )
    return params, trace


def evaluate_arrays(params: ModelParameters, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Accuracy (ties at p = 0.5 go to class 1) and BCE, dropout off."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    p = nn.predict(params, x)
    acc = float(np.mean((p >= 0.5).astype(int) == y))
    return acc, nn.bce_loss(p, y)
