"""Dense numeric primitives for small softmax classifiers.

A model is a flat float64 vector plus a :class:`ModelSpec` describing the
layer shapes. Layout of the flat vector is, for every layer in order,
the weight matrix of shape ``(fan_in, fan_out)`` in row-major order followed
by the bias vector of length ``fan_out``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


def param_count(spec: ModelSpec) -> int:
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in spec.layer_shapes)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable flat parameter vector tied to a spec."""

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size != param_count(self.spec):
            raise ValueError(
                f"expected {param_count(self.spec)} parameters, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("model parameters contain NaN or Inf")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(self.spec, values)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only (W, b) views per layer."""
        out = []
        offset = 0
        for fan_in, fan_out in self.spec.layer_shapes:
            w = self.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.values[offset : offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out


@dataclass(frozen=True, eq=False)
class DatasetShard:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if x.ndim != 2:
            raise ValueError(f"features must be a 2-d matrix, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(
                f"labels must be a vector of length {x.shape[0]}, got shape {y.shape}"
            )
        if x.shape[0] < 1:
            raise ValueError("a shard needs at least one sample")
        if y.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise ValueError("labels must be non-negative")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray) -> "DatasetShard":
        return DatasetShard(self.features[index], self.labels[index])


def _check_compatible(params: ModelParams, shard: DatasetShard) -> None:
    spec = params.spec
    if shard.dim != spec.input_dim:
        raise ValueError(
            f"dimension mismatch: shard has {shard.dim} features, model expects {spec.input_dim}"
        )
    if shard.labels.max() >= spec.num_classes:
        raise ValueError(
            f"label {int(shard.labels.max())} out of range for {spec.num_classes} classes"
        )


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-a, a, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(spec, np.concatenate(chunks))


def zeros_params(spec: ModelSpec) -> ModelParams:
    return ModelParams(spec, np.zeros(param_count(spec)))


def _forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Return logits, layer inputs and hidden pre-activations."""
    layers = params.layers()
    inputs = []
    pre = []
    a = x
    for w, b in layers[:-1]:
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    w, b = layers[-1]
    inputs.append(a)
    return a @ w + b, inputs, pre


def logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return _forward(params, np.asarray(features, dtype=np.float64))[0]


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits(params, features), axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(params: ModelParams, shard: DatasetShard) -> float:
    """Mean softmax cross-entropy over the shard."""
    _check_compatible(params, shard)
    logp = _log_softmax(logits(params, shard.features))
    n = len(shard)
    return float(-logp[np.arange(n), shard.labels].mean())


def gradient(params: ModelParams, shard: DatasetShard) -> np.ndarray:
    """Analytic gradient of :func:`forward_loss`, as a flat vector."""
    _check_compatible(params, shard)
    n = len(shard)
    z, inputs, pre = _forward(params, shard.features)
    delta = np.exp(_log_softmax(z))
    delta[np.arange(n), shard.labels] -= 1.0
    delta /= n

    layers = params.layers()
    grads: list[np.ndarray] = []
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        grads.append(delta.sum(axis=0))
        grads.append((inputs[idx].T @ delta).reshape(-1))
        if idx > 0:
            delta = (delta @ w.T) * (pre[idx - 1] > 0.0)
    return np.concatenate(grads[::-1])


def finite_diff_gradient(
    params: ModelParams,
    shard: DatasetShard | None,
    step: float = 1e-5,
    loss_fn: Callable[[ModelParams, DatasetShard | None], float] | None = None,
) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time.

    ``loss_fn`` defaults to :func:`forward_loss`; any callable taking
    ``(params, shard)`` may be substituted.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    fn = forward_loss if loss_fn is None else loss_fn
    base = np.array(params.values)
    out = np.empty_like(base)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        f_plus = fn(ModelParams(params.spec, base), shard)
        base[i] = orig - step
        f_minus = fn(ModelParams(params.spec, base), shard)
        base[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return out


def sgd_step(params: ModelParams, direction: np.ndarray, eta: float) -> ModelParams:
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != params.values.shape:
        raise ValueError(
            f"direction length {direction.size} does not match {params.values.size} parameters"
        )
    return ModelParams(params.spec, params.values - eta * direction)


def accuracy(params: ModelParams, shard: DatasetShard) -> float:
    return num_correct(params, shard) / len(shard)


def num_correct(params: ModelParams, shard: DatasetShard) -> int:
    _check_compatible(params, shard)
    return int(np.count_nonzero(predict(params, shard.features) == shard.labels))


def iter_batches(
    n: int, batch_size: int | None, rng: np.random.Generator | None
) -> Iterator[np.ndarray | slice]:
    """Yield index sets for one epoch.

    ``batch_size=None`` (or >= n) yields the full batch as a slice, in order.
    Otherwise the epoch is a seeded permutation cut into consecutive batches.
    """
    if batch_size is None or batch_size >= n:
        yield slice(None)
        return
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if rng is None:
        raise ValueError("mini-batching needs a random generator")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def weighted_mean(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted mean accumulated in the given order.

    Uses the running-mean recurrence ``m += (w / W) * (v - m)`` so that
    averaging identical vectors returns them bit-exactly.
    """
    if len(vectors) == 0:
        raise ValueError("cannot average an empty set of vectors")
    if len(vectors) != len(weights):
        raise ValueError("vectors and weights differ in length")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    acc = np.array(vectors[0], dtype=np.float64, copy=True)
    seen = float(weights[0])
    for v, w in zip(vectors[1:], weights[1:]):
        seen += float(w)
        acc += (float(w) / seen) * (np.asarray(v, dtype=np.float64) - acc)
    return acc
