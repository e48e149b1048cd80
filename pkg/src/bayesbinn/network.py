"""Bias-free MLP with tanh/relu activations, batch norm, and inverted dropout.

Weights for the whole network live in one flat float64 vector, laid out as the
row-major (n_in, n_out) matrices of the fully connected layers in order. The
optimizers only ever see this flat vector; `forward` and `backward` translate
between it and per-layer matrices and never mutate their inputs.

Batch norm has no learned gain or bias: it only standardizes using batch
statistics in train mode and exponentially averaged running statistics in eval
mode. The running statistics are owned by the training loop (single writer)
and passed in as `BnState`. Softmax is part of the cross-entropy loss and of
prediction, not a layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, StaleCacheError
from .linalg import Rng, as_matrix, softmax_rows

__all__ = [
    "Activation",
    "BatchNorm",
    "BnState",
    "Dropout",
    "ForwardCache",
    "FullyConnected",
    "NetworkSpec",
    "backward",
    "cross_entropy",
    "forward",
    "init_bn_state",
    "loss_at",
    "mse",
    "pack_weights",
    "unpack_weights",
]


@dataclass(frozen=True)
class FullyConnected:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Activation:
    fn: str  # "tanh" or "relu"


@dataclass(frozen=True)
class BatchNorm:
    eps: float = 1e-5
    momentum: float = 0.1


@dataclass(frozen=True)
class Dropout:
    p: float


Layer = FullyConnected | Activation | BatchNorm | Dropout


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus the loss attached to the network output."""

    layers: tuple
    loss: str  # "cross_entropy" or "mse"

    def __post_init__(self):
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        fcs = [l for l in self.layers if isinstance(l, FullyConnected)]
        if not fcs:
            raise ValueError("network needs at least one fully connected layer")
        for l in self.layers:
            if isinstance(l, Activation) and l.fn not in ("tanh", "relu"):
                raise ValueError(f"unknown activation {l.fn!r}")
            if isinstance(l, Dropout) and not 0.0 <= l.p < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {l.p}")
            if isinstance(l, FullyConnected) and (l.n_in < 1 or l.n_out < 1):
                raise ValueError(f"bad fully connected dims ({l.n_in}, {l.n_out})")
        width = fcs[0].n_in
        for l in self.layers:
            if isinstance(l, FullyConnected):
                if l.n_in != width:
                    raise ShapeError(
                        f"layer fc({l.n_in},{l.n_out}) does not accept width {width}"
                    )
                width = l.n_out

    @property
    def in_dim(self) -> int:
        return next(l for l in self.layers if isinstance(l, FullyConnected)).n_in

    @property
    def out_dim(self) -> int:
        width = self.in_dim
        for l in self.layers:
            if isinstance(l, FullyConnected):
                width = l.n_out
        return width

    @property
    def weight_count(self) -> int:
        return sum(
            l.n_in * l.n_out for l in self.layers if isinstance(l, FullyConnected)
        )

    def widths(self) -> list[int]:
        """Feature width flowing *into* each layer, aligned with `layers`."""
        out = []
        width = self.in_dim
        for l in self.layers:
            out.append(width)
            if isinstance(l, FullyConnected):
                width = l.n_out
        return out


def unpack_weights(spec: NetworkSpec, w) -> list[np.ndarray]:
    """Split the flat weight vector into per-FC (n_in, n_out) matrices (copies)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.weight_count:
        raise ShapeError(
            f"weights must be a flat vector of length {spec.weight_count}, "
            f"got shape {w.shape}"
        )
    mats = []
    off = 0
    for l in spec.layers:
        if isinstance(l, FullyConnected):
            size = l.n_in * l.n_out
            mats.append(w[off : off + size].reshape(l.n_in, l.n_out).copy())
            off += size
    return mats


def pack_weights(mats) -> np.ndarray:
    """Inverse of `unpack_weights`: concatenate row-major flattened matrices."""
    return np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in mats])


@dataclass
class BnState:
    """Running statistics per batch-norm layer, keyed by layer index."""

    mean: dict = field(default_factory=dict)
    var: dict = field(default_factory=dict)

    def copy(self) -> "BnState":
        return BnState(
            {k: v.copy() for k, v in self.mean.items()},
            {k: v.copy() for k, v in self.var.items()},
        )


def init_bn_state(spec: NetworkSpec) -> BnState:
    state = BnState()
    widths = spec.widths()
    for i, l in enumerate(spec.layers):
        if isinstance(l, BatchNorm):
            state.mean[i] = np.zeros(widths[i])
            state.var[i] = np.ones(widths[i])
    return state


@dataclass
class ForwardCache:
    """Everything `backward` needs from the matching `forward` call."""

    spec: NetworkSpec
    mode: str
    batch_size: int
    inputs: list  # input array per layer
    extras: list  # per-layer saved values (masks, bn internals, weights)
    output: np.ndarray
    consumed: bool = False


def forward(
    spec: NetworkSpec,
    w,
    x,
    mode: str = "train",
    rng: Rng | None = None,
    bn: BnState | None = None,
):
    """Run the network; returns (output, cache).

    Train mode uses batch statistics for batch norm (updating the running
    stats in `bn` in place) and draws fresh dropout masks from `rng`. Eval
    mode uses running statistics and skips dropout. Inputs and weights are
    never mutated.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_matrix(x, "x")
    if x.shape[1] != spec.in_dim:
        raise ShapeError(f"x has {x.shape[1]} features, network expects {spec.in_dim}")
    mats = unpack_weights(spec, w)
    has_bn = any(isinstance(l, BatchNorm) for l in spec.layers)
    if has_bn and bn is None:
        raise ValueError("network has batch norm layers: a BnState is required")
    if mode == "train" and rng is None and any(
        isinstance(l, Dropout) and l.p > 0 for l in spec.layers
    ):
        raise ValueError("train-mode dropout needs an rng")

    inputs, extras = [], []
    fc_idx = 0
    out = x
    for i, l in enumerate(spec.layers):
        inputs.append(out)
        if isinstance(l, FullyConnected):
            wm = mats[fc_idx]
            out = out @ wm
            extras.append(wm)
            fc_idx += 1
        elif isinstance(l, Activation):
            out = np.tanh(out) if l.fn == "tanh" else np.maximum(out, 0.0)
            extras.append(out)
        elif isinstance(l, Dropout):
            if mode == "train" and l.p > 0.0:
                u = rng.uniform_open(out.size).reshape(out.shape)
                mask = (u >= l.p) / (1.0 - l.p)
                out = out * mask
                extras.append(mask)
            else:
                extras.append(None)
        elif isinstance(l, BatchNorm):
            if mode == "train":
                m = out.shape[0]
                mu = out.mean(axis=0)
                var = out.var(axis=0)
                inv = 1.0 / np.sqrt(var + l.eps)
                xhat = (out - mu) * inv
                run_var = var * (m / (m - 1.0)) if m > 1 else var
                bn.mean[i] = (1.0 - l.momentum) * bn.mean[i] + l.momentum * mu
                bn.var[i] = (1.0 - l.momentum) * bn.var[i] + l.momentum * run_var
                out = xhat
                extras.append((xhat, inv))
            else:
                inv = 1.0 / np.sqrt(bn.var[i] + l.eps)
                out = (out - bn.mean[i]) * inv
                extras.append((None, inv))
        else:
            raise TypeError(f"unknown layer type {type(l).__name__}")
    return out, ForwardCache(spec, mode, x.shape[0], inputs, extras, out)


def cross_entropy(logits, labels) -> float:
    """Mean cross-entropy of integer labels under softmax(logits), natural log."""
    z = as_matrix(logits, "logits")
    labels = _check_labels(labels, z)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + z.max(axis=1)
    return float((lse - z[np.arange(z.shape[0]), labels]).mean())


def mse(outputs, targets) -> float:
    """Mean squared error over every output entry."""
    o = as_matrix(outputs, "outputs")
    t = as_matrix(targets, "targets")
    if o.shape != t.shape:
        raise ShapeError(f"outputs {o.shape} and targets {t.shape} differ")
    return float(((o - t) ** 2).mean())


def _check_labels(labels, logits) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"labels must be 1-D with {logits.shape[0]} entries, got {labels.shape}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if (labels < 0).any() or (labels >= logits.shape[1]).any():
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return labels.astype(np.int64)


def _loss_and_grad(spec: NetworkSpec, out, targets):
    if spec.loss == "cross_entropy":
        labels = _check_labels(targets, out)
        probs = softmax_rows(out)
        loss = cross_entropy(out, labels)
        grad = probs.copy()
        grad[np.arange(out.shape[0]), labels] -= 1.0
        return loss, grad / out.shape[0]
    t = as_matrix(targets, "targets")
    return mse(out, t), 2.0 * (out - t) / out.size


def backward(spec: NetworkSpec, cache: ForwardCache, targets):
    """Loss and its gradient w.r.t. the flat weights, via reverse accumulation.

    Train-mode batch norm is differentiated through the batch statistics.
    The cache is single-use and must come from a forward pass over the same
    spec and batch.
    """
    if cache.spec is not spec and cache.spec != spec:
        raise StaleCacheError("cache was built for a different network spec")
    if cache.consumed:
        raise StaleCacheError("cache has already been consumed by a backward pass")
    n_targets = np.asarray(targets).shape[0]
    if n_targets != cache.batch_size:
        raise StaleCacheError(
            f"cache batch size {cache.batch_size} != targets batch {n_targets}"
        )
    cache.consumed = True

    loss, d = _loss_and_grad(spec, cache.output, targets)
    grads = []
    for i in range(len(spec.layers) - 1, -1, -1):
        l = spec.layers[i]
        x_in = cache.inputs[i]
        extra = cache.extras[i]
        if isinstance(l, FullyConnected):
            wm = extra
            grads.append(x_in.T @ d)
            d = d @ wm.T
        elif isinstance(l, Activation):
            if l.fn == "tanh":
                d = d * (1.0 - extra**2)
            else:
                d = d * (x_in > 0.0)
        elif isinstance(l, Dropout):
            if extra is not None:
                d = d * extra
        elif isinstance(l, BatchNorm):
            xhat, inv = extra
            if cache.mode == "train":
                m = cache.batch_size
                d = (inv / m) * (
                    m * d - d.sum(axis=0) - xhat * (d * xhat).sum(axis=0)
                )
            else:
                d = d * inv
    grads.reverse()
    return loss, pack_weights(grads)


def loss_at(
    spec: NetworkSpec,
    w,
    x,
    targets,
    mode: str = "train",
    rng: Rng | None = None,
    bn: BnState | None = None,
) -> float:
    """Loss of a forward pass without touching backward (finite-difference probes)."""
    bn_local = bn.copy() if bn is not None else None
    out, _ = forward(spec, w, x, mode=mode, rng=rng, bn=bn_local)
    if spec.loss == "cross_entropy":
        return cross_entropy(out, targets)
    return mse(out, targets)
