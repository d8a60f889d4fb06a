"""Fully connected ReLU network with a softmax output layer.

Class indices on the public surface are 1-based (location ``p_m`` is class
``m``); arrays are indexed from 0 internally.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT = "mlp-v1"
DEFAULT_HIDDEN = (300, 280, 260)


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(eq=False)
class NetworkParams:
    """Weights ``W[l]`` have shape ``(dims[l+1], dims[l])``; the last layer is the output."""

    dims: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2:
            raise ModelError("dims needs at least an input and an output size")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ModelError("need one weight matrix and bias vector per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ModelError(
                    f"layer {l + 1}: expected W {(self.dims[l + 1], self.dims[l])}, "
                    f"b ({self.dims[l + 1]},); got {W.shape}, {b.shape}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ModelError(f"layer {l + 1}: non-finite parameters")

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.dims) - 2

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zero_biases(self) -> "NetworkParams":
        return NetworkParams(self.dims, [w.copy() for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.dims == other.dims and all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass.

    ``z[l]`` and ``a[l]`` are layer ``l + 1`` in 1-based layer numbering;
    ``z[-1]`` holds the pre-softmax output scores and ``a`` has one entry per
    hidden layer.
    """

    x: np.ndarray
    z: list
    a: list
    y: np.ndarray

    def layer_input(self, l: int) -> np.ndarray:
        """Input feeding 1-based layer ``l`` (``x`` for the first layer)."""
        return self.x if l == 1 else self.a[l - 2]


@dataclass
class TrainConfig:
    backprop_iters: int = 1500
    pretrain_iters: int = 30
    learning_rate: float = 0.01
    pretrain_learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    init: str = "scaled"

    def __post_init__(self):
        if self.backprop_iters < 0 or self.pretrain_iters < 0:
            raise ModelError("iteration counts must be >= 0")
        if self.learning_rate < 0 or self.pretrain_learning_rate < 0:
            raise ModelError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.init not in ("scaled", "gaussian_unit"):
            raise ModelError(f"unknown init {self.init!r}")


def init_random(dims, seed: int = 0, init: str = "scaled") -> NetworkParams:
    """Draw weights from N(0, 1) (``gaussian_unit``) or N(0, 2/fan_in) (``scaled``).

    Biases start at zero for ``scaled`` and are drawn like the weights for
    ``gaussian_unit``, which is meant for inspecting an untrained network.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ModelError(f"invalid dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if init == "gaussian_unit":
            weights.append(rng.standard_normal((fan_out, fan_in)))
            biases.append(rng.standard_normal(fan_out))
        elif init == "scaled":
            weights.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        else:
            raise ModelError(f"unknown init {init!r}")
    return NetworkParams(dims, weights, biases)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: NetworkParams, x: np.ndarray):
    if x.shape[-1] != params.dims[0]:
        raise ModelError(f"input has {x.shape[-1]} features, network expects {params.dims[0]}")
    if not np.all(np.isfinite(x)):
        raise ModelError("input contains non-finite values")


def forward(params: NetworkParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError("forward takes a single input vector; use forward_batch for matrices")
    _check_input(params, x)
    zs, acts = [], []
    h = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ h + b
        zs.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    return ForwardTrace(x=x, z=zs, a=acts, y=softmax(zs[-1]))


def forward_batch(params: NetworkParams, X) -> tuple[list, list]:
    """Row-wise forward pass; returns (pre-activations, hidden activations)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_input(params, X)
    zs, acts = [], []
    h = X
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        zs.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    return zs, acts


def predict(params: NetworkParams, x) -> int:
    """1-based argmax of the softmax output; ties go to the smallest index."""
    return int(np.argmax(forward(params, x).y)) + 1


def predict_batch(params: NetworkParams, X) -> np.ndarray:
    zs, _ = forward_batch(params, X)
    return np.argmax(zs[-1], axis=1) + 1


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean of ``-log softmax(logits)[target]`` for 0-based targets."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(targets)), targets]))


def gradients(params: NetworkParams, X, targets) -> tuple[float, list, list]:
    """Loss and parameter gradients of the mean cross-entropy over a batch.

    ``targets`` are 0-based class indices.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.asarray(targets)
    zs, acts = forward_batch(params, X)
    n = X.shape[0]
    loss = cross_entropy(zs[-1], targets)
    delta = softmax(zs[-1])
    delta[np.arange(n), targets] -= 1.0
    delta /= n
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in range(len(params.weights) - 1, -1, -1):
        inp = X if l == 0 else acts[l - 1]
        gW[l] = delta.T @ inp
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (zs[l - 1] > 0)
    return loss, gW, gb


def _pretrain(params: NetworkParams, X: np.ndarray, cfg: TrainConfig, rng) -> None:
    """Greedy layer-wise tied-weight autoencoders on the hidden layers, in place.

    Each hidden layer learns to reconstruct its own input through
    ``W.T @ relu(W h + b) + c`` under a per-feature mean squared error.
    """
    h = X
    n = X.shape[0]
    for l in range(params.n_hidden_layers):
        W, b = params.weights[l], params.biases[l]
        c = np.zeros(W.shape[1])
        lr = cfg.pretrain_learning_rate
        for epoch in range(cfg.pretrain_iters):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                batch = h[order[start:start + cfg.batch_size]]
                bs = batch.shape[0]
                z = batch @ W.T + b
                code = np.maximum(z, 0.0)
                recon = code @ W + c
                err = (recon - batch) / (bs * W.shape[1])
                dcode = (err @ W.T) * (z > 0)
                gW = code.T @ err + dcode.T @ batch
                W -= lr * gW
                b -= lr * dcode.sum(axis=0)
                c -= lr * err.sum(axis=0)
            if not np.all(np.isfinite(W)):
                raise TrainingDiverged(f"pretraining layer {l + 1} diverged at epoch {epoch + 1}")
        h = np.maximum(h @ W.T + b, 0.0)


def train(params: NetworkParams, train_set, config: TrainConfig | None = None):
    """Minibatch SGD on mean cross-entropy, optionally after autoencoder pretraining.

    One iteration is a full pass over the shuffled training set. Returns the
    trained copy of ``params`` and the full-training-set loss after every
    iteration.
    """
    cfg = config or TrainConfig()
    X = train_set.X
    labels = train_set.labels
    if X.shape[0] == 0:
        raise ModelError("empty training set")
    if X.shape[1] != params.dims[0]:
        raise ModelError(f"dataset has K={X.shape[1]}, network expects {params.dims[0]}")
    if labels.min() < 1 or labels.max() > params.n_classes:
        raise ModelError(f"labels must lie in [1, {params.n_classes}]")
    targets = labels - 1
    p = params.copy()
    rng = np.random.default_rng(cfg.seed)
    if cfg.pretrain_iters and cfg.pretrain_learning_rate > 0 and p.n_hidden_layers:
        _pretrain(p, X, cfg, rng)
    history = []
    # divergence surfaces through the loss check in _backprop
    with np.errstate(over="ignore", invalid="ignore"):
        _backprop(p, X, targets, cfg, rng, history)
    return p, history


def _backprop(p, X, targets, cfg, rng, history) -> None:
    n = X.shape[0]
    for epoch in range(cfg.backprop_iters):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gW, gb = gradients(p, X[idx], targets[idx])
            for l in range(len(p.weights)):
                p.weights[l] -= cfg.learning_rate * gW[l]
                p.biases[l] -= cfg.learning_rate * gb[l]
        zs, _ = forward_batch(p, X)
        loss = cross_entropy(zs[-1], targets)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"loss became non-finite at iteration {epoch + 1}; lower the learning rate"
            )
        history.append(loss)
        if (epoch + 1) % 100 == 0:
            log.debug("iteration %d loss %.6g", epoch + 1, loss)


def gradient_check(params: NetworkParams, x, label: int, epsilon: float = 1e-5) -> float:
    """Largest relative gap between backprop and central differences.

    The relative error of one parameter is ``|g - g_fd| / max(|g| + |g_fd|, 1e-12)``.
    ``label`` is 1-based.
    """
    if epsilon <= 0:
        raise ModelError("epsilon must be positive")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.array([label - 1])
    _, gW, gb = gradients(params, X, t)
    worst = 0.0
    p = params.copy()
    for analytic, arrays in ((gW, p.weights), (gb, p.biases)):
        for g, arr in zip(analytic, arrays):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = cross_entropy(forward_batch(p, X)[0][-1], t)
                flat[i] = orig - epsilon
                down = cross_entropy(forward_batch(p, X)[0][-1], t)
                flat[i] = orig
                fd = (up - down) / (2 * epsilon)
                err = abs(gflat[i] - fd) / max(abs(gflat[i]) + abs(fd), 1e-12)
                worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------- persistence


def _num_list(values) -> str:
    return "[" + ",".join(format(float(v), ".17g") for v in np.ravel(values)) + "]"


def save_model(params: NetworkParams, path) -> None:
    """Write a ``mlp-v1`` JSON document with row-major weights at 17 significant digits."""
    parts = [
        "{",
        f'  "format": "{FORMAT}",',
        f'  "dims": [{",".join(str(d) for d in params.dims)}],',
        '  "weights": [',
        ",\n".join("    " + _num_list(w) for w in params.weights),
        "  ],",
        '  "biases": [',
        ",\n".join("    " + _num_list(b) for b in params.biases),
        "  ]",
        "}",
    ]
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def load_model(path) -> NetworkParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelError(f"{path}: not an {FORMAT} document")
    try:
        dims = [int(d) for d in doc["dims"]]
        weights = [
            np.array(w, dtype=np.float64).reshape(dims[l + 1], dims[l])
            for l, w in enumerate(doc["weights"])
        ]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelError(f"{path}: malformed model: {exc}") from exc
    return NetworkParams(dims, weights, biases)
