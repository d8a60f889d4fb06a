"""Layer-wise relevance propagation for the ReLU networks in :mod:`csix.mlp`.

Relevance of the pre-softmax score of class ``m`` is pushed back layer by
layer in proportion to each input's contribution ``a_i * w_ki`` to the
neuron's pre-activation. Denominators get ``eps * sign(.)`` added (with
``sign(0) = +1``) so dead or cancelling neurons never divide by zero.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mlp import ForwardTrace, NetworkParams, forward

log = logging.getLogger(__name__)

EPSILON = 1e-9


class RelevanceError(ValueError):
    pass


def _stabilize(denom: np.ndarray, eps: float) -> np.ndarray:
    return denom + eps * np.where(denom >= 0, 1.0, -1.0)


def _redistribute(a: np.ndarray, W: np.ndarray, b: np.ndarray, R: np.ndarray, eps: float) -> np.ndarray:
    contrib = W * a  # (n_out, n_in): a_i * w_ki
    denom = _stabilize(contrib.sum(axis=1) + b, eps)
    return (contrib * (R / denom)[:, None]).sum(axis=0)


def relevance_last_hidden(trace: ForwardTrace, params: NetworkParams, m: int, eps: float = EPSILON) -> np.ndarray:
    """Split the output score ``z_m`` over the last hidden layer (``m`` is 1-based)."""
    if not 1 <= m <= params.n_classes:
        raise RelevanceError(f"class {m} outside [1, {params.n_classes}]")
    W, b = params.weights[-1], params.biases[-1]
    a = trace.layer_input(len(params.weights))
    if a.shape[0] != W.shape[1]:
        raise RelevanceError("trace does not match network dimensions")
    row = W[m - 1] * a
    z_m = trace.z[-1][m - 1]
    return row / _stabilize(row.sum() + b[m - 1], eps) * z_m


def relevance_backward(trace: ForwardTrace, params: NetworkParams, R: np.ndarray, l: int, eps: float = EPSILON) -> np.ndarray:
    """Map relevance of hidden layer ``l`` onto hidden layer ``l - 1`` (``2 <= l <= L``)."""
    L = params.n_hidden_layers
    if not 2 <= l <= L:
        raise RelevanceError(f"layer index {l} outside [2, {L}]")
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (params.dims[l],):
        raise RelevanceError(f"relevance for layer {l} must have length {params.dims[l]}")
    return _redistribute(trace.layer_input(l), params.weights[l - 1], params.biases[l - 1], R, eps)


def relevance_input(trace: ForwardTrace, params: NetworkParams, R1: np.ndarray, eps: float = EPSILON) -> np.ndarray:
    """Map first-hidden-layer relevance onto the input channels."""
    R1 = np.asarray(R1, dtype=np.float64)
    if R1.shape != (params.dims[1],):
        raise RelevanceError(f"first-layer relevance must have length {params.dims[1]}")
    return _redistribute(trace.x, params.weights[0], params.biases[0], R1, eps)


def normalize(h) -> np.ndarray:
    """Scale by the largest magnitude so the result lies in [-1, 1]; zeros stay zeros."""
    h = np.asarray(h, dtype=np.float64)
    peak = np.max(np.abs(h)) if h.size else 0.0
    if peak == 0:
        return np.zeros_like(h)
    return h / peak


@dataclass
class RelevanceMap:
    n: int
    m: int
    layers: list  # layers[0] is R^(1), layers[-1] is R^(L)
    h: np.ndarray
    h_prime: np.ndarray
    z_out: float

    def layer_sums(self) -> list[float]:
        return [float(r.sum()) for r in self.layers]

    def to_dict(self, S: int | None = None, A: int | None = None) -> dict:
        doc = {
            "n": self.n,
            "m": self.m,
            "z_out": float(self.z_out),
            "h": [float(v) for v in self.h],
            "h_prime": [float(v) for v in self.h_prime],
        }
        if S is not None and A is not None:
            doc["s_prime"] = [float(v) for v in subcarrier_scores(self.h_prime, S, A).values]
        return doc


def explain(params: NetworkParams, x, n: int, m: int, eps: float = EPSILON) -> RelevanceMap:
    """Relevance of every input channel for predicting class ``m`` from an input of class ``n``."""
    if params.n_hidden_layers < 1:
        raise RelevanceError("network needs at least one hidden layer")
    if not 1 <= n <= params.n_classes:
        raise RelevanceError(f"class {n} outside [1, {params.n_classes}]")
    trace = forward(params, x)
    L = params.n_hidden_layers
    R = relevance_last_hidden(trace, params, m, eps)
    layers = [R]
    for l in range(L, 1, -1):
        R = relevance_backward(trace, params, R, l, eps)
        layers.append(R)
    h = relevance_input(trace, params, R, eps)
    z_out = float(trace.z[-1][m - 1])
    if log.isEnabledFor(logging.DEBUG) and z_out != 0:
        log.debug("relevance conservation gap %.3g", (h.sum() - z_out) / abs(z_out))
    return RelevanceMap(n=n, m=m, layers=layers[::-1], h=h, h_prime=normalize(h), z_out=z_out)


def explain_batch(params: NetworkParams, X, n: int, m: int, eps: float = EPSILON) -> np.ndarray:
    """Normalized relevance ``h'`` for every row of ``X``; shape (N, K)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.array([explain(params, x, n, m, eps).h_prime for x in X]).reshape(X.shape)


@dataclass
class SubcarrierScores:
    values: np.ndarray
    n: int | None = None
    m: int | None = None


def subcarrier_scores(h_prime, S: int = 30, A: int = 4, n=None, m=None) -> SubcarrierScores:
    """Average the A antenna-pair channels that share each subcarrier."""
    h_prime = np.asarray(h_prime, dtype=np.float64)
    if h_prime.shape != (S * A,):
        raise RelevanceError(f"expected {S * A} channel scores, got {h_prime.shape}")
    return SubcarrierScores(h_prime.reshape(A, S).mean(axis=0), n, m)


def save_relevance(maps, path, S: int | None = None, A: int | None = None) -> None:
    maps = maps if isinstance(maps, (list, tuple)) else [maps]
    doc = [rm.to_dict(S, A) for rm in maps]
    Path(path).write_text(json.dumps(doc if len(doc) > 1 else doc[0], indent=1) + "\n", encoding="utf-8")
