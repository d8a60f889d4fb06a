"""Exact t-SNE projection to 2-D and silhouette scoring of the projected clusters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mlp import NetworkParams, forward_batch

log = logging.getLogger(__name__)


STEP_CAP = 1.0


class EmbeddingError(ValueError):
    pass


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iters: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    min_gain: float = 0.01
    affinity: str = "perplexity"  # or "constant": one global Gaussian, no per-point bandwidth
    seed: int = 0


@dataclass
class Embedding2D:
    points: np.ndarray
    labels: np.ndarray
    split: list
    final_kl: float
    initial_kl: float = float("nan")

    def mask(self, split: str) -> np.ndarray:
        return np.array([s == split for s in self.split], dtype=bool)

    def to_csv(self, path) -> None:
        lines = ["x,y,label,split"]
        for (x, y), lab, sp in zip(self.points, self.labels, self.split):
            lines.append(f"{x:.17g},{y:.17g},{int(lab)},{sp}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def extract_last_hidden(params: NetworkParams, data) -> np.ndarray:
    """Last-hidden-layer ReLU activations for every row (or every sample of a Dataset)."""
    X = data.X if hasattr(data, "samples") else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dims[0]:
        raise EmbeddingError(f"data must have {params.dims[0]} columns")
    if params.n_hidden_layers < 1:
        raise EmbeddingError("network has no hidden layer")
    if X.shape[0] == 0:
        return np.zeros((0, params.dims[-2]))
    _, acts = forward_batch(params, X)
    return acts[-1]


def squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200) -> np.ndarray:
    """Row-stochastic p_{j|i} with each row's entropy matched to log(perplexity).

    Bisection on the precision ``beta`` runs for all rows at once.
    """
    N = D.shape[0]
    target = np.log(perplexity)
    beta = np.ones(N)
    lo = np.full(N, 0.0)
    hi = np.full(N, np.inf)
    off = ~np.eye(N, dtype=bool)
    Doff = D[off].reshape(N, N - 1)
    # shift by the nearest non-self distance so exp() never underflows to all-zero
    Dshift = Doff - Doff.min(axis=1, keepdims=True)
    scale = np.median(Doff[Doff > 0]) if np.any(Doff > 0) else 1.0
    beta /= scale
    done = np.zeros(N, dtype=bool)
    for _ in range(max_iter):
        W = np.exp(-Dshift * beta[:, None])
        sumW = W.sum(axis=1)
        H = np.log(sumW) + beta * (Dshift * W).sum(axis=1) / sumW
        diff = H - target
        done = np.abs(diff) < tol
        if done.all():
            break
        up = diff > 0  # entropy too high: sharpen
        lo = np.where(up & ~done, beta, lo)
        hi = np.where(~up & ~done, beta, hi)
        beta = np.where(
            done, beta,
            np.where(np.isinf(hi), beta * 2.0, (lo + hi) / 2.0),
        )
    if not done.all():
        bad = int(np.flatnonzero(~done)[0])
        raise EmbeddingError(
            f"perplexity calibration failed for point {bad} (entropy off by {diff[bad]:.3g})"
        )
    P = np.zeros((N, N))
    P[off] = (W / sumW[:, None]).ravel()
    return P


def joint_probabilities(X, perplexity: float = 30.0, affinity: str = "perplexity") -> np.ndarray:
    """Symmetric high-dimensional affinities ``p_ij`` summing to 1 with zero diagonal."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    D = squared_distances(X)
    if not np.any(D > 0):
        raise EmbeddingError("all points coincide; pairwise distances are zero")
    if affinity == "perplexity":
        if not 1.0 <= perplexity < N:
            raise EmbeddingError(f"perplexity must lie in [1, N) with N={N}")
        Pc = _conditional_affinities(D, perplexity)
        P = (Pc + Pc.T) / (2.0 * N)
    elif affinity == "constant":
        logits = -D.copy()
        np.fill_diagonal(logits, -np.inf)
        logits -= logits.max()
        P = np.exp(logits)
        P /= P.sum()
    else:
        raise EmbeddingError(f"unknown affinity {affinity!r}")
    return P


def student_t_affinities(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (q_ij, unnormalised kernel (1 + |y_i - y_j|^2)^-1 with zero diagonal)."""
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def tsne(data, perplexity: float = 30.0, iters: int = 1000, seed: int = 0, *,
         labels=None, split=None, config: TsneConfig | None = None) -> Embedding2D:
    """Embed the rows of ``data`` in 2-D by minimising KL(P || Q).

    Labels and split tags are only carried through to the result; they never
    influence the coordinates.
    """
    cfg = config or TsneConfig(perplexity=perplexity, iters=iters, seed=seed)
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise EmbeddingError("t-SNE needs a 2-D array with at least 4 rows")
    N = X.shape[0]
    P = joint_probabilities(X, cfg.perplexity, cfg.affinity)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)
    P /= P.sum()

    # The exaggerated pull between close neighbours is about lr * 4 * exag * p_ij
    # per step; once that is O(1) the iterates oscillate and blow up. Only tiny
    # inputs reach the cap, where single affinities are large.
    lr = min(cfg.learning_rate, STEP_CAP / (max(cfg.exaggeration, 1.0) * P.max()))
    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, 1e-4, size=(N, 2))
    initial_kl = kl_divergence(P, student_t_affinities(Y)[0])
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(cfg.iters):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        Q, num = student_t_affinities(Y)
        W = (exag * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        velocity = mom * velocity - lr * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        if (it + 1) % 250 == 0 and log.isEnabledFor(logging.DEBUG):
            log.debug("t-SNE iteration %d KL %.5f", it + 1, kl_divergence(P, Q))
    final_kl = kl_divergence(P, student_t_affinities(Y)[0])
    if labels is None:
        labels = np.zeros(N, dtype=np.int64)
    if split is None:
        split = ["train"] * N
    return Embedding2D(Y, np.asarray(labels), list(split), final_kl, initial_kl)


def silhouette_values(points, labels) -> np.ndarray:
    """Per-point silhouette ``(b - a) / max(a, b)`` with Euclidean distances.

    ``a`` is the mean distance to the rest of the point's own cluster and ``b``
    the smallest mean distance to another cluster. Singleton clusters and
    ``a == b == 0`` score 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise EmbeddingError("silhouette needs at least two clusters")
    dist = np.sqrt(squared_distances(pts))
    onehot = labels[:, None] == classes[None, :]
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot  # (N, C): total distance to each cluster
    own = np.argmax(onehot, axis=1)
    N = pts.shape[0]
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(N), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(N), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size == 1] = 0.0
    return s


def silhouette(points, labels, mask=None) -> float:
    """Mean silhouette over the selected points, scored among themselves only."""
    points = np.asarray(points)
    labels = np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        points, labels = points[mask], labels[mask]
    return float(np.mean(silhouette_values(points, labels)))
