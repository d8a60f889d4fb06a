"""Relevance-ordered channel nullification and modification experiments.

Channel and subcarrier indices are 1-based throughout, matching the CSV
header (``c001`` is channel 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ClassStats, Dataset
from .lrp import explain, subcarrier_scores
from .mlp import NetworkParams, predict_batch

KINDS = ("O1", "O2", "O3", "O4")
MODES = ("nullify", "modify")
GRANULARITIES = ("channel", "subcarrier")


class ExperimentError(ValueError):
    pass


@dataclass
class OrderingSequence:
    order: np.ndarray  # 1-based indices, manipulated first to last
    kind: str
    pair: tuple = (None, None)
    granularity: str = "channel"


def _sort_key(scores: np.ndarray, kind: str) -> np.ndarray:
    if kind == "O1":
        return -scores
    if kind == "O2":
        return scores
    if kind == "O3":
        return -np.abs(scores)
    if kind == "O4":
        return np.abs(scores)
    raise ExperimentError(f"unknown ordering kind {kind!r}; expected one of {KINDS}")


def ordering(scores, kind: str, pair=(None, None), granularity: str = "channel") -> OrderingSequence:
    """Permutation of ``1..len(scores)`` sorting the scores per ``kind``.

    O1 descending, O2 ascending, O3 descending magnitude, O4 ascending
    magnitude. Ties keep ascending index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ExperimentError("scores must be finite")
    idx = np.argsort(_sort_key(scores, kind), kind="stable")
    return OrderingSequence(idx + 1, kind, tuple(pair), granularity)


def g_null(x, r: int) -> np.ndarray:
    """Copy of ``x`` with channel ``r`` set to zero."""
    x = np.array(x, dtype=np.float64)
    if not 1 <= r <= x.shape[0]:
        raise ExperimentError(f"channel {r} outside [1, {x.shape[0]}]")
    x[r - 1] = 0.0
    return x


def g_mod(x, r: int, stats: ClassStats, n: int, m: int, h_r: float) -> np.ndarray:
    """Copy of ``x`` with channel ``r`` moved toward class ``m`` by a linear MMSE step.

    ``x'_r = max(0, mean_m + h_r * (std_m / std_n) * (x_r - mean_n))``.
    """
    x = np.array(x, dtype=np.float64)
    if not 1 <= r <= x.shape[0]:
        raise ExperimentError(f"channel {r} outside [1, {x.shape[0]}]")
    i = r - 1
    mu_n, mu_m = stats.mean[n - 1, i], stats.mean[m - 1, i]
    ratio = stats.std[m - 1, i] / stats.std[n - 1, i]
    x[i] = max(0.0, mu_m + h_r * ratio * (x[i] - mu_n))
    return x


@dataclass
class ExperimentCurve:
    mode: str
    pair: tuple
    kind: str
    granularity: str
    t: np.ndarray
    frac_true: np.ndarray
    frac_target: np.ndarray
    n_samples: int = 0

    @property
    def points(self):
        return list(zip(self.t.tolist(), self.frac_true.tolist(), self.frac_target.tolist()))

    def auc(self, series: str = "true") -> float:
        """Trapezoid area under a fraction series, normalised so a constant 1 scores 1."""
        y = self.frac_true if series == "true" else self.frac_target
        span = self.t[-1] - self.t[0]
        if span == 0:
            return float(y[0])
        return float(np.sum((y[1:] + y[:-1]) * np.diff(self.t)) / (2 * span))

    def to_csv(self, path) -> None:
        lines = ["t,frac_true,frac_target"]
        lines += [f"{t},{ft:.17g},{fm:.17g}" for t, ft, fm in self.points]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @property
    def label(self) -> str:
        n, m = self.pair
        return f"{self.kind} {self.mode} p{n}->p{m}"


def _groups(K: int, S: int, A: int, granularity: str):
    """Channel groups (0-based) touched by one manipulation step, indexed 0-based."""
    if granularity == "channel":
        return [np.array([k]) for k in range(K)]
    if granularity == "subcarrier":
        return [np.arange(i, S * A, S) for i in range(S)]
    raise ExperimentError(f"unknown granularity {granularity!r}")


def manipulation_path(x, h_prime, order, mode, *, S=30, A=4, granularity="channel",
                      stats: ClassStats | None = None, n=None, m=None) -> np.ndarray:
    """All intermediate inputs ``x^(0..T)`` of one cumulative manipulation run."""
    x = np.asarray(x, dtype=np.float64)
    groups = _groups(x.shape[0], S, A, granularity)
    out = np.empty((len(order) + 1, x.shape[0]))
    out[0] = x
    cur = x.copy()
    for t, r in enumerate(order, start=1):
        for c in groups[r - 1]:
            if mode == "nullify":
                cur = g_null(cur, c + 1)
            elif mode == "modify":
                cur = g_mod(cur, c + 1, stats, n, m, h_prime[c])
            else:
                raise ExperimentError(f"unknown mode {mode!r}")
        out[t] = cur
    return out


def progressive_curve(params: NetworkParams, test: Dataset, n: int, m: int, kind: str,
                      mode: str = "nullify", stats: ClassStats | None = None,
                      granularity: str = "channel", order_source: str = "sample") -> ExperimentCurve:
    """Classification fractions of class-``n`` test inputs under progressive manipulation.

    Every sample is explained for ``n -> m`` and manipulated along its own
    ordering (``order_source="class_mean"`` orders all samples by the mean
    relevance of the class instead). After step ``t`` the curve records the
    fraction still classified as ``n`` and the fraction classified as ``m``.
    """
    if mode not in MODES:
        raise ExperimentError(f"unknown mode {mode!r}")
    if granularity not in GRANULARITIES:
        raise ExperimentError(f"unknown granularity {granularity!r}")
    if kind not in KINDS:
        raise ExperimentError(f"unknown ordering kind {kind!r}")
    if mode == "modify" and stats is None:
        raise ExperimentError("modification needs class statistics")
    X = test.subset(location_id=n).X
    if X.shape[0] == 0:
        raise ExperimentError(f"no test samples for class {n}")
    S, A = test.S, test.A
    H = np.array([explain(params, x, n, m).h_prime for x in X])

    def scores_of(h):
        return subcarrier_scores(h, S, A).values if granularity == "subcarrier" else h

    shared = None
    if order_source == "class_mean":
        shared = ordering(scores_of(H.mean(axis=0)), kind, (n, m), granularity).order
    elif order_source != "sample":
        raise ExperimentError(f"unknown order_source {order_source!r}")

    steps = S if granularity == "subcarrier" else test.K
    true_counts = np.zeros(steps + 1, dtype=np.int64)
    target_counts = np.zeros(steps + 1, dtype=np.int64)
    for x, h in zip(X, H):
        order = shared if shared is not None else ordering(scores_of(h), kind).order
        path = manipulation_path(x, h, order, mode, S=S, A=A, granularity=granularity,
                                 stats=stats, n=n, m=m)
        pred = predict_batch(params, path)
        true_counts += pred == n
        target_counts += pred == m
    N = X.shape[0]
    return ExperimentCurve(
        mode=mode, pair=(n, m), kind=kind, granularity=granularity,
        t=np.arange(steps + 1), frac_true=true_counts / N, frac_target=target_counts / N,
        n_samples=N,
    )


def load_curve_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
