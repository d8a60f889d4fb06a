"""Reference classifiers on raw CSI (k-NN, one-vs-all RBF SVM) and evaluation metrics.

Class labels are 1-based everywhere in this module.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)


class BaselineError(ValueError):
    pass


class SvmNotConverged(RuntimeError):
    pass


# ---------------------------------------------------------------- k-NN

def _vote(neigh_labels: np.ndarray) -> int:
    """Majority class among neighbours listed nearest first.

    A tied vote goes to the tied class whose member appears earliest.
    """
    classes, first, counts = np.unique(neigh_labels, return_index=True, return_counts=True)
    best = counts == counts.max()
    return int(classes[best][np.argmin(first[best])])


def knn_predict(train: Dataset, x, k: int = 5) -> int:
    """Class of ``x`` by majority vote over its ``k`` Euclidean nearest training samples."""
    return int(knn_predict_batch(train, np.atleast_2d(x), k)[0])


def knn_predict_batch(train: Dataset, X, k: int = 5) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xtr = train.X
    if k < 1:
        raise BaselineError("k must be at least 1")
    if k > Xtr.shape[0]:
        raise BaselineError(f"k={k} exceeds the {Xtr.shape[0]} training samples")
    if X.shape[1] != Xtr.shape[1]:
        raise BaselineError(f"query has {X.shape[1]} channels, training set has {Xtr.shape[1]}")
    labels = train.labels
    out = np.empty(X.shape[0], dtype=np.int64)
    for i, x in enumerate(X):
        d = np.sum((Xtr - x) ** 2, axis=1)
        # stable sort keeps sample order among equal distances
        nearest = np.argsort(d, kind="stable")[:k]
        out[i] = _vote(labels[nearest])
    return out


# ---------------------------------------------------------------- SVM

def rbf_kernel(U, V, gamma: float) -> np.ndarray:
    U = np.atleast_2d(U)
    V = np.atleast_2d(V)
    d = np.sum(U * U, axis=1)[:, None] + np.sum(V * V, axis=1)[None, :] - 2.0 * U @ V.T
    return np.exp(-gamma * np.maximum(d, 0.0))


@dataclass
class BinarySvm:
    alpha: np.ndarray  # dual coefficients for every training sample
    y: np.ndarray  # +1 / -1
    b: float
    iterations: int


@dataclass
class SvmModel:
    X: np.ndarray
    classes: np.ndarray  # 1-based class ids, one binary machine each
    machines: list
    gamma: float
    C: float

    def decision_values(self, X) -> np.ndarray:
        K = rbf_kernel(np.asarray(X, dtype=np.float64), self.X, self.gamma)
        coef = np.stack([mach.alpha * mach.y for mach in self.machines], axis=1)
        return K @ coef + np.array([mach.b for mach in self.machines])


def _smo(Kmat: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int) -> BinarySvm:
    """Dual soft-margin SVM by SMO with maximal-violating-pair selection.

    Solves ``min 0.5 a'Qa - sum(a)`` with ``Q = yy' * K``, ``0 <= a <= C`` and
    ``y'a = 0``; stops once the largest KKT violation is below ``tol``.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    Q = (y[:, None] * y[None, :]) * Kmat
    for it in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(yg[low])])
        if yg[i] - yg[j] < tol:
            break
        old_i, old_j = alpha[i], alpha[j]
        quad = max(Kmat[i, i] + Kmat[j, j] - 2.0 * Kmat[i, j], 1e-12)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
    else:
        raise SvmNotConverged(
            f"SMO stopped after {max_iter} iterations with KKT gap {yg[i] - yg[j]:.3g} > {tol}"
        )
    return BinarySvm(alpha, y, _bias(alpha, y, grad, C), it)


def _bias(alpha, y, grad, C) -> float:
    yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(np.mean(yg[free]))
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    hi = yg[up].max() if np.any(up) else yg[low].min()
    lo = yg[low].min() if np.any(low) else hi
    return float((hi + lo) / 2.0)


def default_gamma(train: Dataset) -> float:
    var = float(np.var(train.X))
    if var == 0:
        raise BaselineError("training channels have zero variance")
    return 1.0 / (train.K * var)


def svm_train(train: Dataset, gamma: float | None = None, C: float = 1.0,
              tol: float = 1e-3, max_iter: int = 100_000) -> SvmModel:
    """One binary RBF machine per class (that class against the rest)."""
    if C <= 0:
        raise BaselineError("C must be positive")
    gamma = default_gamma(train) if gamma is None else gamma
    if gamma <= 0:
        raise BaselineError("gamma must be positive")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise BaselineError("SVM training needs at least two classes")
    X = train.X
    Kmat = rbf_kernel(X, X, gamma)
    machines = []
    for c in classes:
        y = np.where(train.labels == c, 1.0, -1.0)
        try:
            mach = _smo(Kmat, y, C, tol, max_iter)
        except SvmNotConverged as exc:
            raise SvmNotConverged(f"class {int(c)} vs rest: {exc}") from None
        log.debug("class %d: %d iterations, %d support vectors", c, mach.iterations,
                  int(np.sum(mach.alpha > 0)))
        machines.append(mach)
    return SvmModel(X.copy(), classes, machines, float(gamma), float(C))


def svm_predict(model: SvmModel, x) -> int:
    return int(svm_predict_batch(model, np.atleast_2d(x))[0])


def svm_predict_batch(model: SvmModel, X) -> np.ndarray:
    dv = model.decision_values(X)
    return model.classes[np.argmax(dv, axis=1)]


def kkt_violation(model: SvmModel) -> list[float]:
    """Largest KKT violation of every binary machine, recomputed from its dual variables.

    For sample ``i`` with margin ``u_i = y_i f(x_i)``: ``alpha_i = 0`` needs
    ``u_i >= 1``, ``0 < alpha_i < C`` needs ``u_i = 1`` and ``alpha_i = C``
    needs ``u_i <= 1``. The residual of ``sum(alpha * y) = 0`` is folded in too.
    """
    Kmat = rbf_kernel(model.X, model.X, model.gamma)
    C = model.C
    out = []
    for mach in model.machines:
        a, y = mach.alpha, mach.y
        u = y * (Kmat @ (a * y) + mach.b)
        at_zero = a <= 0
        at_c = a >= C
        free = ~at_zero & ~at_c
        viol = np.zeros_like(u)
        viol[at_zero] = np.maximum(0.0, 1.0 - u[at_zero])
        viol[at_c] = np.maximum(0.0, u[at_c] - 1.0)
        viol[free] = np.abs(u[free] - 1.0)
        out.append(float(max(viol.max(), abs(float(np.dot(a, y))))))
    return out


# ---------------------------------------------------------------- metrics

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def M(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)


def confusion(predictions, labels, M: int) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise BaselineError("predictions and labels differ in length")
    for name, arr in (("prediction", pred), ("label", true)):
        if arr.size and (arr.min() < 1 or arr.max() > M):
            raise BaselineError(f"{name} outside [1, {M}]")
    counts = np.zeros((M, M), dtype=np.int64)
    np.add.at(counts, (true - 1, pred - 1), 1)
    return ConfusionMatrix(counts)


@dataclass
class Metrics:
    precision: list  # None where the class was never predicted
    recall: list  # None where the class never occurs
    macro_precision: float
    macro_recall: float
    f1: float
    accuracy: float
    undefined_precision: list = field(default_factory=list)


def _macro(values) -> float:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else float("nan")


def precision_recall(cm: ConfusionMatrix) -> Metrics:
    c = cm.counts
    if cm.total == 0:
        raise BaselineError("confusion matrix is empty")
    diag = np.diag(c)
    cols = c.sum(axis=0)
    rows = c.sum(axis=1)
    precision = [float(d / s) if s else None for d, s in zip(diag, cols)]
    recall = [float(d / s) if s else None for d, s in zip(diag, rows)]
    P, R = _macro(precision), _macro(recall)
    f1 = 2 * P * R / (P + R) if P + R > 0 else 0.0
    undefined = [i + 1 for i, p in enumerate(precision) if p is None]
    return Metrics(precision, recall, P, R, float(f1), cm.accuracy(), undefined)


def _pct(v):
    return None if v is None else 100.0 * v


def scheme_report(name: str, cm: ConfusionMatrix) -> dict:
    """One scheme block: per-class and macro precision/recall in percent plus the raw counts."""
    met = precision_recall(cm)
    return {
        "scheme": name,
        "precision_pct": [_pct(v) for v in met.precision],
        "recall_pct": [_pct(v) for v in met.recall],
        "precision_pct_rounded": [None if v is None else round(100 * v) for v in met.precision],
        "recall_pct_rounded": [None if v is None else round(100 * v) for v in met.recall],
        "macro_precision_pct": _pct(met.macro_precision),
        "macro_recall_pct": _pct(met.macro_recall),
        "f1_pct": _pct(met.f1),
        "accuracy_pct": _pct(met.accuracy),
        "undefined_precision_classes": met.undefined_precision,
        "note": "undefined precision (class never predicted) is excluded from the macro mean",
        "confusion": cm.counts.tolist(),
    }


def format_table(blocks: list[dict]) -> str:
    """Plain-text precision/recall table: rounded per-class percent, macro mean to 2 decimals."""
    M = len(blocks[0]["precision_pct"])
    head = ["", "scheme"] + [f"p{i}" for i in range(1, M + 1)] + ["avg"]
    rows = [head]
    for metric in ("precision", "recall"):
        for blk in blocks:
            vals = ["-" if v is None else str(v) for v in blk[f"{metric}_pct_rounded"]]
            rows.append([metric, blk["scheme"], *vals, f"{blk[f'macro_{metric}_pct']:.2f}"])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def save_report(blocks: list[dict], path) -> None:
    doc = {"unit": "percent", "schemes": _clean(blocks)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
