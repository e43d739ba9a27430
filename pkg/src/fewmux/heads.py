"""Per-task classification heads and the evaluation metrics.

Heads are fit on frozen embeddings by full-batch gradient descent from a zero
initialization: the k-shot datasets are tiny and a deterministic convex fit
beats a stochastic one for reproducibility. The step size is set from a
power-iteration bound on the curvature, so no tuning knob is exposed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Array

HEAD_LOGISTIC = "logistic"
HEAD_SOFTMAX = "softmax"

GRAD_TOL = 1e-6
MAX_ITERS = 5000


class HeadError(ValueError):
    pass


@dataclass
class LogisticHead:
    weight: Array  # (d,)
    bias: float
    task_id: int | None = None
    degenerate: bool = False  # single-class training set; constant predictor


@dataclass
class SoftmaxHead:
    weight: Array  # (d, c)
    bias: Array  # (c,)
    task_id: int | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    f1: float
    n_eval: int


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: Array) -> Array:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _curvature_bound(x: Array, l2: float) -> float:
    """Upper bound on the loss Hessian's largest eigenvalue (power iteration)."""
    n, d = x.shape
    gram = x.T @ x / n
    v = np.ones(d) / np.sqrt(d)
    for _ in range(50):
        nv = gram @ v
        norm = np.linalg.norm(nv)
        if norm == 0:
            break
        v = nv / norm
    lam = float(v @ gram @ v)
    return 0.5 * lam + 2.0 * l2 + 1e-12


def fit_head(
    embeddings: Array,
    labels,
    head_type: str,
    l2: float = 1e-3,
    task_id: int | None = None,
):
    """Minimize mean cross-entropy + l2*|W|^2 to gradient norm < 1e-6 (or 5000 iters)."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise HeadError(f"bad shapes: embeddings {x.shape}, labels {y.shape}")
    if x.shape[0] < 1:
        raise HeadError("need at least one example")
    n, d = x.shape

    if head_type == HEAD_LOGISTIC:
        if set(np.unique(y)) - {0, 1}:
            raise HeadError("logistic labels must be 0/1")
        if np.unique(y).size < 2:
            # degenerate: constant predictor biased toward the only class seen
            only = int(y[0])
            bias = 20.0 if only == 1 else -20.0
            return LogisticHead(weight=np.zeros(d), bias=bias, task_id=task_id, degenerate=True)
        w = np.zeros(d)
        b = 0.0
        lr = 1.0 / _curvature_bound(x, l2)
        for _ in range(MAX_ITERS):
            p = _sigmoid(x @ w + b)
            err = p - y
            gw = x.T @ err / n + 2.0 * l2 * w
            gb = float(err.mean())
            if np.sqrt(gw @ gw + gb * gb) < GRAD_TOL:
                break
            w -= lr * gw
            b -= lr * gb
        return LogisticHead(weight=w, bias=b, task_id=task_id)

    if head_type == HEAD_SOFTMAX:
        c = int(y.max()) + 1 if y.size else 2
        c = max(c, 2)
        w = np.zeros((d, c))
        b = np.zeros(c)
        lr = 1.0 / _curvature_bound(x, l2)
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y] = 1.0
        degenerate = np.unique(y).size < 2
        for _ in range(MAX_ITERS):
            p = _softmax(x @ w + b)
            err = (p - onehot) / n
            gw = x.T @ err + 2.0 * l2 * w
            gb = err.sum(axis=0)
            if np.sqrt((gw * gw).sum() + gb @ gb) < GRAD_TOL:
                break
            w -= lr * gw
            b -= lr * gb
        return SoftmaxHead(weight=w, bias=b, task_id=task_id, degenerate=degenerate)

    raise HeadError(f"unknown head type {head_type!r}")


def head_loss(head, embeddings: Array, labels, l2: float = 0.0) -> float:
    """Mean cross-entropy (+ optional l2 penalty) of a head on a labeled set."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if isinstance(head, LogisticHead):
        z = x @ head.weight + head.bias
        # stable log(1+exp(.)) forms
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        return float(loss + l2 * head.weight @ head.weight)
    z = x @ head.weight + head.bias
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].mean()
    return float(loss + l2 * (head.weight**2).sum())


def predict(head, embedding: Array) -> tuple[int, Array]:
    """Class index and the class-probability vector; ties break to the lower index."""
    x = np.asarray(embedding, dtype=np.float64)
    if isinstance(head, LogisticHead):
        if x.shape != head.weight.shape:
            raise HeadError(f"dim mismatch: embedding {x.shape}, head {head.weight.shape}")
        p1 = float(_sigmoid(np.array([x @ head.weight + head.bias]))[0])
        probs = np.array([1.0 - p1, p1])
    elif isinstance(head, SoftmaxHead):
        if x.shape != (head.weight.shape[0],):
            raise HeadError(f"dim mismatch: embedding {x.shape}, head {head.weight.shape}")
        probs = _softmax(x @ head.weight + head.bias)
    else:
        raise HeadError(f"not a head: {type(head).__name__}")
    return int(np.argmax(probs)), probs


def predict_batch(head, embeddings: Array) -> Array:
    x = np.asarray(embeddings, dtype=np.float64)
    if isinstance(head, LogisticHead):
        return (x @ head.weight + head.bias > 0).astype(np.intp)
    return np.argmax(x @ head.weight + head.bias, axis=1)


def compute_metrics(predictions, labels, head_type: str, num_classes: int | None = None) -> MetricSet:
    """Accuracy plus F1: positive-class F1 for binary, macro-F1 for multiclass.

    Unseen classes contribute precision = recall = 0 to the macro average.
    """
    preds = np.asarray(predictions, dtype=np.intp)
    y = np.asarray(labels, dtype=np.intp)
    if preds.shape != y.shape:
        raise HeadError("predictions and labels differ in length")
    if y.size < 1:
        raise HeadError("empty evaluation set")
    accuracy = float((preds == y).mean())

    def f1_for(cls: int) -> float:
        tp = int(((preds == cls) & (y == cls)).sum())
        fp = int(((preds == cls) & (y != cls)).sum())
        fn = int(((preds != cls) & (y == cls)).sum())
        if tp == 0:
            return 0.0
        return 2.0 * tp / (2.0 * tp + fp + fn)

    if head_type == HEAD_LOGISTIC:
        f1 = f1_for(1)
    else:
        c = num_classes if num_classes is not None else int(max(preds.max(), y.max())) + 1
        f1 = float(np.mean([f1_for(k) for k in range(c)]))
    return MetricSet(accuracy=accuracy, f1=f1, n_eval=int(y.size))
