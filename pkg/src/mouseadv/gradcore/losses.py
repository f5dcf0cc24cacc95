"""Scalar losses returning ``(value, grad wrt prediction)``; batch means."""

from __future__ import annotations

import numpy as np

MSE = "MSE"
BCE = "BCE-with-logit"
CE2 = "CrossEntropy2"
HINGE = "Hinge"
LOSS_KINDS = (MSE, BCE, CE2, HINGE)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    diff = pred - np.asarray(target, dtype=float)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def bce_with_logits(logit: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    logit = np.asarray(logit, dtype=float)
    y = np.asarray(target, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("BCE targets must lie in [0, 1]")
    loss = -(y * log_sigmoid(logit) + (1 - y) * log_sigmoid(-logit))
    p = np.exp(log_sigmoid(logit))
    return float(loss.mean()), (p - y) / logit.size


def cross_entropy2(logits: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over two logits per row; ``classes`` in {0, 1}."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    c = np.atleast_1d(np.asarray(classes))
    if logits.shape[-1] != 2 or len(c) != len(logits):
        raise ValueError("CrossEntropy2 takes (B, 2) logits and B class labels")
    if not np.all((c == 0) | (c == 1)):
        raise ValueError(f"invalid class labels {np.unique(c)}")
    c = c.astype(int)
    lse = np.logaddexp(logits[:, 0], logits[:, 1])
    loss = lse - logits[np.arange(len(c)), c]
    prob = np.exp(logits - lse[:, None])
    prob[np.arange(len(c)), c] -= 1.0
    return float(loss.mean()), prob / len(c)


def hinge(score: np.ndarray, label: np.ndarray, margin: float = 1.0) -> tuple[float, np.ndarray]:
    score = np.asarray(score, dtype=float)
    y = np.asarray(label, dtype=float)
    if not np.all(np.abs(y) == 1):
        raise ValueError("hinge labels must be +1 or -1")
    slack = margin - y * score
    active = slack > 0
    return float(np.mean(np.where(active, slack, 0.0))), np.where(active, -y, 0.0) / score.size


def loss_eval(kind: str, prediction, target) -> tuple[float, np.ndarray]:
    if kind == MSE:
        return mse(prediction, target)
    if kind == BCE:
        return bce_with_logits(prediction, target)
    if kind == CE2:
        return cross_entropy2(prediction, target)
    if kind == HINGE:
        return hinge(prediction, target)
    raise ValueError(f"unknown loss {kind!r}")
