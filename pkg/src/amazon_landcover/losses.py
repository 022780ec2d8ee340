"""Cross-entropy losses and the closed-form gradient of the dense head."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

EPSILON = 1e-7


def _pair(y_true, y_pred):
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"y_true shape {y.shape} != y_pred shape {p.shape}")
    return y, p


def binary_cross_entropy(y_true, y_pred, eps: float = EPSILON) -> float:
    """Mean over all elements of ``-(y ln p + (1 - y) ln(1 - p))``.

    ``y_pred`` is clipped to ``[eps, 1 - eps]`` first, which caps the
    per-element loss at ``-ln(eps)`` (about 16.1).
    """
    y, p = _pair(y_true, y_pred)
    if y.size == 0:
        return 0.0
    p = np.clip(p, eps, 1.0 - eps)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def categorical_cross_entropy(y_true, y_pred, eps: float = EPSILON) -> float:
    """Double sum ``sum_i sum_k -y_ik ln p_ik`` (not averaged).

    Reported as a diagnostic; training uses :func:`binary_cross_entropy`.
    """
    y, p = _pair(y_true, y_pred)
    p = np.clip(p, eps, None)
    return float(np.sum(-y * np.log(p)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dense_head_loss(features, y_true, kernel, bias, eps: float = EPSILON) -> float:
    """BCE of a sigmoid dense layer applied to ``features`` (N x D)."""
    z = np.asarray(features, dtype=np.float64) @ np.asarray(kernel, dtype=np.float64) + bias
    return binary_cross_entropy(y_true, sigmoid(z), eps)


def dense_head_gradients(features, y_true, kernel, bias, eps: float = EPSILON):
    """Analytic ``(dL/dkernel, dL/dbias)`` for :func:`dense_head_loss`.

    With ``p = sigmoid(F W + b)`` the logit gradient is ``(p - y) / (N K)``,
    zeroed where clipping is active.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    p = sigmoid(f @ np.asarray(kernel, dtype=np.float64) + bias)
    dz = (p - y) / y.size
    dz[(p < eps) | (p > 1.0 - eps)] = 0.0
    return f.T @ dz, dz.sum(axis=0)
