"""Numpy implementation of the response-model kernels.

These are the hot inner-loop operations: forward probability, analytic
gradient of the mean cross-entropy with respect to the raw proficiency
parameters, and the K-step inner gradient descent. ``catlab._core`` provides
a compiled drop-in; :mod:`catlab.backend` picks one at import.

Proficiency enters every kernel as the unconstrained raw vector; the model
consumes ``theta = sigmoid(raw)``, which keeps theta in (0,1) for any raw.
"""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-7
BACKEND_NAME = "python"


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce(y, p):
    """Elementwise cross-entropy with the probability clamped away from 0/1."""
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


# -- 1PL response model -------------------------------------------------------

def irt_predict(raw: float, b: np.ndarray) -> np.ndarray:
    theta = sigmoid(raw)
    return sigmoid(theta - b)


def irt_loss_grad(raw: float, b: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy over the responses and its d/d(raw)."""
    theta = float(sigmoid(raw))
    p = sigmoid(theta - b)
    loss = float(np.mean(bce(y, p)))
    grad = float(np.mean(p - y) * theta * (1.0 - theta))
    return loss, grad


def irt_inner(raw: float, b: np.ndarray, y: np.ndarray, k_steps: int, lr: float) -> float:
    for _ in range(k_steps):
        _, g = irt_loss_grad(raw, b, y)
        raw = raw - lr * g
    return float(raw)


# -- Neural diagnosis model ---------------------------------------------------
#
# x  = Q * (theta - hdiff) * hdisc        per item, length K
# f1 = sigmoid(W1 x + b1)                 128
# f2 = sigmoid(W2 f1 + b2)                64
# p  = sigmoid(W3 f2 + b3)                scalar

def ncdm_predict(raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3):
    theta = sigmoid(raw)
    x = q * (theta[None, :] - hdiff) * hdisc[:, None]
    f1 = sigmoid(x @ w1.T + b1)
    f2 = sigmoid(f1 @ w2.T + b2)
    return sigmoid(f2 @ w3.T + b3)[:, 0]


def ncdm_loss_grad(raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3, y):
    """Mean cross-entropy over the items and its gradient w.r.t. raw."""
    n = q.shape[0]
    theta = sigmoid(raw)
    x = q * (theta[None, :] - hdiff) * hdisc[:, None]
    f1 = sigmoid(x @ w1.T + b1)
    f2 = sigmoid(f1 @ w2.T + b2)
    p = sigmoid(f2 @ w3.T + b3)[:, 0]
    loss = float(np.mean(bce(y, p)))

    d3 = (p - y) / n                      # (n,)
    df2 = d3[:, None] * w3                # (n, 64)
    d2 = df2 * f2 * (1.0 - f2)
    df1 = d2 @ w2                         # (n, 128)
    d1 = df1 * f1 * (1.0 - f1)
    dx = d1 @ w1                          # (n, K)
    dtheta = np.sum(dx * q * hdisc[:, None], axis=0)
    grad = dtheta * theta * (1.0 - theta)
    return loss, grad


def ncdm_inner(raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3, y, k_steps, lr):
    raw = np.array(raw, dtype=np.float64, copy=True)
    for _ in range(k_steps):
        _, g = ncdm_loss_grad(raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3, y)
        raw -= lr * g
    return raw
