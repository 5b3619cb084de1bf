"""L2-regularized logistic regression trained by full-batch gradient descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Model, check_training, validate_matrix


@dataclass(frozen=True)
class LrConfig:
    learning_rate: float = 1.0
    l2: float = 1e-4
    epochs: int = 300
    tol: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def logistic_loss_grad(w, b, X, y, l2, mu=None, sd=None):
    """Mean log-loss plus ``l2/2 * |w|^2`` and its gradient.

    ``w`` acts on standardized columns ``(X - mu) / sd``; the standardized
    matrix is never materialized.
    """
    n, d = X.shape
    mu = np.zeros(d) if mu is None else mu
    sd = np.ones(d) if sd is None else sd
    v = w / sd
    z = X @ v.astype(X.dtype, copy=False) + (b - mu @ v)
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w)
    r = sigmoid(z) - y
    g_raw = (X.T @ r.astype(X.dtype, copy=False)).astype(np.float64)
    gw = (g_raw - mu * r.sum()) / (n * sd) + l2 * w
    gb = r.mean()
    return float(loss), gw, float(gb)


class LogisticRegression(Model):
    kind = "lr"
    config_cls = LrConfig

    def __init__(self, config=None, scheme="fixed"):
        super().__init__(config, scheme)
        self.mu = self.sd = self.w = None
        self.b = 0.0
        self.loss_history: list[float] = []

    def fit(self, instances, log=None):
        check_training(instances)
        X = instances.X
        y = instances.label.astype(np.float64)
        self._remember_schema(instances)
        self.mu = X.mean(axis=0, dtype=np.float64)
        sd = X.std(axis=0, dtype=np.float64)
        self.sd = np.where(sd > 0, sd, 1.0)
        w = np.zeros(X.shape[1])
        p = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        b = float(np.log(p / (1 - p)))
        cfg = self.config
        lr = cfg.learning_rate
        loss, gw, gb = logistic_loss_grad(w, b, X, y, cfg.l2, self.mu, self.sd)
        self.loss_history = [loss]
        for _ in range(cfg.epochs):
            # halve the step until the loss does not increase
            while True:
                w_new, b_new = w - lr * gw, b - lr * gb
                new_loss, new_gw, new_gb = logistic_loss_grad(w_new, b_new, X, y, cfg.l2, self.mu, self.sd)
                if new_loss <= loss or lr < 1e-10:
                    break
                lr *= 0.5
            done = loss - new_loss <= cfg.tol * max(1.0, abs(loss))
            if new_loss <= loss:
                w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
                self.loss_history.append(loss)
            if done:
                break
        self.w, self.b = w, b
        return self

    def decision_function(self, X):
        # row-wise float64 reduction: a row's score never depends on which
        # other rows are scored alongside it (BLAS blocking would)
        v = self.w / self.sd
        out = np.empty(len(X))
        for s in range(0, len(X), 4096):
            out[s:s + 4096] = (X[s:s + 4096].astype(np.float64) * v).sum(axis=1)
        return out + (self.b - self.mu @ v)

    def score(self, instances, log=None):
        self._check_schema(instances)
        validate_matrix(instances.X)
        return sigmoid(self.decision_function(instances.X))

    def _params(self):
        return {"mu": self.mu.tolist(), "sd": self.sd.tolist(), "w": self.w.tolist(), "b": self.b}

    def _load_params(self, p):
        self.mu = np.asarray(p["mu"], dtype=np.float64)
        self.sd = np.asarray(p["sd"], dtype=np.float64)
        self.w = np.asarray(p["w"], dtype=np.float64)
        self.b = float(p["b"])
