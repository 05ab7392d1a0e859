"""Minimal one-hidden-layer network with analytic gradients.

Both the novelty mapper's shallow net and the continual classifier are
instances of this class. Everything is plain float64 numpy: training is
seeded mini-batch Adam on softmax cross-entropy, and ``loss_and_grads``
exposes the analytic gradients so tests can check them against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 256
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    plateau_tol: float = 1e-5
    plateau_patience: int = 10


class MLP:
    """x -> relu(x W1 + b1) W2 + b2, trained with cross-entropy."""

    def __init__(self, dim: int, n_out: int, hidden: int, rng: np.random.Generator):
        self.dim = dim
        self.hidden = hidden
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, hidden))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, n_out))
        self.b2 = np.zeros(n_out)

    @property
    def n_out(self) -> int:
        return self.w2.shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        return h @ self.w2 + self.b2

    def extend_output(self, n_new: int, rng: np.random.Generator) -> None:
        """Append output units initialized with tiny uniform noise; existing
        logits are untouched."""
        w_new = rng.uniform(-1e-3, 1e-3, size=(self.hidden, n_new))
        b_new = rng.uniform(-1e-3, 1e-3, size=n_new)
        self.w2 = np.concatenate([self.w2, w_new], axis=1)
        self.b2 = np.concatenate([self.b2, b_new])

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy over the batch and its analytic gradients."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = x.shape[0]
        pre = x @ self.w1 + self.b1
        h = np.maximum(pre, 0.0)
        logits = h @ self.w2 + self.b2
        probs = softmax(logits)
        loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()

        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        grads = {
            "w2": h.T @ dlogits,
            "b2": dlogits.sum(axis=0),
        }
        dh = dlogits @ self.w2.T
        dh[pre <= 0.0] = 0.0
        grads["w1"] = x.T @ dh
        grads["b1"] = dh.sum(axis=0)
        return loss, grads

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Adam:
    def __init__(self, net: MLP, lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in net.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params().items()}

    def step(self, net: MLP, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        params = net.params()
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_mlp(
    net: MLP,
    x: np.ndarray,
    y: np.ndarray,
    cfg: NetConfig,
    rng: np.random.Generator,
    replay: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Train in place; returns the final full-set training loss.

    With ``replay`` given, every batch is half freshly labeled data and
    half replay data (each side resampled with replacement when short).
    Stops early once the full-set loss has not improved by more than
    ``plateau_tol`` for ``plateau_patience`` consecutive epochs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    opt = _Adam(net, cfg.lr)
    best = np.inf
    stale = 0
    half = max(1, cfg.batch_size // 2)
    loss = np.inf

    for _ in range(cfg.max_epochs):
        order = rng.permutation(len(x))
        if replay is None:
            for lo in range(0, len(order), cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                _, grads = net.loss_and_grads(x[idx], y[idx])
                opt.step(net, grads)
        else:
            rx, ry = replay
            for lo in range(0, len(order), half):
                idx = order[lo : lo + half]
                ridx = rng.choice(len(rx), size=min(half, len(rx)), replace=len(rx) < half)
                bx = np.concatenate([x[idx], rx[ridx]])
                by = np.concatenate([y[idx], ry[ridx]])
                _, grads = net.loss_and_grads(bx, by)
                opt.step(net, grads)

        if replay is None:
            loss, _ = net.loss_and_grads(x, y)
        else:
            fx = np.concatenate([x, replay[0]])
            fy = np.concatenate([y, replay[1]])
            loss, _ = net.loss_and_grads(fx, fy)
        if loss < best - cfg.plateau_tol:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                break
    return float(loss)
