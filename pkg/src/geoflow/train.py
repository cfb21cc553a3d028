"""Losses, reverse-mode gradients through networks, and minibatch SGD with
post-step constraint projection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .blocks import Network
from .fields import Activation
from .layers import SphereFlowLayer


class TrainingDivergence(RuntimeError):
    """Loss exceeded the divergence threshold; carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class LossSpec:
    kind: str = "mse"  # mse | hinge | flowmap_mse | discrete_grad_residual
    margin: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mse", "hinge", "flowmap_mse", "discrete_grad_residual"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.kind == "hinge" and self.margin <= 0:
            raise ValueError("hinge margin must be positive")


@dataclass
class OptimConfig:
    lr: float = 0.05
    epochs: int = 50
    batch: int = 64
    schedule: list = field(default_factory=list)  # [(epoch, divide-by factor)]
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if any(f <= 1 for _, f in self.schedule):
            raise ValueError("schedule factors must be > 1")


# ---------------------------------------------------------------------------
# losses (value and gradient w.r.t. network output)


def mse_loss(Y, T):
    """Mean over the batch of squared output error."""
    R = Y - T
    n = Y.shape[0]
    return float(np.sum(R * R) / n), 2.0 * R / n


def hinge_loss(logits, label, margin=1.0):
    """Multi-class hinge for a single sample: sum over wrong classes of
    max(0, margin - (correct logit - wrong logit))."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError("label out of range")
    diffs = logits[label] - logits
    diffs[label] = np.inf
    return float(np.sum(np.maximum(0.0, margin - diffs)))


def hinge_loss_batch(Z, labels, margin=1.0):
    B, C = Z.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError("label out of range")
    zl = Z[np.arange(B), labels]
    viol = margin - (zl[:, None] - Z)
    viol[np.arange(B), labels] = 0.0
    active = viol > 0.0
    loss = float(np.sum(np.maximum(0.0, viol)) / B)
    G = active.astype(np.float64)
    G[np.arange(B), labels] = -active.sum(axis=1)
    return loss, G / B


def accuracy(Z, labels):
    return float(np.mean(np.argmax(Z, axis=1) == np.asarray(labels)))


def _loss_and_output_grad(spec: LossSpec, Z, targets):
    if spec.kind in ("mse", "flowmap_mse"):
        return mse_loss(Z, targets)
    if spec.kind == "hinge":
        return hinge_loss_batch(Z, targets, spec.margin)
    raise ValueError(f"loss {spec.kind!r} needs a dedicated training loop")


def grad(net: Network, spec: LossSpec, X, targets):
    """Loss value and per-layer parameter gradients on one batch."""
    Z, caches = net.forward_cached(X)
    loss, GZ = _loss_and_output_grad(spec, Z, targets)
    if not np.isfinite(loss):
        raise TrainingDivergence("non-finite loss", [])
    _, grads = net.backward(caches, GZ)
    return loss, Z, grads


def _apply_update(net: Network, grads, lr):
    # in-place so that parameter arrays shared between layers stay aliased
    for layer, g in zip(net.layers, grads):
        for k, gv in g.items():
            layer.params[k] -= lr * gv


def train(net: Network, data, spec: LossSpec, optim: OptimConfig):
    """Minibatch SGD with constraint projection after every step.

    data is (X, targets); targets are integer labels for hinge and arrays
    for (flowmap_)mse. Returns the history, one row per epoch."""
    X, targets = data
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    g = np.random.default_rng(optim.seed)
    lr = optim.lr
    history = []
    net.project()
    for epoch in range(optim.epochs):
        for ep, factor in optim.schedule:
            if epoch == ep:
                lr /= factor
        order = g.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, optim.batch):
            idx = order[start:start + optim.batch]
            loss, _, grads = grad(net, spec, X[idx], targets[idx])
            if loss > 1e8:
                raise TrainingDivergence(f"loss diverged: {loss:.3e}", history)
            if lr > 0.0:
                _apply_update(net, grads, lr)
                net.project()
            epoch_loss += loss
            n_batches += 1
        Z = net.forward_all(X)
        acc = accuracy(Z, targets) if spec.kind == "hinge" else float("nan")
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / n_batches,
            "train_acc": acc,
            "constraint_slack": net.constraint_slack(),
            "lr": lr,
        })
    return history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "train_acc",
                                           "constraint_slack", "lr"])
        w.writeheader()
        w.writerows(history)


# ---------------------------------------------------------------------------
# discrete-gradient residual training (dissipative flow maps)


class PotentialNet:
    """Scalar potential V(z) = alpha . Gamma(A z + b) with gradient
    A^T (alpha * sigma(A z + b)) and analytic VJPs for both."""

    def __init__(self, n, hidden=16, seed=0, a=0.5):
        self.act = Activation(a)
        g = np.random.default_rng(seed)
        self.params = {
            "A": g.standard_normal((hidden, n)) / np.sqrt(n),
            "b": np.zeros(hidden),
            "alpha": 0.3 * g.standard_normal(hidden),
        }

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def value(self, Z):
        u = Z @ self.params["A"].T + self.params["b"]
        return self.act.antideriv(u) @ self.params["alpha"]

    def gradient(self, Z):
        u = Z @ self.params["A"].T + self.params["b"]
        return (self.params["alpha"] * self.act(u)) @ self.params["A"]

    def value_vjp(self, Z, w, grads):
        """Accumulates d(sum_b w_b V(z_b)) into grads; returns gZ."""
        A, al = self.params["A"], self.params["alpha"]
        u = Z @ A.T + self.params["b"]
        s = self.act(u)
        grads["alpha"] += w @ self.act.antideriv(u)
        grads["b"] += al * (w @ s)
        grads["A"] += ((w[:, None] * s) * al).T @ Z
        return w[:, None] * ((al * s) @ A)

    def grad_vjp(self, Z, W, grads):
        """Accumulates d(sum_b W_b . grad V(z_b)) into grads; returns gZ."""
        A, al = self.params["A"], self.params["alpha"]
        u = Z @ A.T + self.params["b"]
        s = self.act(u)
        sp = self.act.deriv(u)
        t = W @ A.T
        grads["alpha"] += np.sum(s * t, axis=0)
        grads["b"] += np.sum((al * sp) * t, axis=0)
        grads["A"] += ((al * sp) * t).T @ Z + al[:, None] * (s.T @ W)
        return ((al * sp) * t) @ A


def discrete_grad_batch(pot: PotentialNet, Z, Y):
    """Gonzalez two-point gradient, batched; rows with y == z fall back to
    the pointwise gradient."""
    D = Y - Z
    q = np.sum(D * D, axis=1)
    safe_q = np.where(q == 0.0, 1.0, q)
    M = 0.5 * (Z + Y)
    gm = pot.gradient(M)
    c = (pot.value(Y) - pot.value(Z) - np.sum(gm * D, axis=1)) / safe_q
    c = np.where(q == 0.0, 0.0, c)
    return gm + c[:, None] * D, (D, q, safe_q, M, gm, c)


def _discrete_grad_vjp(pot, Z, Y, cache, W, grads):
    """gZ of sum_b W_b . Dbar_b, accumulating potential-parameter grads."""
    D, q, safe_q, M, gm, c = cache
    wd = np.sum(W * D, axis=1)
    live = (q != 0.0).astype(np.float64)
    u = (wd / safe_q) * live
    # term 1: W . grad V(m), m = (z+y)/2
    gZ = 0.5 * pot.grad_vjp(M, W, grads)
    # term 2: wd * c, c = (V(y) - V(z) - gm.D) / q
    pot.value_vjp(Y, u, grads)
    neg = pot.zero_grads()
    gZ -= pot.value_vjp(Z, u, neg)
    gZ -= 0.5 * pot.grad_vjp(M, u[:, None] * D, neg)
    gZ += u[:, None] * gm
    for k in grads:
        grads[k] -= neg[k]
    gZ += (2.0 * c * wd / safe_q * live)[:, None] * D
    # term 3: c * (W . D) with dD/dZ = -I
    gZ -= c[:, None] * W
    return gZ


class DiscreteGradFlowModel:
    """Dissipative flow-map model: norm-preserving sphere step followed by an
    implicit discrete-gradient potential step sharing the same step size."""

    def __init__(self, n, hidden=16, h=0.1, seed=0, a=0.5, train_h=True):
        self.n = n
        self.sphere = SphereFlowLayer(n, hidden=hidden, h=h, train_h=train_h,
                                      seed=seed, a=a)
        self.pot = PotentialNet(n, hidden=hidden, seed=seed + 1, a=a)
        self.train_h = train_h

    @property
    def h(self):
        return float(self.sphere.params["h"])

    def residual_loss(self, X, Y):
        """The training objective: mean squared residual of
        y - (sphere(x) - h Dbar V(sphere(x), y))."""
        Z = self.sphere.forward(X)
        Dbar, _ = discrete_grad_batch(self.pot, Z, Y)
        R = Y - (Z - self.h * Dbar)
        return float(np.sum(R * R) / X.shape[0])

    def loss_and_grads(self, X, Y):
        h = self.h
        Z, scache = self.sphere.forward_cached(X)
        Dbar, dcache = discrete_grad_batch(self.pot, Z, Y)
        R = Y - (Z - h * Dbar)
        n = X.shape[0]
        loss = float(np.sum(R * R) / n)
        Gpred = -2.0 * R / n  # d loss / d prediction
        pgrads = self.pot.zero_grads()
        gZ = Gpred + _discrete_grad_vjp(self.pot, Z, Y, dcache, -h * Gpred, pgrads)
        gh = -float(np.sum(Gpred * Dbar))
        _, sgrads = self.sphere.backward(scache, gZ)
        if self.train_h:
            sgrads["h"] = sgrads["h"] + gh
        else:
            sgrads["h"] = np.zeros_like(sgrads["h"])
        return loss, sgrads, pgrads

    def step(self, x, tol=1e-12, max_iter=200):
        """Predict one flow-map step by solving the implicit update."""
        z = self.sphere.forward(np.asarray(x, dtype=np.float64)[None, :])[0]
        y = z.copy()
        for _ in range(max_iter):
            Dbar, _ = discrete_grad_batch(self.pot, z[None, :], y[None, :])
            y_new = z - self.h * Dbar[0]
            if np.linalg.norm(y_new - y) <= tol * (1.0 + np.linalg.norm(y)):
                return y_new
            y = 0.5 * (y + y_new)
        return y

    def fit(self, X, Y, optim: OptimConfig):
        g = np.random.default_rng(optim.seed)
        lr = optim.lr
        history = []
        n = X.shape[0]
        for epoch in range(optim.epochs):
            for ep, factor in optim.schedule:
                if epoch == ep:
                    lr /= factor
            order = g.permutation(n)
            total = 0.0
            batches = 0
            for start in range(0, n, optim.batch):
                idx = order[start:start + optim.batch]
                loss, sg, pg = self.loss_and_grads(X[idx], Y[idx])
                if loss > 1e8:
                    raise TrainingDivergence(f"loss diverged: {loss:.3e}", history)
                for k, v in sg.items():
                    self.sphere.params[k] -= lr * v
                for k, v in pg.items():
                    self.pot.params[k] -= lr * v
                total += loss
                batches += 1
            history.append({"epoch": epoch, "loss": total / batches,
                            "train_acc": float("nan"),
                            "constraint_slack": 0.0, "lr": lr})
        return history
