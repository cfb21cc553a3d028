"""Dataset generators and high-accuracy reference integration for the
desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import VectorField
from .flows import rk4


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    @property
    def train(self):
        return self.inputs[self.train_idx], self.targets[self.train_idx]

    @property
    def test(self):
        return self.inputs[self.test_idx], self.targets[self.test_idx]


def _split(n, seed, test_frac=0.25):
    g = np.random.default_rng(seed + 10_000)
    order = g.permutation(n)
    n_test = max(1, int(round(test_frac * n)))
    return order[n_test:], order[:n_test]


def gen_planar_classification(n_per_class, seed=0, test_frac=0.25) -> Dataset:
    """Inner disk (radius <= 1, class 0) vs annulus (radii in [1.5, 2.5],
    class 1); the 0.5 gap gives the separation the certification needs."""
    if n_per_class < 1:
        raise ValueError("need at least one point per class")
    g = np.random.default_rng(seed)
    r0 = np.sqrt(g.uniform(0.0, 1.0, n_per_class))  # uniform over the disk
    r1 = np.sqrt(g.uniform(1.5 ** 2, 2.5 ** 2, n_per_class))
    r = np.concatenate([r0, r1])
    th = g.uniform(0.0, 2.0 * np.pi, 2 * n_per_class)
    X = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    y = np.concatenate([np.zeros(n_per_class, dtype=int),
                        np.ones(n_per_class, dtype=int)])
    tr, te = _split(2 * n_per_class, seed, test_frac)
    return Dataset(X, y, tr, te, seed)


def target_f(x):
    return x ** 2 + np.abs(x) + np.sin(x)


def target_g(x, y):
    return np.sqrt(x ** 2 + y ** 2)


def gen_regression(target, n, seed=0, test_frac=0.25) -> Dataset:
    """Scalar targets sampled uniformly on [-2,2] (f) or [-2,2]^2 (g)."""
    if n < 1:
        raise ValueError("need at least one sample")
    g = np.random.default_rng(seed)
    if target == "f":
        X = g.uniform(-2.0, 2.0, (n, 1))
        Y = target_f(X[:, 0])[:, None]
    elif target == "g":
        X = g.uniform(-2.0, 2.0, (n, 2))
        Y = target_g(X[:, 0], X[:, 1])[:, None]
    else:
        raise ValueError(f"unknown regression target {target!r}")
    tr, te = _split(n, seed, test_frac)
    return Dataset(X, Y, tr, te, seed)


class _FuncField(VectorField):
    def __init__(self, dim, fn):
        self.dim = dim
        self.fn = fn

    def value(self, z):
        z = np.asarray(z, dtype=np.float64)
        return self.fn(z)


def sir_field() -> VectorField:
    return _FuncField(3, lambda y: np.array(
        [-y[0] * y[1], y[0] * y[1] - y[1], y[1]]))


def x1_field() -> VectorField:
    return _FuncField(4, lambda x: np.sin(x) ** 3 + x ** 3)


def pendulum_field() -> VectorField:
    return _FuncField(2, lambda x: np.array([x[1], -np.sin(x[0])]))


_SYSTEMS = {
    "SIR": (sir_field, 3),
    "X1": (x1_field, 4),
    "X2": (pendulum_field, 2),
}


def gen_flowmap_pairs(system, h, n, box=None, seed=0, test_frac=0.25,
                      ref_steps=1000) -> Dataset:
    """Pairs (x, y) with y the time-h flow of x, computed by RK4 at step
    h/ref_steps. SIR initial states live on the probability simplex."""
    if h <= 0:
        raise ValueError("h must be positive")
    if system not in _SYSTEMS:
        raise ValueError(f"unknown system {system!r}")
    make, dim = _SYSTEMS[system]
    field = make()
    g = np.random.default_rng(seed)
    if system == "SIR":
        X = g.dirichlet(np.ones(3), n)
    else:
        lo, hi = (-1.0, 1.0) if box is None else box
        X = g.uniform(lo, hi, (n, dim))
    Y = np.array([rk4(field, h, ref_steps, x) for x in X])
    tr, te = _split(n, seed, test_frac)
    return Dataset(X, Y, tr, te, seed)
