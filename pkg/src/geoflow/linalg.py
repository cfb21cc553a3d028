"""Minimal dense linear algebra: matrix exponential, spectral norm, orthogonality.

Everything is float64. The matrix exponential is written so that it can be
differentiated algorithmically (see :func:`expm_with_cache` / :func:`expm_vjp`),
which is what the training engine backpropagates through when weights are
parameterized as expm(W - W^T).
"""

from __future__ import annotations

import math

import numpy as np

# Scaling threshold and Taylor degree. With ||B||_1 <= 0.5 the degree-20
# remainder is ~1e-26, far below the 1e-10 orthogonality contract.
_EXPM_THETA = 0.5
_EXPM_DEGREE = 20


def rng(seed: int) -> np.random.Generator:
    """Seeded generator used everywhere randomness is needed."""
    return np.random.default_rng(seed)


def _as_square(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("matrix has non-finite entries")
    return W


def expm_with_cache(W: np.ndarray):
    """Scaling-and-squaring Taylor evaluation of e^W.

    Returns (e^W, cache); the cache holds every intermediate needed by
    :func:`expm_vjp`.
    """
    W = _as_square(W)
    norm = np.linalg.norm(W, 1)
    if norm == 0.0:
        n = W.shape[0]
        return np.eye(n), None
    s = max(0, int(math.ceil(math.log2(norm / _EXPM_THETA))))
    B = W / (2.0 ** s)
    n = W.shape[0]
    terms = [np.eye(n)]
    for k in range(1, _EXPM_DEGREE + 1):
        terms.append(B @ terms[-1] / k)
    T = np.zeros((n, n))
    for M in terms:
        T += M
    squares = [T]
    for _ in range(s):
        squares.append(squares[-1] @ squares[-1])
    return squares[-1], (B, s, terms, squares)


def expm(W: np.ndarray) -> np.ndarray:
    """Matrix exponential e^W."""
    return expm_with_cache(W)[0]


def expm_vjp(cache, gY: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product through the computation of expm.

    Given the cotangent gY of the output, returns the cotangent of the input.
    Differentiates the exact arithmetic performed in expm_with_cache.
    """
    if cache is None:
        return np.zeros_like(gY)
    B, s, terms, squares = cache
    g = np.asarray(gY, dtype=np.float64)
    for i in range(s, 0, -1):
        Y = squares[i - 1]
        g = g @ Y.T + Y.T @ g
    # g is now the cotangent of the Taylor sum T = sum_k terms[k]
    gT = g
    cot = gT.copy()
    gB = np.zeros_like(B)
    for k in range(_EXPM_DEGREE, 0, -1):
        gB += cot @ terms[k - 1].T / k
        cot = B.T @ cot / k + gT
    return gB / (2.0 ** s)


def spectral_norm(W: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    """Largest singular value estimated with the power method.

    Deterministic for a fixed seed: the start vector comes from a seeded
    generator. Returns 0 for the zero matrix.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {W.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.any(W):
        return 0.0
    v = rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    u = np.zeros(W.shape[0])
    for _ in range(iters):
        u = W @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # v landed exactly in the null space; nudge deterministically
            v = np.roll(v, 1)
            continue
        u /= nu
        v = W.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
    return float(u @ (W @ v))


def orthogonalize(W: np.ndarray) -> np.ndarray:
    """Q = expm(W - W^T); Q^T Q = I to ~1e-10 for moderate ||W||."""
    W = _as_square(W)
    return expm(W - W.T)
