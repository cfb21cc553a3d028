"""Trainable network layers with hand-written reverse-mode rules.

Every layer implements forward_cached / backward over batches (rows are
samples), returning analytic gradients for all trainable parameters and for
the input. Orthogonal weights are reparameterized as expm(W - W^T), and the
backward pass differentiates through the same scaling-and-squaring
computation used in the forward pass.
"""

from __future__ import annotations

import numpy as np

from .fields import Activation
from .linalg import expm_vjp, expm_with_cache, spectral_norm


class Layer:
    """Base layer: params dict, batched forward/backward, certified factor."""

    kind = "layer"
    in_dim: int
    out_dim: int
    constrained = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward_cached(self, X):
        raise NotImplementedError

    def forward(self, X):
        return self.forward_cached(X)[0]

    def backward(self, cache, GY):
        """Returns (GX, grads) where grads maps param name -> gradient."""
        raise NotImplementedError

    def lip_factor(self) -> float:
        """Certified upper bound on the layer's Lipschitz constant."""
        return np.inf

    def project(self):
        """Post-SGD constraint enforcement; default none."""

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _scalar(x) -> np.ndarray:
    return np.asarray(float(x))


# ---------------------------------------------------------------------------
# step-size region machinery


class StepPair:
    """Trainable step pair (h1 contractive, h2 expansive) with the
    non-expansivity region constraint.

    S counts the substep pairs the owning block actually performs, so the
    region inequality (1 + h2/S) * sqrt(1 - 2 (h1/S) a + (h1/S)^2) <= 1 is
    checked at the true substep sizes.
    """

    def __init__(self, h1: float, h2: float, a: float = 0.5, S: int = 1):
        if h1 < 0 or h2 < 0:
            raise ValueError("step sizes must be nonnegative")
        self.h1 = float(h1)
        self.h2 = float(h2)
        self.a = float(a)
        self.S = int(S)

    def region_value(self, h1=None, h2=None) -> float:
        h1 = self.h1 if h1 is None else h1
        h2 = self.h2 if h2 is None else h2
        x = h1 / self.S
        return (1.0 + h2 / self.S) * np.sqrt(max(0.0, 1.0 - 2.0 * x * self.a + x * x))

    def feasible(self, tol=1e-12) -> bool:
        return (0.0 <= self.h1 <= 1.0 and 0.0 <= self.h2 <= 1.0
                and self.region_value() <= 1.0 + tol)


def _region_h2_max(h1, a, S):
    """Largest feasible h2 for the given h1 (may be negative: infeasible h1)."""
    x = h1 / S
    c2 = 1.0 - 2.0 * x * a + x * x
    if c2 <= 0.0:
        return np.inf
    return S * (1.0 / np.sqrt(c2) - 1.0)


def project_steps(pair: StepPair) -> StepPair:
    """Euclidean projection of (h1, h2) onto the region intersected with
    [0, 1]^2. Idempotent; the output satisfies the inequality with slack
    >= -1e-12."""
    a, S = pair.a, pair.S
    x = min(max(pair.h1, 0.0), 1.0)
    y = min(max(pair.h2, 0.0), 1.0)
    clipped = StepPair(x, y, a, S)
    if clipped.feasible():
        return clipped

    h1_max = min(1.0, 2.0 * a * S)

    def candidate(h1):
        h2 = min(max(y, 0.0), 1.0, max(0.0, _region_h2_max(h1, a, S)))
        return h2, (h1 - x) ** 2 + (h2 - y) ** 2

    # coarse scan of the boundary, then golden-section refinement
    grid = np.linspace(0.0, h1_max, 2001)
    dists = [candidate(h)[1] for h in grid]
    i = int(np.argmin(dists))
    lo = grid[max(0, i - 1)]
    hi = grid[min(len(grid) - 1, i + 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - phi * (hi - lo), lo + phi * (hi - lo)
    for _ in range(80):
        if candidate(c)[1] < candidate(d)[1]:
            hi, d = d, c
            c = hi - phi * (hi - lo)
        else:
            lo, c = c, d
            d = lo + phi * (hi - lo)
    h1 = 0.5 * (lo + hi)
    h2 = candidate(h1)[0]
    # pin exactly onto the feasible side
    h2 = min(h2, max(0.0, _region_h2_max(h1, a, S)))
    return StepPair(min(max(h1, 0.0), 1.0), min(max(h2, 0.0), 1.0), a, S)


# ---------------------------------------------------------------------------
# residual flow pair (the 1-Lipschitz machinery)


class LipschitzPairLayer(Layer):
    """Alternating contractive / expansive residual flow steps.

    Contractive step: x - s P^T Sigma(P x + p), P = expm(Wp - Wp^T).
    Expansive step (grad_free): x + s Sigma(Q x + q);
                   (grad_grad): x + s Q^T Sigma(Q x + q); Q = expm(Wq - Wq^T).
    pattern "double" is the interleaved half-step composition
    (expansive h2/2 after contractive h1/2, twice); "single" is one
    contractive step of h1 followed by one expansive step of h2. Each step
    is realized as S substeps; the StepPair region constraint is enforced
    at the actual substep sizes.
    """

    kind = "lipschitz_pair"

    def __init__(self, n, a=0.5, S=1, pattern="double", expansive="grad_free",
                 h1=0.1, h2=0.1, constrained=True, use_contractive=True,
                 use_expansive=True, train_steps=True, seed=0):
        super().__init__()
        if pattern not in ("single", "double"):
            raise ValueError(f"unknown pattern {pattern!r}")
        if expansive not in ("grad_free", "grad_grad"):
            raise ValueError(f"unknown expansive form {expansive!r}")
        self.in_dim = self.out_dim = n
        self.act = Activation(a)
        self.S = int(S)
        self.pattern = pattern
        self.expansive = expansive
        self.constrained = constrained
        self.use_contractive = use_contractive
        self.use_expansive = use_expansive
        self.train_steps = train_steps
        g = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(n)
        self.params = {
            "Wp": scale * g.standard_normal((n, n)),
            "p": np.zeros(n),
            "Wq": scale * g.standard_normal((n, n)),
            "q": np.zeros(n),
            "h1": _scalar(h1 if use_contractive else 0.0),
            "h2": _scalar(h2 if use_expansive else 0.0),
        }

    @property
    def n_pairs(self):
        return 2 if self.pattern == "double" else 1

    @property
    def region_S(self):
        return self.n_pairs * self.S

    def step_pair(self) -> StepPair:
        # raw SGD iterates may be slightly negative; projection restores them
        return StepPair(max(0.0, float(self.params["h1"])),
                        max(0.0, float(self.params["h2"])),
                        self.act.a, self.region_S)

    def project(self):
        if not self.constrained:
            # free steps: only nonnegativity and a loose stability cap
            self.params["h1"] = _scalar(min(max(float(self.params["h1"]), 0.0), 4.0))
            self.params["h2"] = _scalar(min(max(float(self.params["h2"]), 0.0), 4.0))
            return
        pair = project_steps(self.step_pair())
        self.params["h1"] = _scalar(pair.h1 if self.use_contractive else 0.0)
        self.params["h2"] = _scalar(pair.h2 if self.use_expansive else 0.0)

    # -- substep kernels ----------------------------------------------------

    def _contractive_sub(self, X, P, s):
        U = X @ P.T + self.params["p"]
        W = self.act(U)
        return X - s * (W @ P), (X, U, W)

    def _contractive_sub_back(self, cache, P, s, GY):
        X, U, W = cache
        GU = -s * (GY @ P.T) * self.act.deriv(U)
        GX = GY + GU @ P
        gP = GU.T @ X - s * (W.T @ GY)
        gp = GU.sum(axis=0)
        gs = -float(np.sum(GY * (W @ P)))
        return GX, gP, gp, gs

    def _expansive_sub(self, X, Q, s):
        U = X @ Q.T + self.params["q"]
        W = self.act(U)
        if self.expansive == "grad_free":
            return X + s * W, (X, U, W)
        return X + s * (W @ Q), (X, U, W)

    def _expansive_sub_back(self, cache, Q, s, GY):
        X, U, W = cache
        if self.expansive == "grad_free":
            GU = s * GY * self.act.deriv(U)
            GX = GY + GU @ Q
            gQ = GU.T @ X
            gs = float(np.sum(GY * W))
        else:
            GU = s * (GY @ Q.T) * self.act.deriv(U)
            GX = GY + GU @ Q
            gQ = GU.T @ X + s * (W.T @ GY)
            gs = float(np.sum(GY * (W @ Q)))
        gq = GU.sum(axis=0)
        return GX, gQ, gq, gs

    # -- full layer ---------------------------------------------------------

    def forward_cached(self, X):
        Wp, Wq = self.params["Wp"], self.params["Wq"]
        P, pc = expm_with_cache(Wp - Wp.T)
        Q, qc = expm_with_cache(Wq - Wq.T)
        sc = float(self.params["h1"]) / self.region_S
        se = float(self.params["h2"]) / self.region_S
        ops = []  # (tag, cache)
        for _ in range(self.n_pairs):
            if self.use_contractive:
                for _ in range(self.S):
                    X, c = self._contractive_sub(X, P, sc)
                    ops.append(("c", c))
            if self.use_expansive:
                for _ in range(self.S):
                    X, c = self._expansive_sub(X, Q, se)
                    ops.append(("e", c))
        return X, (ops, P, pc, Q, qc, sc, se)

    def backward(self, cache, GY):
        ops, P, pc, Q, qc, sc, se = cache
        grads = self.zero_grads()
        gP = np.zeros_like(P)
        gQ = np.zeros_like(Q)
        gsc = gse = 0.0
        for tag, c in reversed(ops):
            if tag == "c":
                GY, gPi, gpi, gsi = self._contractive_sub_back(c, P, sc, GY)
                gP += gPi
                grads["p"] += gpi
                gsc += gsi
            else:
                GY, gQi, gqi, gsi = self._expansive_sub_back(c, Q, se, GY)
                gQ += gQi
                grads["q"] += gqi
                gse += gsi
        gS = expm_vjp(pc, gP)
        grads["Wp"] += gS - gS.T
        gS = expm_vjp(qc, gQ)
        grads["Wq"] += gS - gS.T
        grads["h1"] += _scalar(gsc / self.region_S)
        grads["h2"] += _scalar(gse / self.region_S)
        if not self.use_contractive or not self.train_steps:
            grads["h1"] *= 0.0
        if not self.use_expansive or not self.train_steps:
            grads["h2"] *= 0.0
        return GY, grads

    def lip_factor(self):
        a = self.act.a
        h1 = float(self.params["h1"]) if self.use_contractive else 0.0
        h2 = float(self.params["h2"]) if self.use_expansive else 0.0
        sc = h1 / self.region_S
        se = h2 / self.region_S
        # orthogonality holds by construction (expm of skew)
        contr = np.sqrt(max(0.0, 1.0 - 2.0 * sc * a + sc * sc))
        expa = 1.0 + se
        total = 1.0
        if self.use_contractive:
            total *= contr ** self.region_S
        if self.use_expansive:
            total *= expa ** self.region_S
        return float(total)

    def total_time(self):
        t = 0.0
        if self.use_contractive:
            t += float(self.params["h1"])
        if self.use_expansive:
            t += float(self.params["h2"])
        return t


class ResidualBaselineLayer(Layer):
    """Unconstrained baseline residual layer x + A^T Sigma(B x + b)."""

    kind = "residual_baseline"

    def __init__(self, n, hidden=None, a=0.5, seed=0):
        super().__init__()
        hidden = hidden or n
        self.in_dim = self.out_dim = n
        self.act = Activation(a)
        g = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(n)
        self.params = {
            "A": s * g.standard_normal((hidden, n)),
            "B": s * g.standard_normal((hidden, n)),
            "b": np.zeros(hidden),
        }

    def forward_cached(self, X):
        U = X @ self.params["B"].T + self.params["b"]
        W = self.act(U)
        return X + W @ self.params["A"], (X, U, W)

    def backward(self, cache, GY):
        X, U, W = cache
        grads = self.zero_grads()
        GU = (GY @ self.params["A"].T) * self.act.deriv(U)
        GX = GY + GU @ self.params["B"]
        grads["A"] += W.T @ GY
        grads["B"] += GU.T @ X
        grads["b"] += GU.sum(axis=0)
        return GX, grads

    def lip_factor(self):
        return 1.0 + spectral_norm(self.params["A"]) * spectral_norm(self.params["B"])


# ---------------------------------------------------------------------------
# linear lifting / projection / classifier layers


class LiftLayer(Layer):
    """x -> alpha W x. With the norm cap on, W is renormalized to spectral
    norm <= 1 after every optimizer step and alpha is clamped to [-1, 1]."""

    kind = "lift"

    def __init__(self, in_dim, out_dim, norm_cap=False, alpha=1.0, seed=0):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.constrained = norm_cap
        g = np.random.default_rng(seed)
        W = g.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        self.params = {"W": W, "alpha": _scalar(alpha)}

    def forward_cached(self, X):
        a = float(self.params["alpha"])
        return a * (X @ self.params["W"].T), X

    def backward(self, cache, GY):
        X = cache
        a = float(self.params["alpha"])
        grads = self.zero_grads()
        grads["W"] += a * (GY.T @ X)
        grads["alpha"] += _scalar(np.sum(GY * (X @ self.params["W"].T)))
        return a * (GY @ self.params["W"]), grads

    def project(self):
        W = self.params["W"]
        s = spectral_norm(W)
        # deadband keeps the projection exactly idempotent
        if s > 1.0 + 1e-9:
            self.params["W"] = W / s
        if self.constrained:
            self.params["alpha"] = _scalar(np.clip(float(self.params["alpha"]), -1.0, 1.0))

    def lip_factor(self):
        return abs(float(self.params["alpha"])) * spectral_norm(self.params["W"])


class AffineClassifierLayer(Layer):
    """x -> A x + b; when constrained, A is spectrally capped at 1."""

    kind = "affine"

    def __init__(self, in_dim, out_dim, constrained=True, seed=0):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.constrained = constrained
        g = np.random.default_rng(seed)
        self.params = {
            "A": g.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim),
            "b": np.zeros(out_dim),
        }

    def forward_cached(self, X):
        return X @ self.params["A"].T + self.params["b"], X

    def backward(self, cache, GY):
        X = cache
        grads = self.zero_grads()
        grads["A"] += GY.T @ X
        grads["b"] += GY.sum(axis=0)
        return GY @ self.params["A"], grads

    def project(self):
        if self.constrained:
            A = self.params["A"]
            s = spectral_norm(A)
            if s > 1.0 + 1e-9:
                self.params["A"] = A / s

    def lip_factor(self):
        return spectral_norm(self.params["A"])


class MassLiftLayer(Layer):
    """Appends s zeros: preserves the component sum exactly."""

    kind = "mass_lift"

    def __init__(self, k, s):
        super().__init__()
        self.k, self.s = k, s
        self.in_dim, self.out_dim = k, k + s

    def forward_cached(self, X):
        Y = np.zeros((X.shape[0], self.out_dim))
        Y[:, : self.k] = X
        return Y, None

    def backward(self, cache, GY):
        return GY[:, : self.k].copy(), {}

    def lip_factor(self):
        return 1.0

    def project(self):
        pass


class MassProjectLayer(Layer):
    """Drops the s padding entries, redistributing their mean onto the first
    k outputs; with s == k the total component sum is preserved exactly."""

    kind = "mass_project"

    def __init__(self, k, s):
        super().__init__()
        self.k, self.s = k, s
        self.in_dim, self.out_dim = k + s, k

    def forward_cached(self, X):
        o = X[:, self.k:].sum(axis=1) / self.s
        return X[:, : self.k] + o[:, None], None

    def backward(self, cache, GY):
        GX = np.zeros((GY.shape[0], self.in_dim))
        GX[:, : self.k] = GY
        GX[:, self.k:] = (GY.sum(axis=1) / self.s)[:, None]
        return GX, {}

    def lip_factor(self):
        M = np.hstack([np.eye(self.k), np.full((self.k, self.s), 1.0 / self.s)])
        return spectral_norm(M)


# ---------------------------------------------------------------------------
# structure-preserving flow layers


class _TriuIndex:
    def __init__(self, n):
        self.n = n
        self.rows, self.cols = np.triu_indices(n, k=1)
        self.N = len(self.rows)


class MassFlowLayer(Layer):
    """Explicit-Euler step(s) on a mass-conserving field
    y + h (A(y) - A(y)^T) 1, with the strictly-upper entries of A produced
    by a one-hidden-layer net. Preserves 1^T y exactly."""

    kind = "mass_flow"

    def __init__(self, n, hidden=16, h=1.0, S=1, train_h=False, seed=0,
                 weight_scale=0.3, a=0.5):
        super().__init__()
        self.in_dim = self.out_dim = n
        self.act = Activation(a)
        self.S = int(S)
        self.train_h = train_h
        self.idx = _TriuIndex(n)
        g = np.random.default_rng(seed)
        self.params = {
            "B": weight_scale * g.standard_normal((self.idx.N, hidden)) / np.sqrt(hidden),
            "C": g.standard_normal((hidden, n)) / np.sqrt(n),
            "b": np.zeros(hidden),
            "h": _scalar(h),
        }
        # linear map from triangular entries to (A - A^T) 1
        M = np.zeros((n, self.idx.N))
        M[self.idx.rows, np.arange(self.idx.N)] = 1.0
        M[self.idx.cols, np.arange(self.idx.N)] = -1.0
        self.M = M

    def _sub(self, X, s):
        U = X @ self.params["C"].T + self.params["b"]
        H = self.act(U)
        E = H @ self.params["B"].T
        return X + s * (E @ self.M.T), (X, U, H, E)

    def _sub_back(self, cache, s, GY):
        X, U, H, E = cache
        GE = s * (GY @ self.M)
        GH = (GE @ self.params["B"]) * self.act.deriv(U)
        GX = GY + GH @ self.params["C"]
        gB = GE.T @ H
        gC = GH.T @ X
        gb = GH.sum(axis=0)
        gs = float(np.sum(GY * (E @ self.M.T)))
        return GX, gB, gC, gb, gs

    def forward_cached(self, X):
        s = float(self.params["h"]) / self.S
        caches = []
        for _ in range(self.S):
            X, c = self._sub(X, s)
            caches.append(c)
        return X, caches

    def backward(self, caches, GY):
        s = float(self.params["h"]) / self.S
        grads = self.zero_grads()
        gs = 0.0
        for c in reversed(caches):
            GY, gB, gC, gb, gsi = self._sub_back(c, s, GY)
            grads["B"] += gB
            grads["C"] += gC
            grads["b"] += gb
            gs += gsi
        if self.train_h:
            grads["h"] += _scalar(gs / self.S)
        return GY, grads


class SphereFlowLayer(Layer):
    """Norm-preserving Euler-Heun step(s) on a skew-parameterized
    sphere-preserving field (A(z) - A(z)^T) z."""

    kind = "sphere_flow"

    def __init__(self, n, hidden=16, h=0.1, S=1, train_h=True, seed=0,
                 weight_scale=0.3, a=0.5):
        super().__init__()
        self.in_dim = self.out_dim = n
        self.act = Activation(a)
        self.S = int(S)
        self.train_h = train_h
        self.idx = _TriuIndex(n)
        g = np.random.default_rng(seed)
        self.params = {
            "B": weight_scale * g.standard_normal((self.idx.N, hidden)) / np.sqrt(hidden),
            "C": g.standard_normal((hidden, n)) / np.sqrt(n),
            "b": np.zeros(hidden),
            "h": _scalar(h),
        }

    # batched field value V[b] = (A(x_b) - A(x_b)^T) x_b
    def _field(self, X):
        U = X @ self.params["C"].T + self.params["b"]
        H = self.act(U)
        E = H @ self.params["B"].T
        B, n = X.shape
        L = np.zeros((B, n, n))
        L[:, self.idx.rows, self.idx.cols] = E
        L -= np.transpose(L, (0, 2, 1))
        V = np.einsum("bij,bj->bi", L, X)
        return V, (X, U, H, E, L)

    def _field_back(self, cache, GV):
        X, U, H, E, L = cache
        GX = np.einsum("bij,bi->bj", L, GV)
        GL = GV[:, :, None] * X[:, None, :]
        GE = GL[:, self.idx.rows, self.idx.cols] - GL[:, self.idx.cols, self.idx.rows]
        GH = (GE @ self.params["B"]) * self.act.deriv(U)
        GX += GH @ self.params["C"]
        gB = GE.T @ H
        gC = GH.T @ X
        gb = GH.sum(axis=0)
        return GX, gB, gC, gb

    def _sub(self, X, s):
        nx = np.linalg.norm(X, axis=1)
        K1, c1 = self._field(X)
        Xe = X + s * K1
        K2, c2 = self._field(Xe)
        Z = X + 0.5 * s * (K1 + K2)
        nz = np.linalg.norm(Z, axis=1)
        safe = np.where(nz == 0.0, 1.0, nz)
        r = np.where(nz == 0.0, 0.0, nx / safe)
        Y = Z * r[:, None]
        return Y, (X, nx, K1, c1, Xe, K2, c2, Z, nz, r)

    def _sub_back(self, cache, s, GY):
        X, nx, K1, c1, Xe, K2, c2, Z, nz, r = cache
        # Y = Z * (nx / nz)
        gZ = GY * r[:, None]
        dot_gZ = np.sum(GY * Z, axis=1)
        safe_nz = np.where(nz == 0.0, 1.0, nz)
        gZ -= (dot_gZ * nx / safe_nz ** 3)[:, None] * Z
        safe_nx = np.where(nx == 0.0, 1.0, nx)
        gX = (dot_gZ / safe_nz / safe_nx)[:, None] * X  # through nx
        # Z = X + s/2 (K1 + K2)
        gX += gZ
        gK1 = 0.5 * s * gZ
        gK2 = 0.5 * s * gZ
        gs = 0.5 * float(np.sum(gZ * (K1 + K2)))
        # K2 = f(Xe)
        gXe, gB2, gC2, gb2 = self._field_back(c2, gK2)
        # Xe = X + s K1
        gX += gXe
        gK1 += s * gXe
        gs += float(np.sum(gXe * K1))
        # K1 = f(X)
        gX1, gB1, gC1, gb1 = self._field_back(c1, gK1)
        gX += gX1
        return gX, gB1 + gB2, gC1 + gC2, gb1 + gb2, gs

    def forward_cached(self, X):
        s = float(self.params["h"]) / self.S
        caches = []
        for _ in range(self.S):
            X, c = self._sub(X, s)
            caches.append(c)
        return X, caches

    def backward(self, caches, GY):
        s = float(self.params["h"]) / self.S
        grads = self.zero_grads()
        gs = 0.0
        for c in reversed(caches):
            GY, gB, gC, gb, gsi = self._sub_back(c, s, GY)
            grads["B"] += gB
            grads["C"] += gC
            grads["b"] += gb
            gs += gsi
        if self.train_h:
            grads["h"] += _scalar(gs / self.S)
        return GY, grads


class GradFlowLayer(Layer):
    """Explicit-Euler step on a gradient field sign * A^T diag(alpha_part)
    Sigma(A x + b), where alpha_part is the positive (expansive, sign +1) or
    negative (contractive, sign -1) part of the shared coefficient vector."""

    kind = "grad_flow"

    def __init__(self, n, hidden=16, h=0.1, sign=1, part="pos", train_h=True,
                 seed=0, a=0.5, params=None):
        super().__init__()
        self.in_dim = self.out_dim = n
        self.act = Activation(a)
        self.sign = sign
        self.part = part
        self.train_h = train_h
        if params is not None:
            self.params = params  # shared with a sibling layer
        else:
            g = np.random.default_rng(seed)
            self.params = {
                "A": g.standard_normal((hidden, n)) / np.sqrt(n),
                "b": np.zeros(hidden),
                "alpha": g.uniform(-1.0, 1.0, hidden),
                "h": _scalar(h),
            }

    def _alpha_part(self):
        al = self.params["alpha"]
        if self.part == "pos":
            return np.maximum(al, 0.0), (al > 0.0).astype(float)
        return np.maximum(-al, 0.0), -(al < 0.0).astype(float)

    def forward_cached(self, X):
        h = float(self.params["h"])
        ap, _ = self._alpha_part()
        U = X @ self.params["A"].T + self.params["b"]
        W = ap * self.act(U)
        Y = X + self.sign * h * (W @ self.params["A"])
        return Y, (X, U, W)

    def backward(self, cache, GY):
        X, U, W = cache
        h = float(self.params["h"])
        ap, dmask = self._alpha_part()
        grads = self.zero_grads()
        A = self.params["A"]
        GW = self.sign * h * (GY @ A.T)
        GU = GW * ap * self.act.deriv(U)
        GX = GY + GU @ A
        grads["A"] += GU.T @ X + self.sign * h * (W.T @ GY)
        grads["b"] += GU.sum(axis=0)
        grads["alpha"] += dmask * (GW * self.act(U)).sum(axis=0)
        if self.train_h:
            grads["h"] += _scalar(self.sign * np.sum(GY * (W @ A)))
        return GX, grads
