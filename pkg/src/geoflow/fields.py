"""Parametric vector-field families used as layer right-hand sides.

Each family exposes value(z), an analytic Jacobian action and its transpose.
Structural identities (orthogonality to z, zero column-sum mass, block
divergence-freeness) hold exactly by construction, up to roundoff.
"""

from __future__ import annotations

import numpy as np


class Activation:
    """Leaky max activation sigma(s) = max(s, a*s), a in (0, 1).

    Monotone, 1-Lipschitz, with antiderivative gamma strongly convex with
    parameter a. At the kink we take the right derivative, sigma'(0) = 1.
    """

    def __init__(self, a: float = 0.5):
        if not 0.0 < a < 1.0:
            raise ValueError("slope a must lie in (0, 1)")
        self.a = float(a)

    def __call__(self, s):
        return np.maximum(s, self.a * s)

    def deriv(self, s):
        return np.where(np.asarray(s) >= 0.0, 1.0, self.a)

    def antideriv(self, s):
        s = np.asarray(s)
        return np.where(s >= 0.0, 0.5 * s * s, 0.5 * self.a * s * s)


def _check_dim(z, dim):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dim,):
        raise ValueError(f"expected vector of dim {dim}, got shape {z.shape}")
    return z


class VectorField:
    """A map R^n -> R^n. Subclasses fill in value(); Jacobian actions are
    analytic where available, finite differences otherwise."""

    dim: int

    def value(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z):
        return self.value(z)

    def jacobian_action(self, z, v):
        """(df/dz)(z) @ v, central finite differences fallback."""
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        h = 1e-6 * (1.0 + np.linalg.norm(z))
        return (self.value(z + h * v) - self.value(z - h * v)) / (2.0 * h)

    def jacobian_t_action(self, z, v):
        """(df/dz)(z)^T @ v; assembled column by column unless overridden."""
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        J = np.stack(
            [self.jacobian_action(z, e) for e in np.eye(self.dim)], axis=1
        )
        return J.T @ v


class ZeroField(VectorField):
    def __init__(self, dim: int):
        self.dim = dim

    def value(self, z):
        _check_dim(z, self.dim)
        return np.zeros(self.dim)

    def jacobian_action(self, z, v):
        return np.zeros(self.dim)

    def jacobian_t_action(self, z, v):
        return np.zeros(self.dim)


class LinearField(VectorField):
    """f(z) = B z; handy as a test field and as a lifted-field building block."""

    def __init__(self, B: np.ndarray):
        self.B = np.asarray(B, dtype=np.float64)
        if self.B.ndim != 2 or self.B.shape[0] != self.B.shape[1]:
            raise ValueError("B must be square")
        self.dim = self.B.shape[0]

    def value(self, z):
        return self.B @ _check_dim(z, self.dim)

    def jacobian_action(self, z, v):
        return self.B @ _check_dim(v, self.dim)

    def jacobian_t_action(self, z, v):
        return self.B.T @ _check_dim(v, self.dim)


class GradField(VectorField):
    """Gradient field sign * A^T diag(alpha) Sigma(A z + b).

    With sign = -1, alpha > 0 and A orthogonal this is one-sided Lipschitz
    with constant -a * min(alpha): its flow contracts pairwise distances.
    The scalar potential is sign * alpha^T Gamma(A z + b).
    """

    def __init__(self, A, b, alpha=None, sign=-1, act: Activation | None = None):
        self.A = np.asarray(A, dtype=np.float64)
        if self.A.ndim != 2:
            raise ValueError("A must be a matrix")
        m, n = self.A.shape
        self.b = _check_dim(b, m)
        self.alpha = np.ones(m) if alpha is None else _check_dim(alpha, m)
        if sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        self.sign = sign
        self.act = act or Activation()
        self.dim = n

    def value(self, z):
        z = _check_dim(z, self.dim)
        return self.sign * self.A.T @ (self.alpha * self.act(self.A @ z + self.b))

    def potential(self, z):
        z = _check_dim(z, self.dim)
        return self.sign * float(self.alpha @ self.act.antideriv(self.A @ z + self.b))

    def jacobian_action(self, z, v):
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        d = self.act.deriv(self.A @ z + self.b)
        return self.sign * self.A.T @ (self.alpha * d * (self.A @ v))

    def jacobian_t_action(self, z, v):
        # the Jacobian is symmetric (Hessian of the potential)
        return self.jacobian_action(z, v)

    @staticmethod
    def split_expansive_contractive(A, b, alpha, act=None):
        """Split A^T diag(alpha) Sigma(Az+b) into an expansive part (alpha+)
        and a contractive part (alpha-); their sum equals the full field."""
        alpha = np.asarray(alpha, dtype=np.float64)
        expansive = GradField(A, b, np.maximum(alpha, 0.0), sign=+1, act=act)
        contractive = GradField(A, b, np.maximum(-alpha, 0.0), sign=-1, act=act)
        return expansive, contractive


class _TriuNet:
    """Strictly upper triangular matrix-valued map A(z) with entries
    B Sigma(C z + b), B: N x m, C: m x n, N = n(n-1)/2."""

    def __init__(self, n, B, C, b, act):
        self.n = n
        self.N = n * (n - 1) // 2
        self.B = np.asarray(B, dtype=np.float64)
        self.C = np.asarray(C, dtype=np.float64)
        m = self.C.shape[0]
        if self.B.shape != (self.N, m) or self.C.shape != (m, n):
            raise ValueError("inconsistent triangular-net parameter shapes")
        self.b = _check_dim(b, m)
        self.act = act
        self.rows, self.cols = np.triu_indices(n, k=1)

    def skew(self, z):
        """Lambda(z) = A(z) - A(z)^T."""
        entries = self.B @ self.act(self.C @ z + self.b)
        L = np.zeros((self.n, self.n))
        L[self.rows, self.cols] = entries
        return L - L.T

    def skew_jacobian_action(self, z, v):
        """Directional derivative of Lambda(z) along v."""
        d = self.act.deriv(self.C @ z + self.b)
        dentries = self.B @ (d * (self.C @ v))
        dL = np.zeros((self.n, self.n))
        dL[self.rows, self.cols] = dentries
        return dL - dL.T


class SphereField(VectorField):
    """Sphere-preserving field: z^T value(z) = 0 exactly.

    parameterization "skew": value = (A(z) - A(z)^T) z with A strictly upper
    triangular, entries from a one-hidden-layer net.
    parameterization "projector": value = P(z) B^T Sigma(C z + d) with P(z)
    the orthogonal projection onto the complement of span(z).
    """

    def __init__(self, n, parameterization="skew", *, B=None, C=None, b=None,
                 act: Activation | None = None):
        self.dim = n
        self.parameterization = parameterization
        self.act = act or Activation()
        if parameterization == "skew":
            self.net = _TriuNet(n, B, C, b, self.act)
        elif parameterization == "projector":
            self.B = np.asarray(B, dtype=np.float64)
            self.C = np.asarray(C, dtype=np.float64)
            m = self.C.shape[0]
            if self.B.shape != (m, n) or self.C.shape != (m, n):
                raise ValueError("projector parameterization needs B, C of shape m x n")
            self.b = _check_dim(b, m)
        else:
            raise ValueError(f"unknown parameterization {parameterization!r}")

    def value(self, z):
        z = _check_dim(z, self.dim)
        if self.parameterization == "skew":
            return self.net.skew(z) @ z
        nz2 = float(z @ z)
        g = self.B.T @ self.act(self.C @ z + self.b)
        if nz2 == 0.0:
            return np.zeros(self.dim)
        return g - z * (z @ g) / nz2

    def jacobian_action(self, z, v):
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        if self.parameterization == "skew":
            L = self.net.skew(z)
            dL = self.net.skew_jacobian_action(z, v)
            return L @ v + dL @ z
        nz2 = float(z @ z)
        if nz2 == 0.0:
            raise ValueError("projector Jacobian undefined at z = 0")
        u = self.C @ z + self.b
        g = self.B.T @ self.act(u)
        dg = self.B.T @ (self.act.deriv(u) * (self.C @ v))
        zg = z @ g
        return (dg - v * zg / nz2 - z * (v @ g + z @ dg) / nz2
                + 2.0 * z * zg * (z @ v) / nz2 ** 2)


class MassField(VectorField):
    """Mass-conserving field (A(y) - A(y)^T) @ 1: column sums of the value
    vanish identically, so 1^T y is a linear first integral."""

    def __init__(self, n, B, C, b, act: Activation | None = None):
        self.dim = n
        self.act = act or Activation()
        self.net = _TriuNet(n, B, C, b, self.act)
        self.ones = np.ones(n)

    def value(self, y):
        y = _check_dim(y, self.dim)
        return self.net.skew(y) @ self.ones

    def jacobian_action(self, y, v):
        y = _check_dim(y, self.dim)
        v = _check_dim(v, self.dim)
        return self.net.skew_jacobian_action(y, v) @ self.ones


class ShearNet:
    """One-hidden-layer map R^m -> R^m: x -> U^T Sigma(C x + c)."""

    def __init__(self, U, C, c, act: Activation | None = None):
        self.U = np.asarray(U, dtype=np.float64)
        self.C = np.asarray(C, dtype=np.float64)
        hidden, m = self.C.shape
        if self.U.shape != (hidden, m):
            raise ValueError("U and C must both be hidden x m")
        self.c = _check_dim(c, hidden)
        self.m = m
        self.act = act or Activation()

    def __call__(self, x):
        return self.U.T @ self.act(self.C @ x + self.c)

    def jacobian_action(self, x, v):
        d = self.act.deriv(self.C @ x + self.c)
        return self.U.T @ (d * (self.C @ v))


class VolumeSplitField(VectorField):
    """Divergence-free partitioned field on R^(2m):
    value(z) = (u(z[m:]), v(z[:m])). Each half-field depends only on the
    other block, so both halves are exactly divergence-free."""

    def __init__(self, u_net: ShearNet, v_net: ShearNet):
        if u_net.m != v_net.m:
            raise ValueError("u and v nets must share the block size")
        self.m = u_net.m
        self.dim = 2 * self.m
        self.u_net = u_net
        self.v_net = v_net

    def value(self, z):
        z = _check_dim(z, self.dim)
        m = self.m
        return np.concatenate([self.u_net(z[m:]), self.v_net(z[:m])])

    def jacobian_action(self, z, v):
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        m = self.m
        return np.concatenate([
            self.u_net.jacobian_action(z[m:], v[m:]),
            self.v_net.jacobian_action(z[:m], v[:m]),
        ])


class MetricField(VectorField):
    """-W^T Sigma(M W z + b) with M symmetric positive definite: contractive
    in the metric induced by M."""

    def __init__(self, W, b, M, act: Activation | None = None):
        self.W = np.asarray(W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be square")
        n = self.W.shape[0]
        self.M = np.asarray(M, dtype=np.float64)
        if self.M.shape != (n, n):
            raise ValueError("M must match W")
        if not np.allclose(self.M, self.M.T):
            raise ValueError("M must be symmetric")
        if np.linalg.eigvalsh(self.M)[0] <= 0.0:
            raise ValueError("M must be positive definite")
        self.b = _check_dim(b, n)
        self.act = act or Activation()
        self.dim = n

    def value(self, z):
        z = _check_dim(z, self.dim)
        return -self.W.T @ self.act(self.M @ self.W @ z + self.b)

    def jacobian_action(self, z, v):
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        d = self.act.deriv(self.M @ self.W @ z + self.b)
        return -self.W.T @ (d * (self.M @ self.W @ v))

    def jacobian_t_action(self, z, v):
        z = _check_dim(z, self.dim)
        v = _check_dim(v, self.dim)
        d = self.act.deriv(self.M @ self.W @ z + self.b)
        return -self.W.T @ self.M @ (d * (self.W @ v))


class HamiltonianLift(VectorField):
    """Lift of f on R^n to the Hamiltonian field of H(z, p) = p^T f(z) on
    R^(2n): value(z, p) = (f(z), -(df/dz)^T p). The first block never
    depends on p, so projecting the flow started at (z, 0) recovers the
    flow of f."""

    def __init__(self, base: VectorField):
        self.base = base
        self.n = base.dim
        self.dim = 2 * base.dim

    def value(self, zp):
        zp = _check_dim(zp, self.dim)
        z, p = zp[: self.n], zp[self.n:]
        return np.concatenate([self.base.value(z),
                               -self.base.jacobian_t_action(z, p)])


def lift_hamiltonian(f: VectorField) -> HamiltonianLift:
    """Embed f into its Hamiltonian lift on the doubled space."""
    return HamiltonianLift(f)
