import numpy as np
import pytest

from geoflow.fields import (Activation, GradField, HamiltonianLift, LinearField,
                            MassField, MetricField, ShearNet, SphereField,
                            VolumeSplitField, ZeroField, lift_hamiltonian)
from geoflow.flows import rk4
from geoflow.linalg import orthogonalize, rng


def fd_jacobian_action(field, z, v, h=None):
    h = h or 1e-6 * (1.0 + np.linalg.norm(z))
    return (field.value(z + h * v) - field.value(z - h * v)) / (2 * h)


def make_sphere(n, seed, parameterization="skew", m=16):
    g = rng(seed)
    if parameterization == "skew":
        N = n * (n - 1) // 2
        return SphereField(n, "skew", B=g.standard_normal((N, m)),
                           C=g.standard_normal((m, n)), b=g.standard_normal(m))
    return SphereField(n, "projector", B=g.standard_normal((m, n)),
                       C=g.standard_normal((m, n)), b=g.standard_normal(m))


def make_mass(n, seed, m=16):
    g = rng(seed)
    N = n * (n - 1) // 2
    return MassField(n, B=g.standard_normal((N, m)),
                     C=g.standard_normal((m, n)), b=g.standard_normal(m))


class TestActivation:
    def test_values(self):
        act = Activation(0.5)
        assert act(1.0) == 1.0
        assert act(-1.0) == -0.5

    def test_right_derivative_at_kink(self):
        assert Activation(0.5).deriv(0.0) == 1.0

    def test_lipschitz_one(self):
        act = Activation(0.3)
        s = np.linspace(-5, 5, 201)
        assert np.all(np.abs(np.diff(act(s))) <= np.diff(s) + 1e-15)


class TestGradField:
    def test_hand_example(self):
        # sign=-1, A=I, alpha=1, b=0, a=0.5, z=(1,-1) -> -(sigma(1), sigma(-1))
        f = GradField(np.eye(2), np.zeros(2), sign=-1, act=Activation(0.5))
        assert np.allclose(f.value(np.array([1.0, -1.0])), [-1.0, 0.5])

    def test_jacobian_action_matches_fd(self):
        g = rng(0)
        f = GradField(g.standard_normal((5, 3)), g.standard_normal(5),
                      alpha=g.standard_normal(5), sign=-1)
        for _ in range(5):
            z, v = g.standard_normal(3), g.standard_normal(3)
            assert np.allclose(f.jacobian_action(z, v),
                               fd_jacobian_action(f, z, v), rtol=1e-5, atol=1e-7)

    def test_one_sided_lipschitz_contractive(self):
        # orthogonal A, alpha=1, sign=-1: <f(x)-f(y), x-y> <= -a ||x-y||^2
        g = rng(1)
        a = 0.5
        A = orthogonalize(g.standard_normal((4, 4)))
        f = GradField(A, g.standard_normal(4), sign=-1, act=Activation(a))
        for _ in range(50):
            x, y = g.standard_normal(4), g.standard_normal(4)
            lhs = (f.value(x) - f.value(y)) @ (x - y)
            assert lhs <= -a * np.sum((x - y) ** 2) + 1e-12

    def test_potential_gradient_consistency(self):
        g = rng(2)
        f = GradField(g.standard_normal((4, 4)), g.standard_normal(4),
                      alpha=g.standard_normal(4), sign=1)
        z = g.standard_normal(4)
        eps = 1e-6
        num = np.array([
            (f.potential(z + eps * e) - f.potential(z - eps * e)) / (2 * eps)
            for e in np.eye(4)])
        assert np.allclose(num, f.value(z), rtol=1e-5, atol=1e-7)

    def test_split_sums_to_full(self):
        g = rng(3)
        A, b = g.standard_normal((4, 4)), g.standard_normal(4)
        alpha = g.standard_normal(4)
        full = GradField(A, b, alpha=alpha, sign=1)
        exp, con = GradField.split_expansive_contractive(A, b, alpha)
        z = g.standard_normal(4)
        assert np.allclose(exp.value(z) + con.value(z), full.value(z))


class TestSphereField:
    @pytest.mark.parametrize("parameterization", ["skew", "projector"])
    def test_orthogonal_to_state(self, parameterization):
        f = make_sphere(5, 4, parameterization)
        g = rng(5)
        for _ in range(20):
            z = g.standard_normal(5)
            val = f.value(z)
            tol = 1e-13 * max(1.0, np.linalg.norm(z) * np.linalg.norm(val))
            assert abs(z @ val) <= tol

    @pytest.mark.parametrize("parameterization", ["skew", "projector"])
    def test_jacobian_action_matches_fd(self, parameterization):
        f = make_sphere(4, 6, parameterization)
        g = rng(7)
        for _ in range(5):
            z, v = g.standard_normal(4), g.standard_normal(4)
            assert np.allclose(f.jacobian_action(z, v),
                               fd_jacobian_action(f, z, v), rtol=1e-4, atol=1e-5)

    def test_zero_state(self):
        f = make_sphere(4, 8, "projector")
        assert np.array_equal(f.value(np.zeros(4)), np.zeros(4))


class TestMassField:
    def test_zero_mass(self):
        f = make_mass(6, 9)
        g = rng(10)
        for _ in range(20):
            y = g.standard_normal(6)
            val = f.value(y)
            assert abs(np.sum(val)) <= 1e-13 * max(1.0, np.linalg.norm(val))

    def test_jacobian_action_matches_fd(self):
        f = make_mass(5, 11)
        g = rng(12)
        z, v = g.standard_normal(5), g.standard_normal(5)
        assert np.allclose(f.jacobian_action(z, v),
                           fd_jacobian_action(f, z, v), rtol=1e-4, atol=1e-5)


class TestMetricField:
    def test_contractive_in_metric(self):
        g = rng(13)
        n = 4
        R = g.standard_normal((n, n))
        M = R @ R.T + n * np.eye(n)
        f = MetricField(g.standard_normal((n, n)), g.standard_normal(n), M)
        for _ in range(50):
            x, y = g.standard_normal(n), g.standard_normal(n)
            lhs = (f.value(x) - f.value(y)) @ M @ (x - y)
            assert lhs <= 1e-12

    def test_rejects_asymmetric_metric(self):
        with pytest.raises(ValueError):
            MetricField(np.eye(2), np.zeros(2), np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_jacobian_actions(self):
        g = rng(14)
        n = 3
        R = g.standard_normal((n, n))
        M = R @ R.T + n * np.eye(n)
        f = MetricField(g.standard_normal((n, n)), g.standard_normal(n), M)
        z, v, w = g.standard_normal(n), g.standard_normal(n), g.standard_normal(n)
        assert np.allclose(f.jacobian_action(z, v),
                           fd_jacobian_action(f, z, v), rtol=1e-5, atol=1e-7)
        # transpose consistency: <Jv, w> == <v, J^T w>
        assert f.jacobian_action(z, v) @ w == pytest.approx(
            v @ f.jacobian_t_action(z, w), rel=1e-10)


class TestVolumeSplitField:
    def test_block_structure(self):
        g = rng(15)
        m, hidden = 3, 8
        u = ShearNet(g.standard_normal((hidden, m)), g.standard_normal((hidden, m)),
                     g.standard_normal(hidden))
        v = ShearNet(g.standard_normal((hidden, m)), g.standard_normal((hidden, m)),
                     g.standard_normal(hidden))
        f = VolumeSplitField(u, v)
        z = g.standard_normal(2 * m)
        val = f.value(z)
        # first block depends only on the second block of z and vice versa
        z2 = z.copy()
        z2[:m] += 1.0
        assert np.allclose(f.value(z2)[:m], val[:m])


class TestHamiltonianLift:
    def test_zero_field(self):
        lifted = lift_hamiltonian(ZeroField(3))
        assert np.array_equal(lifted.value(np.ones(6)), np.zeros(6))

    def test_linear_field(self):
        g = rng(16)
        B = g.standard_normal((3, 3))
        lifted = lift_hamiltonian(LinearField(B))
        z, p = g.standard_normal(3), g.standard_normal(3)
        out = lifted.value(np.concatenate([z, p]))
        assert np.allclose(out[:3], B @ z)
        assert np.allclose(out[3:], -B.T @ p)

    def test_second_block_matches_fd(self):
        g = rng(17)
        base = GradField(g.standard_normal((4, 4)), g.standard_normal(4),
                         alpha=g.standard_normal(4), sign=1)
        lifted = HamiltonianLift(base)
        z, p = g.standard_normal(4), g.standard_normal(4)
        eps = 1e-6
        # -d/dz [p^T f(z)] by central differences
        num = -np.array([
            (p @ base.value(z + eps * e) - p @ base.value(z - eps * e)) / (2 * eps)
            for e in np.eye(4)])
        assert np.allclose(lifted.value(np.concatenate([z, p]))[4:], num,
                           rtol=1e-5, atol=1e-6)

    def test_projected_flow_recovers_base_flow(self):
        g = rng(18)
        base = GradField(g.standard_normal((3, 3)), g.standard_normal(3),
                         alpha=0.3 * g.standard_normal(3), sign=1)
        lifted = lift_hamiltonian(base)
        z0 = g.standard_normal(3)
        direct = rk4(base, 1.0, 2000, z0)
        through_lift = rk4(lifted, 1.0, 2000, np.concatenate([z0, np.zeros(3)]))
        assert np.allclose(through_lift[:3], direct, atol=1e-8)


def test_dimension_mismatch_raises():
    f = GradField(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        f.value(np.zeros(4))
