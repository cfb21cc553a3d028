import numpy as np
import pytest

from geoflow.layers import (AffineClassifierLayer, GradFlowLayer,
                            LiftLayer, LipschitzPairLayer, MassFlowLayer,
                            MassLiftLayer, MassProjectLayer,
                            ResidualBaselineLayer, SphereFlowLayer, StepPair,
                            project_steps)
from geoflow.linalg import rng


def grid_projection_oracle(h1, h2, a, S, m=1500):
    """Brute force: nearest feasible point on a dense grid over [0,1]^2."""
    hs = np.linspace(0.0, 1.0, m)
    H1, H2 = np.meshgrid(hs, hs, indexing="ij")
    x = H1 / S
    region = (1.0 + H2 / S) * np.sqrt(np.maximum(0.0, 1.0 - 2 * x * a + x * x))
    ok = region <= 1.0 + 1e-12
    d2 = (H1 - h1) ** 2 + (H2 - h2) ** 2
    d2[~ok] = np.inf
    i = np.unravel_index(np.argmin(d2), d2.shape)
    return H1[i], H2[i]


def fd_param_grads(layer, X, GY, names=None, eps=1e-6):
    """Central differences of sum(GY * forward(X)) wrt each parameter."""
    out = {}
    for name in (names or layer.params):
        p = layer.params[name]
        g = np.zeros_like(p)
        it = np.nditer(np.atleast_1d(p), flags=["multi_index"])
        for _ in it:
            idx = it.multi_index if p.ndim else ...
            orig = p[idx].copy() if p.ndim else float(p)
            p[idx] = orig + eps
            up = float(np.sum(GY * layer.forward(X)))
            p[idx] = orig - eps
            dn = float(np.sum(GY * layer.forward(X)))
            p[idx] = orig
            g[idx] = (up - dn) / (2 * eps)
        out[name] = g
    return out


def fd_input_grad(layer, X, GY, eps=1e-6):
    g = np.zeros_like(X)
    for i in range(X.size):
        idx = np.unravel_index(i, X.shape)
        orig = X[idx]
        X[idx] = orig + eps
        up = float(np.sum(GY * layer.forward(X)))
        X[idx] = orig - eps
        dn = float(np.sum(GY * layer.forward(X)))
        X[idx] = orig
        g[idx] = (up - dn) / (2 * eps)
    return g


def check_layer_grads(layer, X, seed=0, rtol=1e-4, atol=1e-6, names=None):
    g = rng(seed)
    Y, cache = layer.forward_cached(X)
    GY = g.standard_normal(Y.shape)
    GX, grads = layer.backward(cache, GY)
    fdX = fd_input_grad(layer, X.copy(), GY)
    assert np.allclose(GX, fdX, rtol=rtol, atol=atol), f"input grad {layer.kind}"
    fdP = fd_param_grads(layer, X, GY, names=names)
    for name, fd in fdP.items():
        assert np.allclose(grads[name], fd, rtol=rtol, atol=atol), (
            f"{layer.kind} param {name}: max diff "
            f"{np.max(np.abs(np.atleast_1d(grads[name] - fd)))}")


class TestStepRegion:
    def test_origin_feasible(self):
        assert StepPair(0.0, 0.0).feasible()

    def test_full_contractive_feasible(self):
        # a = 0.5: region value at (1, 0) is sqrt(1 - 1 + 1) = 1
        assert StepPair(1.0, 0.0, a=0.5).feasible()

    def test_pure_expansive_infeasible(self):
        assert not StepPair(0.0, 0.5, a=0.5).feasible()

    def test_substeps_enlarge_region(self):
        p1 = StepPair(0.8, 0.4, a=0.5, S=1)
        p4 = StepPair(0.8, 0.4, a=0.5, S=4)
        assert p4.region_value() < p1.region_value()

    def test_negative_steps_rejected(self):
        with pytest.raises(ValueError):
            StepPair(-0.1, 0.0)

    @pytest.mark.parametrize("h1,h2,a,S", [
        (0.0, 0.5, 0.5, 1),
        (1.0, 1.0, 0.5, 1),
        (0.2, 0.9, 0.5, 1),
        (0.9, 0.8, 0.3, 2),
        (1.0, 1.0, 0.5, 4),
        (0.5, 0.05, 0.5, 1),
    ])
    def test_projection_matches_grid_oracle(self, h1, h2, a, S):
        proj = project_steps(StepPair(h1, h2, a, S))
        oh1, oh2 = grid_projection_oracle(h1, h2, a, S)
        d_proj = (proj.h1 - h1) ** 2 + (proj.h2 - h2) ** 2
        d_oracle = (oh1 - h1) ** 2 + (oh2 - h2) ** 2
        # the exact projection can only be closer than the grid point, and
        # the grid point can beat it by at most one grid cell of slack
        assert d_proj <= d_oracle + 1e-6
        assert np.sqrt(d_oracle) - np.sqrt(d_proj) <= 2e-3

    def test_projection_feasible_and_idempotent(self):
        g = rng(0)
        for _ in range(50):
            pair = StepPair(g.uniform(0, 1), g.uniform(0, 1), 0.5,
                            int(g.integers(1, 5)))
            proj = project_steps(pair)
            assert proj.region_value() <= 1.0 + 1e-12
            again = project_steps(proj)
            assert again.h1 == pytest.approx(proj.h1, abs=1e-12)
            assert again.h2 == pytest.approx(proj.h2, abs=1e-12)

    def test_feasible_point_unchanged(self):
        pair = StepPair(0.3, 0.1, 0.5, 2)
        assert pair.feasible()
        proj = project_steps(pair)
        assert (proj.h1, proj.h2) == (0.3, 0.1)


class TestLipschitzPairLayer:
    @pytest.mark.parametrize("pattern", ["single", "double"])
    @pytest.mark.parametrize("expansive", ["grad_free", "grad_grad"])
    def test_gradients(self, pattern, expansive):
        g = rng(5)
        layer = LipschitzPairLayer(4, S=2, pattern=pattern, expansive=expansive,
                                   h1=0.31, h2=0.17, seed=3)
        layer.params["p"][:] = 0.1 * g.standard_normal(4)
        layer.params["q"][:] = 0.1 * g.standard_normal(4)
        X = g.standard_normal((3, 4))
        check_layer_grads(layer, X, seed=6)

    def test_lipschitz_bound_not_exceeded_empirically(self):
        g = rng(9)
        layer = LipschitzPairLayer(3, S=1, h1=0.8, h2=0.05, seed=1)
        layer.project()
        bound = layer.lip_factor()
        assert bound <= 1.0 + 1e-9
        worst = 0.0
        for _ in range(300):
            x, y = g.standard_normal(3), g.standard_normal(3)
            num = np.linalg.norm(layer.forward(x[None])[0] - layer.forward(y[None])[0])
            worst = max(worst, num / np.linalg.norm(x - y))
        assert worst <= bound + 1e-9

    def test_project_enforces_region(self):
        layer = LipschitzPairLayer(3, h1=0.05, h2=0.9)
        assert not layer.step_pair().feasible()
        layer.project()
        assert layer.step_pair().feasible()

    def test_disabled_parts(self):
        g = rng(11)
        X = g.standard_normal((2, 3))
        layer = LipschitzPairLayer(3, use_contractive=False, h1=0.4, h2=0.3,
                                   constrained=False)
        expansive_only = LipschitzPairLayer(3, use_contractive=False, h1=0.0,
                                            h2=0.3, constrained=False)
        expansive_only.params["Wq"][:] = layer.params["Wq"]
        assert np.allclose(layer.forward(X), expansive_only.forward(X))


class TestSimpleLayers:
    def test_residual_baseline_gradients(self):
        g = rng(2)
        layer = ResidualBaselineLayer(3, hidden=5, seed=4)
        layer.params["b"][:] = 0.1 * g.standard_normal(5)
        check_layer_grads(layer, g.standard_normal((4, 3)), seed=1)

    def test_residual_baseline_bound(self):
        layer = ResidualBaselineLayer(3, hidden=5, seed=4)
        g = rng(3)
        bound = layer.lip_factor()
        for _ in range(200):
            x, y = g.standard_normal(3), g.standard_normal(3)
            num = np.linalg.norm(layer.forward(x[None]) - layer.forward(y[None]))
            assert num <= bound * np.linalg.norm(x - y) + 1e-12

    def test_lift_gradients_and_cap(self):
        g = rng(6)
        layer = LiftLayer(3, 6, norm_cap=True, alpha=0.7, seed=2)
        check_layer_grads(layer, g.standard_normal((4, 3)), seed=2)
        layer.params["W"] *= 10.0
        layer.project()
        assert layer.lip_factor() <= 0.7 * (1.0 + 1e-9)

    def test_affine_gradients(self):
        g = rng(7)
        layer = AffineClassifierLayer(4, 2, seed=3)
        layer.params["b"][:] = g.standard_normal(2)
        check_layer_grads(layer, g.standard_normal((3, 4)), seed=3)

    def test_mass_lift_project_roundtrip_sum(self):
        g = rng(8)
        lift = MassLiftLayer(3, 3)
        proj = MassProjectLayer(3, 3)
        X = g.standard_normal((5, 3))
        Y = proj.forward(lift.forward(X))
        assert np.allclose(Y.sum(axis=1), X.sum(axis=1), atol=1e-14)

    def test_mass_project_backward(self):
        g = rng(9)
        layer = MassProjectLayer(2, 2)
        X = g.standard_normal((3, 4))
        GY = g.standard_normal((3, 2))
        _, cache = layer.forward_cached(X)
        GX, _ = layer.backward(cache, GY)
        assert np.allclose(GX, fd_input_grad(layer, X, GY), rtol=1e-6, atol=1e-8)


class TestFlowLayers:
    def test_mass_flow_gradients(self):
        g = rng(10)
        layer = MassFlowLayer(4, hidden=6, h=0.37, S=2, train_h=True, seed=5)
        layer.params["b"][:] = 0.1 * g.standard_normal(6)
        check_layer_grads(layer, g.standard_normal((3, 4)), seed=5)

    def test_mass_flow_preserves_sum(self):
        g = rng(11)
        layer = MassFlowLayer(5, h=1.0, S=3, seed=6)
        X = g.standard_normal((8, 5))
        Y = layer.forward(X)
        assert np.allclose(Y.sum(axis=1), X.sum(axis=1), atol=1e-12)

    def test_sphere_flow_gradients(self):
        g = rng(12)
        layer = SphereFlowLayer(4, hidden=6, h=0.23, S=2, seed=7)
        layer.params["b"][:] = 0.1 * g.standard_normal(6)
        check_layer_grads(layer, g.standard_normal((3, 4)), seed=7, rtol=2e-4)

    def test_sphere_flow_preserves_norms(self):
        g = rng(13)
        layer = SphereFlowLayer(5, h=0.8, S=4, seed=8)
        X = g.standard_normal((10, 5))
        Y = layer.forward(X)
        assert np.allclose(np.linalg.norm(Y, axis=1), np.linalg.norm(X, axis=1),
                           atol=1e-13)

    @pytest.mark.parametrize("sign,part", [(1, "pos"), (-1, "neg")])
    def test_grad_flow_gradients(self, sign, part):
        g = rng(14)
        layer = GradFlowLayer(3, hidden=6, h=0.4, sign=sign, part=part, seed=9)
        # keep alpha away from the sign kink at zero
        al = layer.params["alpha"]
        al[np.abs(al) < 0.2] = 0.5
        layer.params["b"][:] = 0.1 * g.standard_normal(6)
        check_layer_grads(layer, g.standard_normal((4, 3)), seed=9)
