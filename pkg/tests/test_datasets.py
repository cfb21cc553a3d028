"""Contracts of the dataset generators and the reference integrator."""

import numpy as np
import pytest

from geoflow.datasets import (Dataset, gen_flowmap_pairs,
                              gen_planar_classification, gen_regression,
                              pendulum_field, sir_field, target_f, target_g,
                              x1_field)
from geoflow.flows import rk4


class TestPlanarClassification:

    def test_radii_and_labels(self):
        data = gen_planar_classification(300, seed=3)
        r = np.linalg.norm(data.inputs, axis=1)
        assert np.all(r[data.targets == 0] <= 1.0 + 1e-12)
        inner = r[data.targets == 1] >= 1.5 - 1e-12
        outer = r[data.targets == 1] <= 2.5 + 1e-12
        assert np.all(inner) and np.all(outer)

    def test_class_separation_at_least_half(self):
        data = gen_planar_classification(200, seed=0)
        X0 = data.inputs[data.targets == 0]
        X1 = data.inputs[data.targets == 1]
        d = np.linalg.norm(X0[:, None, :] - X1[None, :, :], axis=2)
        assert d.min() >= 0.5 - 1e-9

    def test_split_partitions_everything(self):
        data = gen_planar_classification(50, seed=1)
        both = np.sort(np.concatenate([data.train_idx, data.test_idx]))
        assert np.array_equal(both, np.arange(100))

    def test_deterministic_in_seed(self):
        a = gen_planar_classification(40, seed=7)
        b = gen_planar_classification(40, seed=7)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.train_idx, b.train_idx)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            gen_planar_classification(0)


class TestRegression:

    def test_target_f_values(self):
        # f(x) = x^2 + |x| + sin x at hand-checked points
        assert target_f(0.0) == 0.0
        assert np.isclose(target_f(1.0), 2.0 + np.sin(1.0))
        assert np.isclose(target_f(-2.0), 6.0 + np.sin(-2.0))

    def test_target_g_values(self):
        assert target_g(3.0, 4.0) == 5.0
        assert target_g(0.0, 0.0) == 0.0

    def test_generator_matches_targets(self):
        data = gen_regression("f", 64, seed=2)
        assert np.allclose(data.targets[:, 0], target_f(data.inputs[:, 0]))
        data = gen_regression("g", 64, seed=2)
        assert np.allclose(data.targets[:, 0],
                           target_g(data.inputs[:, 0], data.inputs[:, 1]))

    def test_domain_box(self):
        data = gen_regression("g", 256, seed=0)
        assert np.all(np.abs(data.inputs) <= 2.0)

    def test_unknown_target(self):
        with pytest.raises(ValueError):
            gen_regression("h", 10)


class TestFields:

    def test_sir_conserves_total_mass(self):
        f = sir_field()
        g = np.random.default_rng(0)
        for _ in range(20):
            y = g.dirichlet(np.ones(3))
            assert abs(f.value(y).sum()) < 1e-15

    def test_sir_disease_free_equilibrium(self):
        f = sir_field()
        assert np.allclose(f.value(np.array([0.3, 0.0, 0.7])), 0.0)

    def test_x1_dimension_and_value(self):
        f = x1_field()
        x = np.array([0.1, -0.2, 0.3, 0.0])
        assert np.allclose(f.value(x), np.sin(x) ** 3 + x ** 3)

    def test_pendulum_energy_conserved_by_reference_flow(self):
        f = pendulum_field()
        x0 = np.array([1.0, 0.5])
        energy = lambda x: 0.5 * x[1] ** 2 - np.cos(x[0])
        x1 = rk4(f, 2.0, 2000, x0)
        assert abs(energy(x1) - energy(x0)) < 1e-8


class TestFlowmapPairs:

    def test_sir_pairs_on_simplex(self):
        data = gen_flowmap_pairs("SIR", h=1.0, n=50, seed=0)
        assert np.all(data.inputs >= 0.0)
        assert np.allclose(data.inputs.sum(axis=1), 1.0)
        # mass is invariant under the flow
        assert np.allclose(data.targets.sum(axis=1), 1.0, atol=1e-10)

    def test_pendulum_pairs_match_fine_integration(self):
        data = gen_flowmap_pairs("X2", h=0.1, n=5, seed=1)
        f = pendulum_field()
        for x, y in zip(data.inputs, data.targets):
            ref = rk4(f, 0.1, 4000, x)
            assert np.linalg.norm(y - ref) < 1e-12

    def test_box_respected(self):
        data = gen_flowmap_pairs("X1", h=0.1, n=30, box=(-0.9, 0.9), seed=0)
        assert np.all(np.abs(data.inputs) <= 0.9)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            gen_flowmap_pairs("SIR", h=0.0, n=10)
        with pytest.raises(ValueError):
            gen_flowmap_pairs("nope", h=0.1, n=10)
