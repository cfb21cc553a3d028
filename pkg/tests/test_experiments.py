"""Experiment runners at reduced scale: network construction invariants,
budget accounting, artifact layout, and dispatch errors."""

import os

import numpy as np
import pytest

from geoflow.blocks import lipschitz_bound
from geoflow.experiments import (build_baseline_net, build_budget_net,
                                 build_planar_net, run_classify_planar,
                                 run_experiment, split_budget)
from geoflow.layers import _region_h2_max
from geoflow.train import OptimConfig


class TestSplitBudget:

    @pytest.mark.parametrize("tau", [0.05, 0.2, 0.5, 1.0, 1.9])
    @pytest.mark.parametrize("S", [1, 2, 4])
    def test_on_region_boundary_and_budget(self, tau, S):
        h1, h2 = split_budget(tau, S)
        assert 0.0 <= h1 <= 1.0 and 0.0 <= h2 <= 1.0
        assert h1 + h2 <= tau + 1e-9
        # h2 saturates either the region bound or the remaining budget
        cap = min(1.0, max(0.0, _region_h2_max(h1, 0.5, S)))
        assert h2 >= min(cap, tau - h1) - 1e-9

    def test_small_budget_spent_fully(self):
        h1, h2 = split_budget(0.1, 2)
        assert h1 + h2 == pytest.approx(0.1, abs=1e-9)


class TestBudgetNet:

    @pytest.mark.parametrize("family", ["union", "contractive"])
    def test_constrained_families_are_1_lipschitz(self, family):
        net = build_budget_net(family, 2.0, seed=0, depth=4, width=6)
        net.project()
        assert lipschitz_bound(net) <= 1.0 + 1e-9

    @pytest.mark.parametrize("family,T", [("union", 1.0), ("union", 4.0),
                                          ("contractive", 2.0),
                                          ("expansive", 2.0)])
    def test_total_time_matches_budget(self, family, T):
        net = build_budget_net(family, T, seed=0, depth=5, width=4)
        assert net.total_time() == pytest.approx(T, abs=1e-6)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            build_budget_net("spiral", 1.0)

    def test_planar_net_rejects_constrained_expansive(self):
        with pytest.raises(ValueError):
            build_planar_net("expansive", constrained=True)

    def test_baseline_net_runs(self):
        net = build_baseline_net(seed=0, depth=3, width=4)
        Y = net.forward_all(np.random.default_rng(0).normal(size=(8, 2)))
        assert Y.shape == (8, 2) and np.all(np.isfinite(Y))


class TestClassifyLadder:

    def test_reports_smallest_passing_budget(self):
        # trivially low target: the first rung always passes
        rows = run_classify_planar("union", seeds=[0], n_per_class=30,
                                   depth=2, ladder=(0.5, 1.0),
                                   acc_target=0.0,
                                   optim=OptimConfig(lr=0.5, epochs=3,
                                                     batch=32, seed=0))
        assert rows[0]["T"] == 0.5

    def test_unreachable_target_charges_max_budget(self):
        rows = run_classify_planar("contractive", seeds=[0], n_per_class=30,
                                   depth=2, ladder=(0.5, 1.0),
                                   acc_target=1.1,
                                   optim=OptimConfig(lr=0.5, epochs=3,
                                                     batch=32, seed=0))
        assert rows[0]["T"] == 1.0
        assert 0.0 <= rows[0]["test_acc"] <= 1.0


class TestRunExperiment:

    def test_unknown_name(self, tmp_path):
        with pytest.raises(ValueError):
            run_experiment({"experiment": "bogus"}, str(tmp_path))

    def test_regression_artifacts(self, tmp_path):
        cfg = {"experiment": "regression",
               "optim": {"lr": "0.02", "epochs": "5", "batch": "64"}}
        out = str(tmp_path / "reg")
        metrics = run_experiment(cfg, out, seed=0)
        assert "max_abs_err" in metrics
        for fname in ("history.csv", "model.txt", "regression_curve.csv",
                      "regression_metrics.csv"):
            assert os.path.exists(os.path.join(out, fname)), fname

    def test_flowmap_dissipative_artifacts(self, tmp_path):
        cfg = {"experiment": "flowmap-dissipative",
               "dataset": {"system": "X2"},
               "optim": {"lr": "0.05", "epochs": "5", "batch": "64"}}
        out = str(tmp_path / "fm")
        metrics = run_experiment(cfg, out, seed=0)
        assert np.isfinite(metrics["test_mse"])
        assert os.path.exists(os.path.join(out, "flowmap_metrics.csv"))
