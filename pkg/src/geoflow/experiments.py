"""Desk-scale experiment runners: planar classification with different field
families, adversarial-robustness comparison, SIR flow-map learning, scalar
regression, and dissipative flow-map fitting. All artifacts are CSV."""

from __future__ import annotations

import csv
import os

import numpy as np

from .blocks import (Network, build_lipschitz_block, build_mass_network,
                     build_presnov_block, lipschitz_bound, save_network)
from .datasets import (gen_flowmap_pairs, gen_planar_classification,
                       gen_regression, target_f, target_g)
from .layers import (AffineClassifierLayer, LiftLayer, LipschitzPairLayer,
                     ResidualBaselineLayer, _region_h2_max)
from .robust import attack_accuracy, certify_dataset, write_certification
from .train import (DiscreteGradFlowModel, LossSpec, OptimConfig,
                    TrainingDivergence, accuracy, train, write_history)

FAMILIES = ("union", "contractive", "expansive")


def build_planar_net(family, seed=0, depth=10, width=8, S=1, h=0.1,
                     constrained=False) -> Network:
    """Planar classifier: lift into width dims, depth residual flow layers
    from the chosen field family, affine head.

    union: alternating contractive and expansive steps.
    contractive: only the -P^T Sigma(P x + p) steps.
    expansive: only Sigma(Q x + q) steps; no non-expansivity region exists
    for them, so they cannot be constrained.

    With constrained=True (union and contractive only) the step-region
    projection, the lift norm cap and the head norm cap are enforced, making
    the whole map certifiably 1-Lipschitz."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if constrained and family == "expansive":
        raise ValueError("expansive-only steps admit no non-expansive region")
    layers = [LiftLayer(2, width, norm_cap=constrained, seed=seed)]
    for i in range(depth):
        layers.append(LipschitzPairLayer(
            width, S=S, pattern="single", h1=h, h2=h,
            constrained=constrained,
            use_contractive=family != "expansive",
            use_expansive=family != "contractive",
            seed=seed + 1000 * (i + 1)))
    layers.append(AffineClassifierLayer(width, 2, constrained=constrained,
                                        seed=seed + 99))
    return Network(layers)


def build_baseline_net(seed=0, depth=10, width=8, hidden=16) -> Network:
    """Unconstrained residual baseline of matched depth."""
    layers = [LiftLayer(2, width, norm_cap=False, seed=seed)]
    for i in range(depth):
        layers.append(ResidualBaselineLayer(width, hidden=hidden,
                                            seed=seed + 1000 * (i + 1)))
    layers.append(AffineClassifierLayer(width, 2, constrained=False,
                                        seed=seed + 99))
    return Network(layers)


def _default_planar_optim(seed):
    return OptimConfig(lr=0.2, epochs=40, batch=64, schedule=[(30, 10.0)],
                       seed=seed)


def split_budget(tau, S, a=0.5):
    """Split a per-layer time budget tau into (h1, h2) on the boundary of the
    non-expansivity region, giving the expansive substep as much of the budget
    as the region allows."""
    lo, hi = 0.0, min(1.0, tau)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        h2 = min(1.0, max(0.0, _region_h2_max(mid, a, S)))
        if mid + h2 > tau:
            hi = mid
        else:
            lo = mid
    h1 = 0.5 * (lo + hi)
    h2 = min(1.0, max(0.0, _region_h2_max(h1, a, S)), tau - h1)
    return h1, h2


def build_budget_net(family, T, seed=0, depth=10, width=8, S=2) -> Network:
    """Planar classifier whose residual layers spend a fixed total integration
    time T, split evenly across depth layers with frozen step sizes.

    union nets place (h1, h2) on the non-expansivity region boundary;
    contractive nets spend the whole per-layer budget on the contractive
    substep; expansive nets spend it on the expansive substep and run
    unconstrained, since no non-expansive region exists for them."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    tau = T / depth
    use_contractive = family != "expansive"
    use_expansive = family != "contractive"
    constrained = family != "expansive"
    if use_contractive and use_expansive:
        h1, h2 = split_budget(tau, S)
    elif use_contractive:
        h1, h2 = min(tau, 1.0), 0.0
    else:
        h1, h2 = 0.0, min(tau, 1.0)
    layers = [LiftLayer(2, width, norm_cap=True, seed=seed)]
    for i in range(depth):
        layers.append(LipschitzPairLayer(
            width, S=S, pattern="single", h1=h1, h2=h2,
            constrained=constrained, use_contractive=use_contractive,
            use_expansive=use_expansive, train_steps=False,
            seed=seed + 1000 * (i + 1)))
    layers.append(AffineClassifierLayer(width, 2, constrained=True,
                                        seed=seed + 99))
    return Network(layers)


def _default_ladder_optim(seed):
    return OptimConfig(lr=1.0, epochs=150, batch=64, schedule=[(110, 10.0)],
                       seed=seed)


def run_classify_planar(family, seeds=range(20), n_per_class=150, depth=10,
                        width=8, S=2, ladder=(1.0, 2.0, 4.0),
                        acc_target=0.95, optim=None, margin=0.25):
    """Per-seed (test accuracy, total time T) for one field family.

    T is found by ascending a ladder of total-time budgets with frozen step
    sizes: the reported T is the smallest budget whose trained net reaches
    acc_target on the test split. Families that never reach the target are
    charged the largest budget and report their best accuracy."""
    results = []
    for seed in seeds:
        data = gen_planar_classification(n_per_class, seed=seed)
        Xte, yte = data.test
        best_acc, best_T = 0.0, float(ladder[-1])
        for T in ladder:
            net = build_budget_net(family, T, seed=seed, depth=depth,
                                   width=width, S=S)
            try:
                train(net, data.train, LossSpec("hinge", margin=margin),
                      optim or _default_ladder_optim(seed))
            except TrainingDivergence:
                continue
            acc = accuracy(net.forward_all(Xte), yte)
            if acc > best_acc:
                best_acc = acc
            if acc >= acc_target:
                best_T = float(T)
                break
        results.append({"seed": seed, "family": family, "test_acc": best_acc,
                        "T": best_T})
    return results


def run_robust_planar(seed=0, eps_list=(0.05, 0.1, 0.2), n_per_class=150,
                      depth=10, width=8, n_attack=100, steps=10, restarts=1,
                      margin=0.25, budget=2.0):
    """Accuracy under L2-PGD for the constrained net vs the unconstrained
    baseline at each attack budget."""
    data = gen_planar_classification(n_per_class, seed=seed)
    nets = {
        "constrained": build_budget_net("union", budget, seed=seed,
                                        depth=depth, width=width),
        "baseline": build_baseline_net(seed=seed, depth=depth, width=width),
    }
    optims = {
        "constrained": _default_ladder_optim(seed),
        "baseline": OptimConfig(lr=0.01, epochs=150, batch=64,
                                schedule=[(110, 10.0)], seed=seed),
    }
    rows = []
    Xte, yte = data.test
    Xte, yte = Xte[:n_attack], yte[:n_attack]
    for name, net in nets.items():
        train(net, data.train, LossSpec("hinge", margin=margin), optims[name])
        clean = accuracy(net.forward_all(Xte), yte)
        row = {"model": name, "clean_acc": clean,
               "lip_bound": lipschitz_bound(net)}
        for eps in eps_list:
            row[f"acc_eps_{eps}"] = attack_accuracy(
                net, Xte, yte, eps, steps=steps, restarts=restarts, seed=seed)
        rows.append(row)
    return rows, nets


def run_sir_flowmap(seed=0, n=400, optim=None, n_flows=4, hidden=24):
    """Mass-preserving net trained on time-1 SIR flow pairs."""
    data = gen_flowmap_pairs("SIR", h=1.0, n=n, seed=seed)
    net = build_mass_network(3, n_flows=n_flows, hidden=hidden, h=1.0,
                             train_h=True, seed=seed)
    optim = optim or OptimConfig(lr=0.05, epochs=200, batch=64,
                                 schedule=[(150, 10.0)], seed=seed)
    history = train(net, data.train, LossSpec("flowmap_mse"), optim)
    Xte, Yte = data.test
    pred = net.forward_all(Xte)
    mse = float(np.mean(np.sum((pred - Yte) ** 2, axis=1)))
    mass_err = float(np.max(np.abs(pred.sum(axis=1) - Xte.sum(axis=1))))
    return {"test_mse": mse, "max_mass_err": mass_err}, net, history, data


def build_regression_net(width=6, k=4, hidden=24, h=0.25, in_dim=1, seed=0):
    layers = [LiftLayer(in_dim, width, norm_cap=False, seed=seed)]
    layers += build_presnov_block(width, k=k, hidden=hidden, h=h,
                                  seed=seed + 1)
    layers.append(AffineClassifierLayer(width, 1, constrained=False,
                                        seed=seed + 2))
    return Network(layers)


def run_regression(target="f", seed=0, n=512, optim=None, width=8, k=6,
                   hidden=32):
    """Scalar regression through a sphere/gradient stage composition."""
    data = gen_regression(target, n, seed=seed)
    in_dim = 1 if target == "f" else 2
    net = build_regression_net(width=width, k=k, hidden=hidden, in_dim=in_dim,
                               seed=seed)
    optim = optim or OptimConfig(lr=0.02, epochs=800, batch=32,
                                 schedule=[(600, 10.0)], seed=seed)
    history = train(net, data.train, LossSpec("mse"), optim)
    if target == "f":
        xs = np.linspace(-2.0, 2.0, 401)
        true = target_f(xs)
        pred = net.forward_all(xs[:, None])[:, 0]
    else:
        xs = np.linspace(-2.0, 2.0, 41)
        G1, G2 = np.meshgrid(xs, xs)
        pts = np.stack([G1.ravel(), G2.ravel()], axis=1)
        true = target_g(pts[:, 0], pts[:, 1])
        pred = net.forward_all(pts)[:, 0]
    max_err = float(np.max(np.abs(pred - true)))
    return {"max_abs_err": max_err}, net, history


def run_flowmap_dissipative(system="X2", seed=0, n=300, h=0.1, optim=None,
                            hidden=16):
    """Discrete-gradient residual fit of a vector field from flow pairs."""
    box = (-0.9, 0.9) if system == "X1" else (-2.0, 2.0)
    data = gen_flowmap_pairs(system, h=h, n=n, box=box, seed=seed)
    dim = data.inputs.shape[1]
    model = DiscreteGradFlowModel(dim, hidden=hidden, h=h, seed=seed)
    optim = optim or OptimConfig(lr=0.05, epochs=200, batch=64,
                                 schedule=[(150, 10.0)], seed=seed)
    history = model.fit(*data.train, optim)
    Xte, Yte = data.test
    mse = float(np.mean(np.sum(
        (np.array([model.step(x) for x in Xte]) - Yte) ** 2, axis=1)))
    return {"test_mse": mse}, model, history


# ---------------------------------------------------------------------------
# artifact writing


def _write_rows(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _decision_grid(net, lim=3.0, m=61):
    xs = np.linspace(-lim, lim, m)
    G1, G2 = np.meshgrid(xs, xs)
    pts = np.stack([G1.ravel(), G2.ravel()], axis=1)
    Z = net.forward_all(pts)
    return [{"x": p[0], "y": p[1], "pred": int(np.argmax(z)),
             "margin": float(z[int(np.argmax(z))] - np.partition(z, -2)[-2])}
            for p, z in zip(pts, Z)]


def run_experiment(cfg, out_dir, seed=0):
    """Dispatch on experiment name, write all artifacts under out_dir.
    cfg is a dict of dicts with sections network/optim/dataset/robust."""
    os.makedirs(out_dir, exist_ok=True)
    name = cfg.get("experiment")
    net_cfg = cfg.get("network", {})
    ds_cfg = cfg.get("dataset", {})
    optim = _optim_from(cfg.get("optim", {}), seed)

    if name == "classify-planar":
        seeds = range(int(ds_cfg.get("n_seeds", 20)))
        all_rows = []
        for family in FAMILIES:
            rows = run_classify_planar(
                family, seeds=seeds,
                n_per_class=int(ds_cfg.get("n_per_class", 150)),
                depth=int(net_cfg.get("depth", 10)),
                width=int(net_cfg.get("width", 8)), optim=optim)
            all_rows += rows
        _write_rows(os.path.join(out_dir, "classify_planar_metrics.csv"),
                    all_rows)
        med = []
        for family in FAMILIES:
            fam = [r for r in all_rows if r["family"] == family]
            med.append({
                "family": family,
                "median_acc": float(np.median([r["test_acc"] for r in fam])),
                "median_T": float(np.median([r["T"] for r in fam])),
            })
        _write_rows(os.path.join(out_dir, "classify_planar_medians.csv"), med)
        return med

    if name == "robust-planar":
        rows, nets = run_robust_planar(
            seed=seed, depth=int(net_cfg.get("depth", 10)),
            width=int(net_cfg.get("width", 8)),
            n_per_class=int(ds_cfg.get("n_per_class", 200)))
        _write_rows(os.path.join(out_dir, "robust_planar.csv"), rows)
        for tag, net in nets.items():
            save_network(net, os.path.join(out_dir, f"model_{tag}.txt"))
            _write_rows(os.path.join(out_dir, f"boundary_{tag}.csv"),
                        _decision_grid(net))
        return rows

    if name == "sir-flowmap":
        metrics, net, history, data = run_sir_flowmap(
            seed=seed, n=int(ds_cfg.get("n", 400)), optim=optim)
        write_history(os.path.join(out_dir, "history.csv"), history)
        save_network(net, os.path.join(out_dir, "model.txt"))
        _write_rows(os.path.join(out_dir, "sir_metrics.csv"), [metrics])
        Xte, Yte = data.test
        pred = net.forward_all(Xte)
        _write_rows(os.path.join(out_dir, "sir_predictions.csv"), [
            {"x1": x[0], "x2": x[1], "x3": x[2], "y1": y[0], "y2": y[1],
             "y3": y[2], "p1": p[0], "p2": p[1], "p3": p[2]}
            for x, y, p in zip(Xte, Yte, pred)])
        return metrics

    if name == "regression":
        target = ds_cfg.get("target", "f")
        metrics, net, history = run_regression(target, seed=seed, optim=optim)
        write_history(os.path.join(out_dir, "history.csv"), history)
        save_network(net, os.path.join(out_dir, "model.txt"))
        xs = np.linspace(-2.0, 2.0, 401)
        if target == "f":
            rows = [{"x": x, "true": target_f(x),
                     "pred": float(net.forward(np.array([x]))[0])}
                    for x in xs]
        else:
            rows = [{"x": x, "y": x, "true": target_g(x, x),
                     "pred": float(net.forward(np.array([x, x]))[0])}
                    for x in xs]
        _write_rows(os.path.join(out_dir, "regression_curve.csv"), rows)
        _write_rows(os.path.join(out_dir, "regression_metrics.csv"), [metrics])
        return metrics

    if name == "flowmap-dissipative":
        system = ds_cfg.get("system", "X2")
        metrics, model, history = run_flowmap_dissipative(
            system, seed=seed, optim=optim)
        write_history(os.path.join(out_dir, "history.csv"), history)
        _write_rows(os.path.join(out_dir, "flowmap_metrics.csv"), [metrics])
        return metrics

    if name == "certify-planar":
        data = gen_planar_classification(int(ds_cfg.get("n_per_class", 150)),
                                         seed=seed)
        net = build_budget_net("union", 2.0, seed=seed,
                               depth=int(net_cfg.get("depth", 10)),
                               width=int(net_cfg.get("width", 8)))
        train(net, data.train, LossSpec("hinge", margin=0.25),
              optim or _default_ladder_optim(seed))
        Xte, yte = data.test
        reports = certify_dataset(net, Xte, yte, steps=10, restarts=5,
                                  seed=seed)
        write_certification(os.path.join(out_dir, "certification.csv"),
                            reports)
        save_network(net, os.path.join(out_dir, "model.txt"))
        return reports

    raise ValueError(f"unknown experiment {name!r}")


def _optim_from(section, seed):
    if not section:
        return None
    schedule = []
    for item in str(section.get("schedule", "")).split(","):
        if item.strip():
            ep, factor = item.split(":")
            schedule.append((int(ep), float(factor)))
    return OptimConfig(
        lr=float(section.get("lr", 0.05)),
        epochs=int(section.get("epochs", 100)),
        batch=int(section.get("batch", 64)),
        schedule=schedule,
        seed=int(section.get("seed", seed)))
