"""Command-line entry point for the experiment suite.

Exit codes: 0 success, 1 validation error, 2 training divergence,
3 certification-soundness violation."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .blocks import build_lipschitz_block, load_network, Network, lipschitz_bound
from .config import ConfigError, parse_config
from .datasets import gen_planar_classification
from .experiments import run_experiment
from .robust import (CertificationViolation, certify_dataset, pgd_l2,
                     write_certification)
from .train import TrainingDivergence

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_CERT_VIOLATION = 3


def _build_parser():
    p = argparse.ArgumentParser(prog="geoflow",
                                description="structure-preserving flow-map "
                                            "networks: training, attacks, "
                                            "certification")
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="artifact directory")
    p.add_argument("--experiment", help="experiment name override")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", help="run a training experiment")
    atk = sub.add_parser("attack", help="PGD-attack a saved model")
    atk.add_argument("--model", required=True)
    atk.add_argument("--eps", type=float, default=0.1)
    crt = sub.add_parser("certify", help="certify a saved model on the "
                                         "planar test set")
    crt.add_argument("--model", required=True)
    sub.add_parser("flowmap", help="run a flow-map learning experiment")
    swp = sub.add_parser("sweep", help="multi-seed experiment sweep")
    swp.add_argument("--n-seeds", type=int, default=5)
    sub.add_parser("selftest", help="quick structural sanity checks")
    return p


def _load_cfg(args, default_experiment):
    cfg = parse_config(args.config) if args.config else {}
    if args.experiment:
        cfg["experiment"] = args.experiment
    cfg.setdefault("experiment", default_experiment)
    return cfg


def _cmd_train(args):
    cfg = _load_cfg(args, "classify-planar")
    result = run_experiment(cfg, args.out, seed=args.seed)
    print(f"experiment {cfg['experiment']} done: {result}")
    return EXIT_OK


def _cmd_flowmap(args):
    cfg = _load_cfg(args, "sir-flowmap")
    result = run_experiment(cfg, args.out, seed=args.seed)
    print(f"experiment {cfg['experiment']} done: {result}")
    return EXIT_OK


def _cmd_attack(args):
    net = load_network(args.model)
    data = gen_planar_classification(100, seed=args.seed)
    Xte, yte = data.test
    flips = 0
    for i, (x, label) in enumerate(zip(Xte, yte)):
        adv = pgd_l2(net, x, int(label), args.eps, seed=args.seed + i)
        flips += adv is not None
    print(f"attack eps={args.eps}: {flips}/{len(Xte)} flips")
    return EXIT_OK


def _cmd_certify(args):
    net = load_network(args.model)
    data = gen_planar_classification(100, seed=args.seed)
    Xte, yte = data.test
    reports = certify_dataset(net, Xte, yte, restarts=5, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "certification.csv")
    write_certification(path, reports)
    n_cert = sum(r.certified_radius > 0 for r in reports)
    print(f"certified {n_cert}/{len(reports)} points; report at {path}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _load_cfg(args, "classify-planar")
    results = []
    for seed in range(args.n_seeds):
        out = os.path.join(args.out, f"seed_{seed}")
        results.append(run_experiment(cfg, out, seed=seed))
    print(f"sweep of {args.n_seeds} seeds done under {args.out}")
    return EXIT_OK


def _cmd_selftest(args):
    g = np.random.default_rng(args.seed)
    net = Network(build_lipschitz_block(6, 4, S=2, seed=args.seed))
    net.project()
    bound = lipschitz_bound(net)
    assert bound <= 1.0 + 1e-9, f"certified bound {bound} exceeds 1"
    X = g.standard_normal((16, 6))
    Y = net.forward_all(X)
    assert np.all(np.isfinite(Y))
    print(f"selftest ok: constrained block bound {bound:.12f}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "attack": _cmd_attack,
    "certify": _cmd_certify,
    "flowmap": _cmd_flowmap,
    "sweep": _cmd_sweep,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CertificationViolation as exc:
        print(f"certification violated: {exc}", file=sys.stderr)
        return EXIT_CERT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
