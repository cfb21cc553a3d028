"""Margins, certified radii, empirical Lipschitz probing, and the L2
projected-gradient attack."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .blocks import Network, lipschitz_bound

_SQRT2 = np.sqrt(2.0)


def margin(logits, label) -> float:
    """Correct-class logit minus the best other logit; negative iff
    misclassified."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError("label out of range")
    others = np.delete(logits, label)
    return float(logits[label] - np.max(others))


def certified_radius(m: float, lip: float) -> float:
    """Radius of the L2 ball around the input inside which the prediction
    cannot change: max(0, margin) / (sqrt(2) * lip)."""
    if not lip > 0:
        raise ValueError("Lipschitz bound must be positive")
    if not np.isfinite(lip):
        return 0.0
    return max(0.0, m) / (_SQRT2 * lip)


def _margin_gradient_direction(net: Network, x, label):
    """Input gradient of the margin objective (to be decreased by the
    attack), using the current runner-up class."""
    z = net.forward(x)
    j = int(np.argmax(np.delete(z, label)))
    j = j if j < label else j + 1
    gy = np.zeros_like(z)
    gy[label] = 1.0
    gy[j] = -1.0
    return net.input_gradient(x, gy)


def _project_ball(x, x0, eps):
    d = x - x0
    nrm = np.linalg.norm(d)
    if nrm > eps:
        d *= eps / nrm
    return x0 + d


def pgd_l2(net: Network, x0, label, eps, steps=10, step_size=None, restarts=1,
           seed=0, random_start=False):
    """L2 projected gradient descent on the margin. Returns the adversarial
    point if the label flips, else None. Iterates stay in the eps-ball."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x0 = np.asarray(x0, dtype=np.float64)
    if eps == 0.0:
        return None
    step_size = eps / 4.0 if step_size is None else step_size
    g = np.random.default_rng(seed)
    for r in range(restarts):
        if random_start or r > 0:
            d = g.standard_normal(x0.shape)
            d *= eps * g.uniform() / max(np.linalg.norm(d), 1e-30)
            x = x0 + d
        else:
            x = x0.copy()
        for _ in range(steps):
            grad = _margin_gradient_direction(net, x, label)
            if not np.all(np.isfinite(grad)):
                raise ArithmeticError("non-finite attack gradient")
            nrm = np.linalg.norm(grad)
            if nrm == 0.0:
                break
            x = _project_ball(x - step_size * grad / nrm, x0, eps)
            if margin(net.forward(x), label) < 0.0:
                return x
        if margin(net.forward(x), label) < 0.0:
            return x
    return None


def empirical_lipschitz(net: Network, sampler, pairs=200, seed=0,
                        refine_steps=10, refine_lr=0.05):
    """Lower-bound probe: max difference quotient over random pairs, with a
    gradient-ascent refinement on the best pair."""
    if pairs < 1:
        raise ValueError("need at least one pair")
    g = np.random.default_rng(seed)
    best = 0.0
    best_pair = None

    def quotient(x, y):
        d = np.linalg.norm(x - y)
        if d == 0.0:
            return 0.0
        return np.linalg.norm(net.forward(x) - net.forward(y)) / d

    for _ in range(pairs):
        x = sampler(g)
        y = x + g.standard_normal(x.shape) * 10.0 ** g.uniform(-4, 0)
        qv = quotient(x, y)
        if qv > best:
            best, best_pair = qv, (x, y)
    if best_pair is not None:
        x, y = best_pair
        for _ in range(refine_steps):
            # ascend the quotient wrt y: grad of ||N(x)-N(y)|| / ||x-y||
            fx, fy = net.forward(x), net.forward(y)
            df = fy - fx
            nf = np.linalg.norm(df)
            d = y - x
            nd = np.linalg.norm(d)
            if nf == 0.0 or nd == 0.0:
                break
            gy = net.input_gradient(y, df / nf) / nd - (nf / nd ** 3) * d
            y = y + refine_lr * gy
            best = max(best, quotient(x, y))
    return float(best)


@dataclass
class CertReport:
    index: int
    label: int
    pred: int
    margin: float
    lip_bound: float
    certified_radius: float
    attack_eps: float
    attack_success: bool


class CertificationViolation(RuntimeError):
    """An attack inside the certified radius flipped a label."""


def certify_dataset(net: Network, X, labels, attack_eps=None, steps=10,
                    restarts=1, seed=0):
    """Certify every point and optionally attack it; an attack success
    strictly inside the certified radius is a hard failure."""
    lip = lipschitz_bound(net)
    reports = []
    for i, (x, label) in enumerate(zip(X, labels)):
        z = net.forward(x)
        m = margin(z, int(label))
        r = certified_radius(m, lip)
        eps = attack_eps if attack_eps is not None else 0.99 * r
        success = False
        if eps > 0:
            adv = pgd_l2(net, x, int(label), eps, steps=steps,
                         restarts=restarts, seed=seed + i)
            success = adv is not None
            if success and eps < r:
                raise CertificationViolation(
                    f"point {i}: flip at eps={eps:.3e} < radius {r:.3e}")
        reports.append(CertReport(i, int(label), int(np.argmax(z)), m, lip,
                                  r, float(eps), success))
    return reports


def write_certification(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label", "pred", "margin", "lip_bound",
                    "certified_radius", "attack_eps", "attack_success"])
        for r in reports:
            w.writerow([r.index, r.label, r.pred, r.margin, r.lip_bound,
                        r.certified_radius, r.attack_eps, int(r.attack_success)])


def attack_accuracy(net: Network, X, labels, eps, steps=10, restarts=1, seed=0):
    """Fraction of points still correctly classified under the attack."""
    correct = 0
    for i, (x, label) in enumerate(zip(X, labels)):
        if margin(net.forward(x), int(label)) <= 0.0:
            continue
        adv = pgd_l2(net, x, int(label), eps, steps=steps, restarts=restarts,
                     seed=seed + i)
        if adv is None:
            correct += 1
    return correct / len(X)
