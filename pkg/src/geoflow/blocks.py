"""Network assembly: layer composition, step-size constraints, certified
Lipschitz bounds, switching schedules, and model (de)serialization."""

from __future__ import annotations

import numpy as np

from .fields import VectorField
from .flows import rk4
from .layers import (AffineClassifierLayer, GradFlowLayer, Layer, LiftLayer,
                     LipschitzPairLayer, MassFlowLayer, MassLiftLayer,
                     MassProjectLayer, ResidualBaselineLayer, SphereFlowLayer,
                     StepPair, project_steps)

__all__ = [
    "Network", "PresnovStageLayer", "SwitchSchedule", "StepPair",
    "project_steps", "lipschitz_bound", "build_lipschitz_block",
    "build_presnov_block", "build_mass_network", "save_network",
    "load_network",
]


class PresnovStageLayer(Layer):
    """One approximation stage: a norm-preserving sphere step followed by the
    expansive and contractive halves of a gradient step, all sharing one
    trainable step size."""

    kind = "presnov_stage"

    def __init__(self, n, hidden=16, h=0.1, S=1, seed=0, a=0.5):
        super().__init__()
        self.in_dim = self.out_dim = n
        self.hidden = hidden
        self.S = int(S)
        self.a = a
        g = np.random.default_rng(seed)
        sphere = SphereFlowLayer(n, hidden=hidden, h=h, S=S, train_h=True,
                                 seed=seed, a=a)
        self.params = {
            "Bs": sphere.params["B"],
            "Cs": sphere.params["C"],
            "bs": sphere.params["b"],
            "A": g.standard_normal((hidden, n)) / np.sqrt(n),
            "b": np.zeros(hidden),
            # the sign split of alpha decides expansive vs contractive parts
            "alpha": g.uniform(-1.0, 1.0, hidden),
            "h": sphere.params["h"],
        }
        self._sphere = sphere
        shared = {"A": self.params["A"], "b": self.params["b"],
                  "alpha": self.params["alpha"], "h": self.params["h"]}
        self._expansive = GradFlowLayer(n, sign=+1, part="pos", params=shared, a=a)
        self._contractive = GradFlowLayer(n, sign=-1, part="neg", params=shared, a=a)

    def forward_cached(self, X):
        X, cs = self._sphere.forward_cached(X)
        X, ce = self._expansive.forward_cached(X)
        X, cc = self._contractive.forward_cached(X)
        return X, (cs, ce, cc)

    def backward(self, cache, GY):
        cs, ce, cc = cache
        grads = self.zero_grads()
        GY, g = self._contractive.backward(cc, GY)
        for k in ("A", "b", "alpha", "h"):
            grads[k] += g[k]
        GY, g = self._expansive.backward(ce, GY)
        for k in ("A", "b", "alpha", "h"):
            grads[k] += g[k]
        GY, g = self._sphere.backward(cs, GY)
        grads["Bs"] += g["B"]
        grads["Cs"] += g["C"]
        grads["bs"] += g["b"]
        grads["h"] += g["h"]
        return GY, grads


class SwitchSchedule:
    """Piecewise-constant switching signal: list of (field index, duration)."""

    def __init__(self, signal):
        self.signal = [(int(i), float(t)) for i, t in signal]
        if any(t <= 0 for _, t in self.signal):
            raise ValueError("durations must be positive")

    def balance(self, rates):
        """Sum of rate * duration; rates[i] should be -mu for contractive
        fields and +L for merely Lipschitz ones. Non-expansive overall when
        the result is <= 0."""
        return sum(rates[i] * t for i, t in self.signal)

    def compose_flow(self, fields: list[VectorField], x, steps_per_unit=1000):
        """High-resolution integration of the switching system."""
        for i, t in self.signal:
            steps = max(1, int(round(steps_per_unit * t)))
            x = rk4(fields[i], t, steps, x)
        return x


class Network:
    """Ordered layer composition with constraint bookkeeping."""

    def __init__(self, layers: list[Layer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims mismatch: {prev.kind}({prev.out_dim}) -> "
                    f"{nxt.kind}({nxt.in_dim})")
        self.layers = list(layers)

    @property
    def in_dim(self):
        return self.layers[0].in_dim if self.layers else None

    @property
    def out_dim(self):
        return self.layers[-1].out_dim if self.layers else None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.forward_all(x[None, :])[0]

    def forward_all(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.layers and X.shape[1] != self.in_dim:
            raise ValueError(f"input dim {X.shape[1]} != network dim {self.in_dim}")
        for layer in self.layers:
            X = layer.forward(X)
        return X

    def forward_cached(self, X):
        caches = []
        for layer in self.layers:
            X, c = layer.forward_cached(X)
            caches.append(c)
        return X, caches

    def backward(self, caches, GY):
        """Returns (GX, per-layer grads list, reverse order restored)."""
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            GY, grads[i] = self.layers[i].backward(caches[i], GY)
        return GY, grads

    def input_gradient(self, x, gy):
        """Gradient of gy . N(x) with respect to the single input x."""
        _, caches = self.forward_cached(np.asarray(x, dtype=np.float64)[None, :])
        GX, _ = self.backward(caches, np.asarray(gy, dtype=np.float64)[None, :])
        return GX[0]

    def project(self):
        for layer in self.layers:
            layer.project()

    def step_pairs(self):
        return [l.step_pair() for l in self.layers
                if isinstance(l, LipschitzPairLayer)]

    def constraint_slack(self):
        """Most-violated region slack, 1 - region_value (>= 0 is feasible)."""
        pairs = self.step_pairs()
        if not pairs:
            return 0.0
        return min(1.0 - p.region_value() for p in pairs)

    def total_time(self):
        t = 0.0
        for l in self.layers:
            if isinstance(l, LipschitzPairLayer):
                t += l.total_time()
            elif "h" in l.params:
                t += abs(float(l.params["h"]))
        return t


def lipschitz_bound(net: Network) -> float:
    """Product of certified per-layer Lipschitz factors. Layers with no
    certifiable bound contribute infinity rather than failing."""
    out = 1.0
    for layer in net.layers:
        out *= layer.lip_factor()
    return float(out)


def forward(net: Network, x):
    return net.forward(x)


def forward_all(net: Network, X):
    return net.forward_all(X)


# ---------------------------------------------------------------------------
# builders


def build_lipschitz_block(n, depth, S=2, a=0.5, pattern="grad_free",
                          h1=0.1, h2=0.1, seed=0) -> list[Layer]:
    """depth interleaved contractive/expansive residual blocks
    (half-step pattern), each with its own trainable step pair and the
    region constraint attached."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if pattern not in ("grad_free", "grad_grad"):
        raise ValueError(f"unknown pattern {pattern!r}")
    layers = []
    for i in range(depth):
        layer = LipschitzPairLayer(n, a=a, S=S, pattern="double",
                                   expansive=pattern, h1=h1, h2=h2,
                                   constrained=True, seed=seed + 1000 * i)
        layers.append(layer)
    return layers


def build_presnov_block(n, k, hidden=16, h=0.1, S=1, a=0.5, seed=0) -> list[Layer]:
    """k sphere-then-gradient stages with a shared step size per stage."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [PresnovStageLayer(n, hidden=hidden, h=h, S=S, a=a,
                              seed=seed + 1000 * i) for i in range(k)]


def build_mass_network(k, s=None, n_flows=4, hidden=16, h=1.0, train_h=False,
                       seed=0) -> Network:
    """Mass-preserving net: zero-padding lift, Euler flows on mass fields,
    sum-redistributing projection. With s == k (the default) every layer
    preserves the component sum exactly."""
    s = k if s is None else s
    n = k + s
    layers: list[Layer] = [MassLiftLayer(k, s)]
    for i in range(n_flows):
        layers.append(MassFlowLayer(n, hidden=hidden, h=h / n_flows,
                                    train_h=train_h, seed=seed + 31 * i))
    layers.append(MassProjectLayer(k, s))
    return Network(layers)


# ---------------------------------------------------------------------------
# serialization: versioned flat text, bit-exact via hexadecimal floats

_HEADER = "geoflow-model v1"


def _layer_config(layer: Layer) -> dict:
    cfg = {"kind": layer.kind, "in_dim": layer.in_dim, "out_dim": layer.out_dim}
    if isinstance(layer, LipschitzPairLayer):
        cfg.update(a=layer.act.a, S=layer.S, pattern=layer.pattern,
                   expansive=layer.expansive, constrained=int(layer.constrained),
                   use_contractive=int(layer.use_contractive),
                   use_expansive=int(layer.use_expansive),
                   train_steps=int(layer.train_steps))
    elif isinstance(layer, ResidualBaselineLayer):
        cfg.update(a=layer.act.a, hidden=layer.params["A"].shape[0])
    elif isinstance(layer, LiftLayer):
        cfg.update(norm_cap=int(layer.constrained))
    elif isinstance(layer, AffineClassifierLayer):
        cfg.update(constrained=int(layer.constrained))
    elif isinstance(layer, (MassLiftLayer, MassProjectLayer)):
        cfg.update(k=layer.k, s=layer.s)
    elif isinstance(layer, MassFlowLayer):
        cfg.update(a=layer.act.a, S=layer.S, hidden=layer.params["C"].shape[0],
                   train_h=int(layer.train_h))
    elif isinstance(layer, SphereFlowLayer):
        cfg.update(a=layer.act.a, S=layer.S, hidden=layer.params["C"].shape[0],
                   train_h=int(layer.train_h))
    elif isinstance(layer, PresnovStageLayer):
        cfg.update(a=layer.a, S=layer.S, hidden=layer.hidden)
    elif isinstance(layer, GradFlowLayer):
        cfg.update(a=layer.act.a, sign=layer.sign, part=layer.part,
                   hidden=layer.params["A"].shape[0], train_h=int(layer.train_h))
    return cfg


def _layer_from_config(cfg: dict) -> Layer:
    kind = cfg["kind"]
    n = int(cfg["in_dim"])
    if kind == "lipschitz_pair":
        return LipschitzPairLayer(
            n, a=float(cfg["a"]), S=int(cfg["S"]), pattern=cfg["pattern"],
            expansive=cfg["expansive"], constrained=bool(int(cfg["constrained"])),
            use_contractive=bool(int(cfg["use_contractive"])),
            use_expansive=bool(int(cfg["use_expansive"])),
            train_steps=bool(int(cfg.get("train_steps", 1))))
    if kind == "residual_baseline":
        return ResidualBaselineLayer(n, hidden=int(cfg["hidden"]), a=float(cfg["a"]))
    if kind == "lift":
        return LiftLayer(n, int(cfg["out_dim"]), norm_cap=bool(int(cfg["norm_cap"])))
    if kind == "affine":
        return AffineClassifierLayer(n, int(cfg["out_dim"]),
                                     constrained=bool(int(cfg["constrained"])))
    if kind == "mass_lift":
        return MassLiftLayer(int(cfg["k"]), int(cfg["s"]))
    if kind == "mass_project":
        return MassProjectLayer(int(cfg["k"]), int(cfg["s"]))
    if kind == "mass_flow":
        return MassFlowLayer(n, hidden=int(cfg["hidden"]), S=int(cfg["S"]),
                             train_h=bool(int(cfg["train_h"])), a=float(cfg["a"]))
    if kind == "sphere_flow":
        return SphereFlowLayer(n, hidden=int(cfg["hidden"]), S=int(cfg["S"]),
                               train_h=bool(int(cfg["train_h"])), a=float(cfg["a"]))
    if kind == "presnov_stage":
        return PresnovStageLayer(n, hidden=int(cfg["hidden"]), S=int(cfg["S"]),
                                 a=float(cfg["a"]))
    if kind == "grad_flow":
        return GradFlowLayer(n, hidden=int(cfg["hidden"]), sign=int(cfg["sign"]),
                             part=cfg["part"], train_h=bool(int(cfg["train_h"])),
                             a=float(cfg["a"]))
    raise ValueError(f"unknown layer kind {kind!r}")


def save_network(net: Network, path):
    lines = [_HEADER]
    for i, layer in enumerate(net.layers):
        cfg = _layer_config(layer)
        meta = " ".join(f"{k}={v}" for k, v in cfg.items() if k != "kind")
        lines.append(f"layer {i} {cfg['kind']} {meta}")
        for name in sorted(layer.params):
            arr = np.atleast_1d(np.asarray(layer.params[name], dtype=np.float64))
            shape = "x".join(str(d) for d in arr.shape)
            lines.append(f"param {name} {shape}")
            lines.append(" ".join(v.hex() for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path) -> Network:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a geoflow-model v1 file")
    layers = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "layer":
            raise ValueError(f"malformed record at line {i + 1}")
        cfg = {"kind": head[2]}
        for item in head[3:]:
            k, v = item.split("=", 1)
            cfg[k] = v
        layer = _layer_from_config(cfg)
        i += 1
        while i < len(lines) and lines[i].startswith("param "):
            _, name, shape = lines[i].split()
            dims = tuple(int(d) for d in shape.split("x"))
            vals = np.array([float.fromhex(t) for t in lines[i + 1].split()])
            arr = vals.reshape(dims)
            if np.asarray(layer.params[name]).ndim == 0:
                layer.params[name][...] = arr[0]
            else:
                layer.params[name][...] = arr
            i += 2
        layers.append(layer)
    return Network(layers)
