"""Flat key = value config files with fixed sections and strict key
validation."""

from __future__ import annotations

SECTIONS = {
    "network": {"family", "depth", "width", "S", "pattern", "hidden", "k",
                "h", "a"},
    "optim": {"lr", "epochs", "batch", "seed", "margin", "schedule"},
    "dataset": {"name", "n", "n_per_class", "n_seeds", "h", "system",
                "target", "seed", "box"},
    "robust": {"eps", "steps", "restarts", "attack_seed"},
}

TOP_LEVEL = {"experiment", "seed", "out"}


class ConfigError(ValueError):
    pass


def parse_config(path) -> dict:
    """Returns {'experiment': ..., 'network': {...}, 'optim': {...}, ...}.
    Unknown sections or keys are errors."""
    cfg: dict = {}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SECTIONS:
                    raise ConfigError(f"line {lineno}: unknown section "
                                      f"[{section}]")
                cfg.setdefault(section, {})
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if section is None:
                if key not in TOP_LEVEL:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                cfg[key] = value
            else:
                if key not in SECTIONS[section]:
                    raise ConfigError(f"line {lineno}: unknown key {key!r} "
                                      f"in [{section}]")
                cfg[section][key] = value
    return cfg
