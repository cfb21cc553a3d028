"""Structure-preserving neural networks built from discrete flow maps of
parametric vector fields: 1-Lipschitz residual compositions with certified
robustness, sphere/gradient (Presnov) stages, Hamiltonian lifts, and
symplectic, volume- and mass-preserving blocks."""

__version__ = "1.0.0"

from .blocks import (Network, build_lipschitz_block, build_mass_network,
                     build_presnov_block, lipschitz_bound, load_network,
                     save_network)
from .layers import StepPair, project_steps
from .robust import certified_radius, empirical_lipschitz, margin, pgd_l2
from .train import LossSpec, OptimConfig, train

__all__ = [
    "Network", "build_lipschitz_block", "build_mass_network",
    "build_presnov_block", "lipschitz_bound", "load_network", "save_network",
    "StepPair", "project_steps", "certified_radius", "empirical_lipschitz",
    "margin", "pgd_l2", "LossSpec", "OptimConfig", "train", "__version__",
]
