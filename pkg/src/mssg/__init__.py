"""Algorithmic thresholds for multi-species spherical spin glasses."""

from .mixture import MixtureModel, eval_xi, gamma_from_xi, xi_calculus, xi_from_gamma
from .solvability import Solvability, build_msym, classify, find_solvable, perron_velocity

__all__ = [
    "MixtureModel",
    "Solvability",
    "build_msym",
    "classify",
    "eval_xi",
    "find_solvable",
    "gamma_from_xi",
    "perron_velocity",
    "xi_calculus",
    "xi_from_gamma",
]

__version__ = "0.1.0"
