"""Structured (group-sparse) adversarial attacks solved by linearised ADMM."""

from .admm import AttackConfig, AttackResult, solve
from .baselines import BaselineConfig, cw_l2, fgm_l2, ifgsm_l2
from .grouping import Dims, GroupSpec, make_groups
from .model import ReferenceNet, load_weights, save_weights
from .refine import refine_solve, sigma_mask

__all__ = [
    "AttackConfig", "AttackResult", "BaselineConfig", "Dims", "GroupSpec", "ReferenceNet",
    "cw_l2", "fgm_l2", "ifgsm_l2", "load_weights", "make_groups", "refine_solve",
    "save_weights", "sigma_mask", "solve",
]
