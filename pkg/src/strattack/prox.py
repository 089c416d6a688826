"""Closed-form minimisers of the ADMM subproblems.

Every function is pure and works on arrays of any shape, as long as the
arguments agree with each other (and with the group spec where one is given).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParamError, StructureError
from .grouping import GroupSpec


def _check_rho(rho, gamma=0.0):
    if not rho > 0:
        raise ParamError(f"rho must be positive, got {rho}")
    if gamma < 0:
        raise ParamError(f"gamma must be nonnegative, got {gamma}")


@dataclass(frozen=True)
class BoxSpec:
    """Feasible set of ``w``: ``x0 + w`` in ``[0, 1]`` and ``|w| <= epsilon``."""

    x0: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParamError(f"epsilon must be positive, got {self.epsilon}")
        x0 = np.asarray(self.x0, dtype=np.float64)
        if np.any(x0 < 0) or np.any(x0 > 1):
            raise ParamError("x0 must lie in [0, 1]")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "lower", np.maximum(-x0, -self.epsilon))
        object.__setattr__(self, "upper", np.minimum(1.0 - x0, self.epsilon))


def delta_step(a, gamma: float, rho: float) -> np.ndarray:
    """Minimiser of ``gamma*||d||^2 + rho/2*||d - a||^2``."""
    _check_rho(rho, gamma)
    return (rho / (rho + 2.0 * gamma)) * np.asarray(a, dtype=np.float64)


def box_step(b, box: BoxSpec) -> np.ndarray:
    """Euclidean projection of ``b`` onto the box/epsilon feasible set."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != box.x0.shape:
        raise DimensionError(f"b {b.shape} does not match x0 {box.x0.shape}")
    return np.clip(b, box.lower, box.upper)


def _shrink_rows(rows: np.ndarray, threshold: float) -> np.ndarray:
    norms = np.sqrt(np.sum(rows * rows, axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
    return scale * rows


def group_shrink(c, spec: GroupSpec, tau: float, rho: float) -> np.ndarray:
    """Block soft thresholding of every (disjoint) group at level ``tau/rho``."""
    if spec.overlapping:
        raise StructureError("group_shrink needs non-overlapping groups; use the copy form")
    _check_rho(rho, tau)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != spec.dims.shape:
        raise DimensionError(f"c {c.shape} does not match {spec.dims.shape}")
    flat = c.reshape(-1)
    out = np.empty_like(flat)
    out[spec.index] = _shrink_rows(flat[spec.index], tau / rho)
    return out.reshape(c.shape)


def group_shrink_overlap(c_i, group, tau: float, rho: float) -> np.ndarray:
    """Shrink the entries of one copy that lie in ``group``; copy the rest through."""
    _check_rho(rho, tau)
    c_i = np.asarray(c_i, dtype=np.float64)
    group = np.asarray(group, dtype=np.intp)
    out = c_i.copy()
    if group.size:
        flat = out.reshape(-1)
        flat[group] = _shrink_rows(flat[group], tau / rho)
    return out


def group_shrink_copies(copies: np.ndarray, spec: GroupSpec, tau: float, rho: float) -> np.ndarray:
    """Vectorised :func:`group_shrink_overlap` over a ``(P*Q, n)`` stack of copies."""
    _check_rho(rho, tau)
    rows = np.arange(spec.num_groups)[:, None]
    out = copies.copy()
    out[rows, spec.index] = _shrink_rows(copies[rows, spec.index], tau / rho)
    return out


def z_step(grad, z_k, a1, b1, c1, eta_k: float, rho: float) -> np.ndarray:
    """Minimiser of the linearised z-subproblem with three consensus terms."""
    _check_rho(rho)
    if eta_k < 0:
        raise ParamError(f"eta_k must be nonnegative, got {eta_k}")
    return (eta_k * z_k + rho * (a1 + b1 + c1) - grad) / (eta_k + 3.0 * rho)


def z_step_overlap(grad, z_k, a1, b1, c1_list, eta_k: float, rho: float) -> np.ndarray:
    """Linearised z-update with one consensus term per group copy.

    ``c1_list`` may be a list of arrays or a stacked array whose first axis
    runs over the copies.
    """
    _check_rho(rho)
    if eta_k < 0:
        raise ParamError(f"eta_k must be nonnegative, got {eta_k}")
    stacked = np.asarray(c1_list, dtype=np.float64)
    copies = stacked.shape[0]
    if copies < 1:
        raise ParamError("need at least one copy")
    c_sum = stacked.sum(axis=0).reshape(np.shape(z_k))
    return (eta_k * z_k + rho * (a1 + b1 + c_sum) - grad) / (eta_k + (2 + copies) * rho)
