"""Fixed-support refinement of a structured perturbation.

Entries of a solved perturbation whose magnitude falls below a quantile
threshold are pinned to zero, and the attack is re-solved on the remaining
support without the group penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prox
from .admm import AttackConfig, eta, make_result
from .errors import DimensionError, ParamError
from .model import LossParams, attack_loss_and_grad, classify


@dataclass(frozen=True)
class SparsityMask:
    zero_set: np.ndarray  # sorted flat indices pinned to zero
    sigma: float

    def as_bool(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        mask[self.zero_set] = True
        return mask


def sigma_mask(delta_star, q: float = 0.03) -> SparsityMask:
    """Zero set of entries with ``|delta*_i| <= sigma``.

    ``sigma`` is the ``q``-quantile (linear interpolation) of the nonzero
    magnitudes; an all-zero input pins every index with ``sigma = 0``.
    """
    if not 0 <= q <= 1:
        raise ParamError("quantile must lie in [0, 1]")
    mags = np.abs(np.asarray(delta_star, dtype=np.float64).reshape(-1))
    nonzero = mags[mags > 0]
    sigma = float(np.quantile(nonzero, q)) if nonzero.size else 0.0
    return SparsityMask(zero_set=np.flatnonzero(mags <= sigma), sigma=sigma)


def refine_solve(model, x0, target: int, mask: SparsityMask, delta_star,
                 cfg: AttackConfig = AttackConfig()):
    """Re-solve the attack with the entries in ``mask.zero_set`` fixed at zero.

    Two-copy ADMM (``delta`` carries the box constraint and the support,
    ``z`` the linearised loss) warm-started from ``delta_star`` with the
    pinned entries zeroed.  The pinned entries stay exactly zero in every
    iterate.  Returns the best successful feasible iterate (smallest l2),
    falling back to the last iterate.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    delta_star = np.asarray(delta_star, dtype=np.float64)
    if delta_star.shape != x0.shape:
        raise DimensionError(f"delta_star {delta_star.shape} does not match x0 {x0.shape}")
    cfg.validate()
    if model.dims.shape != x0.shape:
        raise DimensionError(f"model expects {model.dims.shape}, x0 is {x0.shape}")
    if not 0 <= target < model.num_classes:
        raise ParamError(f"target {target} outside [0, {model.num_classes})")

    n = x0.size
    shape = x0.shape
    flat_x0 = x0.reshape(-1)
    pinned = mask.as_bool(n)
    free = ~pinned
    box = prox.BoxSpec(flat_x0, cfg.epsilon)
    params = LossParams(target=target, kappa=cfg.kappa, c=cfg.c)
    rho, shrink = cfg.rho, cfg.rho / (cfg.rho + 2.0 * cfg.gamma)

    delta = np.where(pinned, 0.0, delta_star.reshape(-1))
    z = delta.copy()
    u = np.zeros(n)

    def adversarial(d):
        return classify(model, (flat_x0 + d).reshape(shape)) == target

    best = (float(np.linalg.norm(delta)), delta.copy(), 0) if adversarial(delta) else None
    info = {"sigma": mask.sigma, "epsilon": cfg.epsilon}
    trace = []
    k = 0
    for k in range(1, cfg.max_iters + 1):
        a = z - u / rho
        delta = np.where(pinned, 0.0, np.clip(shrink * a, box.lower, box.upper))
        _, grad = attack_loss_and_grad(model, x0, z.reshape(shape), params)
        eta_k = eta(k, cfg.alpha)
        a1 = delta + u / rho
        z_new = np.where(free, (eta_k * z + rho * a1 - grad.reshape(-1)) / (eta_k + rho), 0.0)
        u = u + rho * (delta - z_new)
        z = z_new
        r = float(np.max(np.abs(delta - z), initial=0.0))
        trace.append(r)
        if not adversarial(delta):
            continue
        l2 = float(np.linalg.norm(delta))
        if best is None or l2 < best[0]:
            best = (l2, delta.copy(), k)
        if r <= cfg.primal_tol:
            return make_result(model, x0, delta.reshape(shape), target, k, trace, "refined",
                               stopped="converged", **info)
    if best is not None:
        return make_result(model, x0, best[1].reshape(shape), target, k, trace, "refined",
                           stopped="max_iters", best_iteration=best[2], **info)
    return make_result(model, x0, delta.reshape(shape), target, k, trace, "refined",
                       stopped="max_iters", **info)
