"""Reference attacks: targeted FGM, iterative FGM and a projected-gradient C&W l2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import make_result
from .errors import ParamError
from .model import LossParams, attack_loss_and_grad, classify, softmax

EPS_GRID = np.geomspace(0.05, 20.0, 20)


@dataclass(frozen=True)
class BaselineConfig:
    epsilon: float = 2.0
    steps: int = 10
    c: float = 0.1
    learning_rate: float = 0.01
    max_iters: int = 1000
    binary_search_steps: int = 9
    kappa: float = 0.0

    def validate(self) -> None:
        for name in ("epsilon", "c", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ParamError(f"{name} must be positive")
        if self.steps < 1 or self.max_iters < 1 or self.binary_search_steps < 0:
            raise ParamError("steps and max_iters must be >= 1, binary_search_steps >= 0")


def xent_grad(model, x, target: int) -> np.ndarray:
    """Gradient of the cross-entropy toward ``target`` with respect to the input."""

    def cotangent(z):
        p = softmax(z)
        p[target] -= 1.0
        return p

    if hasattr(model, "logits_and_vjp"):
        return model.logits_and_vjp(x, cotangent)[1]
    return model.logits_vjp(x, cotangent(model.logits(x)))


def _fgm_steps(model, x0, target, eps, steps):
    x = np.asarray(x0, dtype=np.float64)
    step = eps / steps
    degenerate = False
    for _ in range(steps):
        g = xent_grad(model, x, target)
        norm = np.linalg.norm(g)
        if norm == 0:
            degenerate = True
            break
        x = np.clip(x - step * g / norm, 0.0, 1.0)
    return x, degenerate


def fgm_l2(model, x0, target: int, eps: float):
    """One normalised step of size ``eps`` down the target cross-entropy."""
    return ifgsm_l2(model, x0, target, eps, steps=1, method="fgm")


def ifgsm_l2(model, x0, target: int, eps: float, steps: int = 10, method: str = "ifgsm"):
    """``steps`` FGM steps of size ``eps/steps``, clipping to [0, 1] after each."""
    if eps < 0 or steps < 1:
        raise ParamError("eps must be nonnegative and steps >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    x, degenerate = _fgm_steps(model, x0, target, eps, steps)
    return make_result(model, x0, x - x0, target, steps, method=method, epsilon=eps,
                       degenerate=degenerate)


def grid_search(attack, model, x0, target: int, grid=EPS_GRID, **kwargs):
    """Smallest budget in ``grid`` for which ``attack`` succeeds (else the largest)."""
    result = None
    for eps in sorted(grid):
        result = attack(model, x0, target, float(eps), **kwargs)
        if result.success:
            break
    return result


def cw_l2(model, x0, target: int, cfg: BaselineConfig = BaselineConfig()):
    """Minimise ``c*f(x0 + d) + ||d||^2`` over ``x0 + d`` in the unit box.

    Projected gradient descent replaces the tanh change of variables and Adam
    of the original attack.  An outer binary search on ``c`` keeps the
    smallest-l2 successful iterate seen across all searches.
    """
    cfg.validate()
    x0 = np.asarray(x0, dtype=np.float64)
    if classify(model, x0) == target:
        return make_result(model, x0, np.zeros_like(x0), target, 0, method="cw",
                           c=cfg.c, best_l2_history=[0.0])

    lo, hi, c = 0.0, np.inf, cfg.c
    best, best_c = None, None
    history = []
    iters = 0
    for _ in range(max(cfg.binary_search_steps, 1)):
        found = _cw_inner(model, x0, target, c, cfg)
        iters += cfg.max_iters
        if found is not None:
            if best is None or found[0] < best[0]:
                best, best_c = found, c
            hi = min(hi, c)
        else:
            lo = max(lo, c)
        history.append(np.inf if best is None else best[0])
        c = (lo + hi) / 2 if np.isfinite(hi) else c * 10
    delta = best[1] if best is not None else np.zeros_like(x0)
    return make_result(model, x0, delta, target, iters, method="cw",
                       c=best_c, best_l2_history=history)


def _cw_inner(model, x0, target, c, cfg):
    params = LossParams(target=target, kappa=cfg.kappa, c=c)
    lower, upper = -x0, 1.0 - x0
    delta = np.zeros_like(x0)
    best = None
    for _ in range(cfg.max_iters):
        loss, grad = attack_loss_and_grad(model, x0, delta, params)
        delta = np.clip(delta - cfg.learning_rate * (grad + 2.0 * delta), lower, upper)
        if classify(model, x0 + delta) == target:
            l2 = float(np.linalg.norm(delta))
            if best is None or l2 < best[0]:
                best = (l2, delta.copy())
    return best
