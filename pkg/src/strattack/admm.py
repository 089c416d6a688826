"""Linearised ADMM for group-sparse targeted attacks.

The attack problem

    minimise  f(x0 + d) + gamma*||d||^2 + tau * sum_i ||d_{D_i}||_2
    s.t.      x0 + d in [0, 1]^n,  ||d||_inf <= epsilon

is split over four copies ``z = delta = w = y`` (or ``z = y_i`` for every group
when groups overlap).  The ``delta``, ``w`` and ``y`` updates are exact
proximal steps; the ``z`` update linearises the classifier loss around the
current ``z`` and adds a proximal term of weight ``eta_k = alpha*sqrt(k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import prox
from .errors import DimensionError, ParamError, StructureError
from .grouping import GroupSpec
from .metrics import DistortionReport, distortion
from .model import LossParams, attack_loss_and_grad, classify


@dataclass(frozen=True)
class AttackConfig:
    """Scalars of the attack problem and the ADMM schedule.

    Defaults follow the MNIST setting (rho=1, eta_1=5, tau=2, gamma=1,
    c=0.5).  ``retries`` re-runs a failed attack with ``c`` doubled.
    """

    gamma: float = 1.0
    tau: float = 2.0
    rho: float = 1.0
    epsilon: float = 1.0
    kappa: float = 0.0
    c: float = 0.5
    alpha: float = 5.0
    max_iters: int = 1000
    primal_tol: float = 1e-3
    retries: int = 0

    def validate(self) -> None:
        if self.gamma < 0 or self.tau < 0 or self.kappa < 0:
            raise ParamError("gamma, tau and kappa must be nonnegative")
        for name in ("rho", "epsilon", "c", "alpha", "primal_tol"):
            if not getattr(self, name) > 0:
                raise ParamError(f"{name} must be positive")
        if self.max_iters < 1 or self.retries < 0:
            raise ParamError("max_iters must be >= 1 and retries >= 0")


@dataclass
class AdmmState:
    """Primal copies and multipliers of one attack, all flat vectors.

    With group copies, ``y`` and ``v`` are ``(P*Q, n)`` stacks.
    """

    z: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    y: np.ndarray
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n: int, copies: int | None = None) -> "AdmmState":
        ydim = (n,) if copies is None else (copies, n)
        return cls(
            z=np.zeros(n), delta=np.zeros(n), w=np.zeros(n), y=np.zeros(ydim),
            u=np.zeros(n), s=np.zeros(n), v=np.zeros(ydim),
        )


@dataclass
class AttackResult:
    delta: np.ndarray
    x_adv: np.ndarray
    success: bool
    label: int
    target: int
    lp: DistortionReport
    iterations: int
    residual_trace: list[float] = field(default_factory=list)
    method: str = "strattack"
    meta: dict = field(default_factory=dict)


def make_result(model, x0, delta, target, iterations, trace=None, method="strattack", **meta):
    x_adv = np.clip(x0 + delta, 0.0, 1.0)
    delta = x_adv - x0
    label = classify(model, x_adv)
    return AttackResult(
        delta=delta,
        x_adv=x_adv,
        success=label == target,
        label=label,
        target=target,
        lp=distortion(delta),
        iterations=iterations,
        residual_trace=list(trace or []),
        method=method,
        meta=meta,
    )


def eta(k: int, alpha: float) -> float:
    """Weight of the proximal term in the linearised z-step at iteration k."""
    if k < 1 or not alpha > 0:
        raise ParamError("eta needs k >= 1 and alpha > 0")
    return alpha * math.sqrt(k)


def residuals(state: AdmmState) -> tuple[float, float, float]:
    """Infinity norms of ``delta - z``, ``y - z`` (worst copy) and ``w - z``."""
    r_delta = float(np.max(np.abs(state.delta - state.z), initial=0.0))
    r_y = float(np.max(np.abs(state.y - state.z), initial=0.0))
    r_w = float(np.max(np.abs(state.w - state.z), initial=0.0))
    return r_delta, r_y, r_w


def admm_iteration(state: AdmmState, model, x0, spec: GroupSpec, box: prox.BoxSpec,
                   params: LossParams, cfg: AttackConfig) -> AdmmState:
    """One sweep: parallel {delta, w, y} updates, linearised z-step, dual ascent."""
    rho = cfg.rho
    shape = x0.shape
    z, u, s, v = state.z, state.u, state.s, state.v
    copies = state.y.ndim == 2
    k = state.k + 1

    delta = prox.delta_step(z - u / rho, cfg.gamma, rho)
    w = prox.box_step(z - s / rho, box)
    if copies:
        y = prox.group_shrink_copies(z - v / rho, spec, cfg.tau, rho)
    else:
        y = prox.group_shrink((z - v / rho).reshape(shape), spec, cfg.tau, rho).reshape(-1)

    _, grad = attack_loss_and_grad(model, x0, z.reshape(shape), params)
    grad = grad.reshape(-1)
    a1 = delta + u / rho
    b1 = w + s / rho
    c1 = y + v / rho
    if copies:
        z_new = prox.z_step_overlap(grad, z, a1, b1, c1, eta(k, cfg.alpha), rho)
    else:
        z_new = prox.z_step(grad, z, a1, b1, c1, eta(k, cfg.alpha), rho)

    return AdmmState(
        z=z_new, delta=delta, w=w, y=y,
        u=u + rho * (delta - z_new),
        s=s + rho * (w - z_new),
        v=v + rho * (y - z_new),
        k=k,
    )


def active_support(state: AdmmState, spec: GroupSpec) -> np.ndarray:
    """Boolean mask of pixels covered by a group whose shrunk y-block is nonzero."""
    if state.y.ndim == 2:
        rows = np.arange(spec.num_groups)[:, None]
        blocks = state.y[rows, spec.index]
    else:
        blocks = state.y[spec.index]
    active = np.any(blocks != 0.0, axis=1)
    mask = np.zeros(state.z.size, dtype=bool)
    mask[spec.index[active]] = True
    return mask


def structured_iterate(state: AdmmState, spec: GroupSpec) -> np.ndarray:
    """The w-copy restricted to the active group support.

    Zero lies in every coordinate's feasible interval, so the result is as
    feasible as ``w`` while inheriting the exact group sparsity of ``y``; it
    coincides with ``w`` once the consensus residuals vanish.
    """
    return np.where(active_support(state, spec), state.w, 0.0)


def _check_inputs(model, x0, target, spec, cfg):
    cfg.validate()
    x0 = np.asarray(x0, dtype=np.float64)
    if spec.dims.shape != x0.shape:
        raise StructureError(f"group spec dims {spec.dims.shape} do not match x0 {x0.shape}")
    if model.dims.shape != x0.shape:
        raise DimensionError(f"model expects {model.dims.shape}, x0 is {x0.shape}")
    if not 0 <= target < model.num_classes:
        raise ParamError(f"target {target} outside [0, {model.num_classes})")
    return x0


def solve(model, x0, target: int, spec: GroupSpec, cfg: AttackConfig = AttackConfig(),
          copies: bool | None = None) -> AttackResult:
    """Run the structured attack toward ``target``.

    The reported perturbation is :func:`structured_iterate`, i.e. the
    always-feasible w-copy restricted to the active group support.

    ``copies`` selects the one-copy-per-group formulation; it defaults to
    ``spec.overlapping`` and is mandatory for overlapping groups.  Iteration
    stops once every primal residual is within ``primal_tol`` and the
    iterate is adversarial; otherwise the best successful iterate (smallest
    l2) is returned, or the last one if none succeeded.
    """
    x0 = _check_inputs(model, x0, target, spec, cfg)
    use_copies = spec.overlapping if copies is None else copies
    if spec.overlapping and not use_copies:
        raise StructureError("overlapping groups require the copy formulation")

    result = _solve_once(model, x0, target, spec, cfg, use_copies)
    attempt = 0
    while not result.success and attempt < cfg.retries:
        attempt += 1
        cfg = replace(cfg, c=2.0 * cfg.c)
        result = _solve_once(model, x0, target, spec, cfg, use_copies)
    result.meta.update(c=cfg.c, retries_used=attempt, epsilon=cfg.epsilon)
    return result


def _solve_once(model, x0, target, spec, cfg, use_copies) -> AttackResult:
    method = "strattack-overlap" if use_copies else "strattack"
    n = x0.size
    flat_x0 = x0.reshape(-1)
    box = prox.BoxSpec(flat_x0, cfg.epsilon)
    params = LossParams(target=target, kappa=cfg.kappa, c=cfg.c)
    state = AdmmState.zeros(n, spec.num_groups if use_copies else None)

    trace = []
    best = None  # (l2, w, k)
    for _ in range(cfg.max_iters):
        state = admm_iteration(state, model, x0, spec, box, params, cfg)
        r = max(residuals(state))
        trace.append(r)
        w = structured_iterate(state, spec)
        if classify(model, (flat_x0 + w).reshape(x0.shape)) != target:
            continue
        l2 = float(np.linalg.norm(w))
        if best is None or l2 < best[0]:
            best = (l2, w.copy(), state.k)
        if r <= cfg.primal_tol:
            z_proj = prox.box_step(state.z, box)
            if classify(model, (flat_x0 + z_proj).reshape(x0.shape)) == target:
                return make_result(model, x0, w.reshape(x0.shape), target, state.k, trace,
                                   method, stopped="converged")
    if best is not None:
        return make_result(model, x0, best[1].reshape(x0.shape), target, state.k, trace,
                           method, stopped="max_iters", best_iteration=best[2])
    return make_result(model, x0, structured_iterate(state, spec).reshape(x0.shape), target,
                       state.k, trace, method, stopped="max_iters")
