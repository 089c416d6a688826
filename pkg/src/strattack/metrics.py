"""Distortion norms, case selection, adversarial saliency and interpretability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError, ParamError, ProtocolError

CASE_MODES = ("best", "average", "worst")


@dataclass(frozen=True)
class DistortionReport:
    l0: int
    l1: float
    l2: float
    linf: float

    def as_dict(self) -> dict:
        return {"l0": self.l0, "l1": self.l1, "l2": self.l2, "linf": self.linf}


def distortion(delta, l0_tol: float = 1e-6) -> DistortionReport:
    """lp norms of a perturbation; l0 counts scalar entries (channels separately)."""
    if l0_tol < 0:
        raise ParamError("l0_tol must be nonnegative")
    flat = np.abs(np.asarray(delta, dtype=np.float64).reshape(-1))
    return DistortionReport(
        l0=int(np.count_nonzero(flat > l0_tol)),
        l1=float(flat.sum()),
        l2=float(np.sqrt(np.dot(flat, flat))),
        linf=float(flat.max(initial=0.0)),
    )


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    original: int
    target: int


@dataclass(frozen=True)
class BooleanMask:
    bits: np.ndarray
    nu: float


def _unit(k: int, size: int) -> np.ndarray:
    e = np.zeros(size)
    e[k] = 1.0
    return e


def asm(model, x0, target: int, original: int) -> SaliencyMap:
    """Two-label adversarial saliency map at ``x0``.

    Pixel ``i`` scores ``dZ_t/dx_i * |dZ_t0/dx_i|`` unless the target logit
    gradient is negative or the original-label gradient is positive, in which
    case it scores zero.
    """
    if target == original:
        raise ParamError("target and original label must differ")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != model.dims.shape:
        raise DimensionError(f"x0 {x0.shape} does not match {model.dims.shape}")
    k = model.num_classes
    g_t = model.logits_vjp(x0, _unit(target, k))
    g_0 = model.logits_vjp(x0, _unit(original, k))
    values = np.where((g_t < 0) | (g_0 > 0), 0.0, g_t * np.abs(g_0))
    return SaliencyMap(values=values, original=original, target=target)


def b_asm(saliency: SaliencyMap, nu_percentile: float = 90.0) -> BooleanMask:
    """Pixels whose saliency strictly exceeds the given percentile."""
    if not 0 <= nu_percentile <= 100:
        raise ParamError("nu_percentile must lie in [0, 100]")
    nu = float(np.percentile(saliency.values, nu_percentile))
    return BooleanMask(bits=saliency.values > nu, nu=nu)


def interpretability_score(delta, mask: BooleanMask) -> float:
    """Share of the perturbation's l2 energy that falls inside the mask."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != mask.bits.shape:
        raise DimensionError(f"delta {delta.shape} does not match mask {mask.bits.shape}")
    total = np.linalg.norm(delta)
    if total == 0:
        raise DegenerateError("interpretability score undefined for a zero perturbation")
    return float(np.linalg.norm(delta[mask.bits]) / total)


def _difficulty(result) -> tuple[int, float]:
    # larger means harder: failures rank above every success, then by l2
    return (0 if result.success else 1, result.lp.l2 if result.success else 0.0)


def case_protocol(results, mode: str, seed: int = 0):
    """Pick the reported result among per-target attack results.

    ``best`` takes the least difficult target, ``worst`` the most difficult
    (any failure beats any success), and ``average`` a target drawn with the
    given seed.
    """
    results = list(results)
    if not results:
        raise ProtocolError("no results to select from")
    if mode == "best":
        return min(results, key=_difficulty)
    if mode == "worst":
        return max(results, key=_difficulty)
    if mode == "average":
        return results[int(np.random.default_rng(seed).integers(len(results)))]
    raise ProtocolError(f"unknown case mode {mode!r}; expected one of {CASE_MODES}")
