"""Attack campaigns: instance selection, attack runs, aggregation and artifacts."""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import artifacts
from .admm import AttackConfig, solve
from .baselines import EPS_GRID, BaselineConfig, cw_l2, fgm_l2, grid_search, ifgsm_l2
from .data import load_mnist
from .errors import ParamError, StructureError
from .grouping import GroupSpec, count_nonzero_groups, make_groups
from .metrics import CASE_MODES, asm, b_asm, case_protocol, interpretability_score
from .model import classify, load_weights
from .refine import refine_solve, sigma_mask

SCHEMA = 1
ATTACKS = ("strattack", "cw", "ifgsm", "fgm")
REFINED = "strattack-refined"
GROUP_TOL = 1e-6
NORMS = ("l0", "l1", "l2", "linf")


@dataclass(frozen=True)
class CampaignConfig:
    model_path: str
    data_dir: str
    split: str = "test"
    attacks: tuple[str, ...] = ("strattack",)
    case: str = "average"
    images: int = 10
    group_r: int = 2
    group_stride: int = 2
    edge: str = "error"
    overlap: bool = False
    refine: bool = False
    refine_quantile: float = 0.03
    nu_percentile: float = 90.0
    attack: AttackConfig = field(default_factory=AttackConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    seed: int = 0
    out_dir: str | None = None
    workers: int | None = None

    def validate(self, spec: GroupSpec) -> None:
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown or not self.attacks:
            raise ParamError(f"unknown attacks {sorted(unknown)}; choose from {ATTACKS}")
        if self.case not in CASE_MODES:
            raise ParamError(f"case must be one of {CASE_MODES}")
        if self.images < 1:
            raise ParamError("images must be positive")
        if self.refine and "strattack" not in self.attacks:
            raise ParamError("refine needs the strattack attack")
        if spec.overlapping and not self.overlap:
            raise StructureError("these groups overlap; pass overlap=True (--overlap)")
        self.attack.validate()
        self.baseline.validate()

    def echo(self) -> dict:
        out = asdict(self)
        out["attacks"] = list(self.attacks)
        out.pop("workers")
        out.pop("out_dir")
        return out


def worker_count(requested: int | None = None) -> int:
    """Pool size: ``STRATTACK_THREADS`` wins, then the request, then the CPU count."""
    env = os.environ.get("STRATTACK_THREADS")
    if env:
        requested = int(env)
    if requested is None:
        requested = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    return max(1, int(requested or 1))


def select_images(model, dataset, count: int) -> list[int]:
    """Indices of the first ``count`` images the model classifies correctly."""
    chosen = []
    for i in range(len(dataset)):
        if classify(model, dataset.images[i]) == dataset.labels[i]:
            chosen.append(i)
            if len(chosen) == count:
                break
    return chosen


def instance_targets(label: int, num_classes: int, case: str, seed: int, image: int) -> list[int]:
    others = [k for k in range(num_classes) if k != label]
    if case == "average":
        # seeded by (seed, image) so the choice is independent of scheduling
        return [int(np.random.default_rng([seed, image]).choice(others))]
    return others


# --- per-instance work ------------------------------------------------------

_CTX: dict = {}


def _init_worker(model, dataset, cfg, spec):
    _CTX.update(model=model, dataset=dataset, cfg=cfg, spec=spec)


def _run_attack(name, model, x0, target, cfg: CampaignConfig, spec):
    if name == "strattack":
        return solve(model, x0, target, spec, cfg.attack, copies=cfg.overlap)
    if name == "cw":
        return cw_l2(model, x0, target, cfg.baseline)
    if name == "ifgsm":
        return grid_search(ifgsm_l2, model, x0, target, EPS_GRID, steps=cfg.baseline.steps)
    return grid_search(fgm_l2, model, x0, target, EPS_GRID)


def _refine(model, x0, target, star, cfg: CampaignConfig):
    mask = sigma_mask(star.delta, cfg.refine_quantile)
    refined = refine_solve(model, x0, target, mask, star.delta, cfg.attack)
    pinned_zero = bool(np.all(refined.delta.reshape(-1)[mask.zero_set] == 0.0))
    chosen = refined if refined.success or not star.success else star
    info = {"sigma": mask.sigma, "refined_success": bool(refined.success),
            "fallback": chosen is star, "support_ok": pinned_zero}
    return chosen, info


def _row(result, cfg, spec, saliency, extra=None) -> dict:
    delta = result.delta
    row = {
        "attack": None,
        "target": int(result.target),
        "success": bool(result.success),
        "predicted": int(result.label),
        **result.lp.as_dict(),
        "groups": count_nonzero_groups(delta, spec, GROUP_TOL),
        "iterations": int(result.iterations),
        "is": None,
        "linf_ok": bool(result.lp.linf <= result.meta.get("epsilon", np.inf) + 1e-3),
        "in_box": bool(np.all((result.x_adv >= 0.0) & (result.x_adv <= 1.0))),
    }
    if np.any(delta):
        mask = b_asm(saliency[result.target], cfg.nu_percentile)
        row["is"] = interpretability_score(delta, mask)
    if extra:
        row.update(extra)
    return row


def run_instance(image: int) -> dict:
    """All requested attacks on one image; never raises."""
    model, dataset, cfg, spec = _CTX["model"], _CTX["dataset"], _CTX["cfg"], _CTX["spec"]
    x0 = dataset.images[image]
    label = int(dataset.labels[image])
    start = time.perf_counter()
    out = {"image": image, "label": label, "rows": [], "deltas": [], "error": None}
    try:
        targets = instance_targets(label, model.num_classes, cfg.case, cfg.seed, image)
        saliency = {t: asm(model, x0, t, label) for t in targets}
        names = list(cfg.attacks) + ([REFINED] if cfg.refine else [])
        per_attack = {name: [] for name in names}
        for t in targets:
            for name in cfg.attacks:
                result = _run_attack(name, model, x0, t, cfg, spec)
                per_attack[name].append((result, None))
                if name == "strattack" and cfg.refine:
                    per_attack[REFINED].append(_refine(model, x0, t, result, cfg))
        for name in names:
            pairs = per_attack[name]
            picked = case_protocol([r for r, _ in pairs], cfg.case, cfg.seed)
            extra = next(info for r, info in pairs if r is picked)
            row = _row(picked, cfg, spec, saliency, extra)
            row["attack"] = name
            out["rows"].append(row)
            out["deltas"].append((name, picked.target, picked.delta))
    except Exception as exc:  # reported per instance, the campaign goes on
        out["error"] = f"{type(exc).__name__}: {exc}"
        out["rows"], out["deltas"] = [], []
    out["elapsed_s"] = time.perf_counter() - start
    return out


# --- aggregation and output ---------------------------------------------------


def _stats(values) -> dict:
    values = [v for v in values if v is not None]
    if not values:
        return {"mean": None, "median": None}
    return {"mean": float(np.mean(values)), "median": float(np.median(values))}


def aggregate(rows: list[dict], attack: str) -> dict:
    """ASR and norm statistics for one attack; norms over successful rows only."""
    mine = [r for r in rows if r["attack"] == attack]
    wins = [r for r in mine if r["success"]]
    out = {
        "instances": len(mine),
        "successes": len(wins),
        "asr": len(wins) / len(mine) if mine else None,
    }
    for key in NORMS + ("groups", "iterations"):
        out[key] = _stats([r[key] for r in wins])
    out["is"] = _stats([r["is"] for r in wins])
    if attack == REFINED:
        out["refined_success_rate"] = float(np.mean([r["refined_success"] for r in mine])) if mine else None
        out["support_ok_rate"] = float(np.mean([r["support_ok"] for r in mine])) if mine else None
    return out


def artifact_stem(image: int, target: int, attack: str) -> str:
    return f"{image:05d}_t{target}_{attack}"


def run_campaign(cfg: CampaignConfig) -> dict:
    """Run a full campaign; writes report.json and artifacts when ``out_dir`` is set."""
    model = load_weights(cfg.model_path)
    dataset = load_mnist(cfg.data_dir, cfg.split)
    return run_campaign_on(cfg, model, dataset)


def run_campaign_on(cfg: CampaignConfig, model, dataset) -> dict:
    spec = make_groups(model.dims, cfg.group_r, cfg.group_stride, cfg.edge)
    cfg.validate(spec)
    t0 = time.perf_counter()
    images = select_images(model, dataset, cfg.images)
    workers = min(worker_count(cfg.workers), max(len(images), 1))
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_worker,
                                 initargs=(model, dataset, cfg, spec)) as pool:
            outcomes = list(pool.map(run_instance, images))
    else:
        _init_worker(model, dataset, cfg, spec)
        outcomes = [run_instance(i) for i in images]

    rows = []
    for o in outcomes:
        for row in o["rows"]:
            rows.append({"image": o["image"], "label": o["label"], **row})
    names = list(cfg.attacks) + ([REFINED] if cfg.refine else [])
    report = {
        "schema": SCHEMA,
        "config": cfg.echo(),
        "groups": {"r": spec.r, "stride": spec.stride, "P": spec.P, "Q": spec.Q,
                   "overlapping": spec.overlapping},
        "images": images,
        "rows": rows,
        "errors": [{"image": o["image"], "error": o["error"]} for o in outcomes if o["error"]],
        "aggregates": {name: aggregate(rows, name) for name in names},
        "timing": {
            "workers": workers,
            "total_s": time.perf_counter() - t0,
            "instances_s": {str(o["image"]): o["elapsed_s"] for o in outcomes},
        },
    }
    if cfg.out_dir is not None:
        write_outputs(cfg.out_dir, report, outcomes, spec)
    return report


def _clean(obj):
    # NaN/inf are not JSON; they only arise from degenerate statistics
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


def write_outputs(out_dir, report: dict, outcomes, spec: GroupSpec) -> None:
    """Sole writer of campaign files: report, perturbation dumps and heatmaps."""
    deltas_dir = os.path.join(out_dir, "deltas")
    heat_dir = os.path.join(out_dir, "heatmaps")
    os.makedirs(deltas_dir, exist_ok=True)
    os.makedirs(heat_dir, exist_ok=True)
    for o in outcomes:
        for name, target, delta in o["deltas"]:
            stem = artifact_stem(o["image"], target, name)
            artifacts.write_delta(os.path.join(deltas_dir, stem + ".f64"), delta)
            artifacts.write_pgm(os.path.join(heat_dir, stem + ".pgm"),
                                artifacts.group_heatmap(delta, spec))
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(dump_report(report))
