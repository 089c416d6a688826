"""Command-line driver: ``train``, ``attack`` and ``heatmap`` subcommands."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import artifacts
from .admm import AttackConfig
from .baselines import BaselineConfig
from .campaign import CampaignConfig, run_campaign
from .data import load_mnist
from .errors import StrAttackError
from .grouping import Dims, make_groups
from .model import save_weights, train_reference


def _layout(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layout {text!r}; expected e.g. 784,64,10")


def _attacks(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strattack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train the reference MLP on MNIST IDX files")
    tr.add_argument("--data", required=True, help="directory with MNIST IDX files")
    tr.add_argument("--layout", type=_layout, default=[784, 64, 10])
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--lr", type=float, default=0.1)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--shift", type=int, default=2, help="max random translation (pixels)")
    tr.add_argument("--no-cosine", action="store_true", help="constant step size")
    tr.add_argument("--logit-scale", type=float, default=16.0,
                    help="multiply the final layer by this factor after training")
    tr.add_argument("--out", required=True)

    at = sub.add_parser("attack", help="run an attack campaign")
    at.add_argument("--model", required=True)
    at.add_argument("--data", required=True)
    at.add_argument("--split", choices=("train", "test"), default="test")
    at.add_argument("--attacks", type=_attacks, default=("strattack",))
    at.add_argument("--case", choices=("best", "average", "worst"), default="average")
    at.add_argument("--images", type=int, default=10)
    at.add_argument("--group-r", type=int, default=2)
    at.add_argument("--group-stride", type=int, default=2)
    at.add_argument("--edge", choices=("error", "snap"), default="error")
    at.add_argument("--overlap", action="store_true")
    at.add_argument("--refine", action="store_true")
    at.add_argument("--refine-quantile", type=float, default=0.03)
    d = AttackConfig()
    at.add_argument("--gamma", type=float, default=d.gamma)
    at.add_argument("--tau", type=float, default=d.tau)
    at.add_argument("--rho", type=float, default=d.rho)
    at.add_argument("--eps", type=float, default=d.epsilon)
    at.add_argument("--kappa", type=float, default=d.kappa)
    at.add_argument("--c", type=float, default=d.c)
    at.add_argument("--alpha", type=float, default=d.alpha)
    at.add_argument("--max-iters", type=int, default=d.max_iters)
    at.add_argument("--tol", type=float, default=d.primal_tol)
    at.add_argument("--retries", type=int, default=d.retries)
    b = BaselineConfig()
    at.add_argument("--cw-c", type=float, default=b.c)
    at.add_argument("--cw-lr", type=float, default=b.learning_rate)
    at.add_argument("--cw-iters", type=int, default=b.max_iters)
    at.add_argument("--cw-search", type=int, default=b.binary_search_steps)
    at.add_argument("--ifgsm-steps", type=int, default=b.steps)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--workers", type=int, default=None)
    at.add_argument("--out", required=True)

    hm = sub.add_parser("heatmap", help="group heatmap of a perturbation dump")
    hm.add_argument("--delta", required=True)
    hm.add_argument("--group-r", type=int, required=True)
    hm.add_argument("--group-stride", type=int, required=True)
    hm.add_argument("--edge", choices=("error", "snap"), default="error")
    hm.add_argument("--out", required=True)
    return parser


def cmd_train(args) -> int:
    train = load_mnist(args.data, "train")
    try:
        test = load_mnist(args.data, "test")
    except FileNotFoundError:
        test = None
    net, report = train_reference(
        train, args.layout, epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
        batch_size=args.batch_size, test=test, max_shift=args.shift,
        cosine=not args.no_cosine, logit_scale=args.logit_scale,
    )
    save_weights(net, args.out)
    print(json.dumps({"train_accuracy": report.train_accuracy,
                      "test_accuracy": report.test_accuracy, "weights": args.out}))
    return 0


def campaign_config(args) -> CampaignConfig:
    return CampaignConfig(
        model_path=args.model, data_dir=args.data, split=args.split, attacks=args.attacks,
        case=args.case, images=args.images, group_r=args.group_r,
        group_stride=args.group_stride, edge=args.edge, overlap=args.overlap,
        refine=args.refine, refine_quantile=args.refine_quantile,
        attack=AttackConfig(gamma=args.gamma, tau=args.tau, rho=args.rho, epsilon=args.eps,
                            kappa=args.kappa, c=args.c, alpha=args.alpha,
                            max_iters=args.max_iters, primal_tol=args.tol,
                            retries=args.retries),
        baseline=BaselineConfig(c=args.cw_c, learning_rate=args.cw_lr,
                                max_iters=args.cw_iters,
                                binary_search_steps=args.cw_search,
                                steps=args.ifgsm_steps, kappa=args.kappa),
        seed=args.seed, out_dir=args.out, workers=args.workers,
    )


def cmd_attack(args) -> int:
    report = run_campaign(campaign_config(args))
    summary = {name: {"asr": agg["asr"], "median_l0": agg["l0"]["median"],
                      "median_l2": agg["l2"]["median"]}
               for name, agg in report["aggregates"].items()}
    print(json.dumps({"report": os.path.join(args.out, "report.json"),
                      "errors": len(report["errors"]), "summary": summary}))
    return 0


def cmd_heatmap(args) -> int:
    delta = artifacts.read_delta(args.delta)
    h, w, c = delta.shape
    spec = make_groups(Dims(w, h, c), args.group_r, args.group_stride, args.edge)
    artifacts.write_pgm(args.out, artifacts.group_heatmap(delta, spec))
    print(json.dumps({"heatmap": args.out, "P": spec.P, "Q": spec.Q}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"train": cmd_train, "attack": cmd_attack, "heatmap": cmd_heatmap}[args.command]
    try:
        return handler(args)
    except (StrAttackError, OSError) as exc:
        print(f"strattack {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
