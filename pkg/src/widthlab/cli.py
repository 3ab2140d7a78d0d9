"""``widthlab`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import csvio
from .config import DatasetSpec, ExperimentConfig, env_seed, load_config
from .experiments import (
    make_dataset,
    run_bound_check,
    run_convergence,
    run_param_density,
    run_posterior,
    run_prior_check,
)
from .plotting import PLOT_KINDS, plot


def _int_list(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--dataset", help="two_points, sine or csv:<path>")
    p.add_argument("--activation", choices=["erf", "tanh", "relu"])
    p.add_argument("--width", type=int, help="single width (posterior, param-density, bound-check)")
    p.add_argument("--seed", type=int, help="single seed; beats WIDTHLAB_SEED and the config")
    p.add_argument("--widths", type=_int_list, help="comma-separated widths for sweeps")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds for sweeps")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="widthlab",
        description="Train wide mean-field variational BNNs and compare them with the NNGP.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("dataset", "write the standardised dataset"),
        ("converge", "width sweep: distances to the prior and bound summaries"),
        ("posterior", "one trained model vs prior and NNGP on the grid"),
        ("prior-check", "prior moments per width and upcrossing histograms"),
        ("param-density", "quantiles of trained variational parameters"),
        ("bound-check", "posterior-mean bound at every grid point (erf only)"),
    ]:
        _common(sub.add_parser(name, help=help_))
    p = sub.add_parser("plot", help="render a CSV output as SVG")
    p.add_argument("csv")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", help="SVG path (default: next to the CSV)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.dataset:
        cfg = replace(cfg, dataset=replace(cfg.dataset, name=args.dataset))
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    cfg = cfg.with_overrides(
        activation=args.activation, widths=args.widths, seeds=args.seeds, jobs=args.jobs, out_dir=args.out
    )
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if args.width is not None and args.widths is None:
        cfg = replace(cfg, widths=(args.width,))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            print(plot(args.csv, args.kind, args.out))
            return 0
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        width, seed = cfg.widths[0], cfg.seeds[0]
        if args.command == "dataset":
            ds = make_dataset(cfg.dataset)
            print(csvio.write_rows(out / f"data_{cfg.dataset.label}.csv", ["x", "y"], zip(ds.X[:, 0], ds.y)))
        elif args.command == "converge":
            _, path = run_convergence(cfg)
            print(path)
        elif args.command == "posterior":
            print(run_posterior(cfg, width, seed))
        elif args.command == "prior-check":
            for path in run_prior_check(cfg):
                print(path)
        elif args.command == "param-density":
            print(run_param_density(cfg, width, seed))
        elif args.command == "bound-check":
            path, rep = run_bound_check(cfg, width, seed)
            print(path)
            print(f"C_X={rep.c_x:.6g} loss={rep.loss_at_params:.6g} premise={rep.premise_holds} holds={rep.holds}")
    except (ValueError, OSError) as exc:
        print(f"widthlab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
