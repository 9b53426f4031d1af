"""Command-line front end.

Usage::

    iscount generate --size 64 --link power --gamma 1.5 --sparsity 0.7 --seed 7 --out world/
    iscount fit --world world/ --train-n 200 --out model.json
    iscount estimate --world world/ --method isotonic --budget 1000 --seed 1 --figure est.png
    iscount compare --world world/ --budgets 50,200 --repetitions 20 --out-dir sweep/
    iscount cost --area 9629091 --percent 0.001 --format table

Every subcommand accepts ``--config FILE``, a flat JSON object of flag values;
flags given on the command line win. Exit codes: 0 success, 2 input or
contract error, 3 numerical-invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import costmodel, estimator, experiment, geogrid, plotting, proposal, synthworld
from .proposal import InvariantError

SCHEMA = "1"
EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _int_list(s: str) -> List[int]:
    return [int(v) for v in str(s).split(",") if v.strip()]


def _str_list(s: str) -> List[str]:
    return [v.strip() for v in str(s).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    ncols = args.ncols or args.size
    nrows = args.nrows or args.size
    world = synthworld.generate_world(
        ncols, nrows, args.cell_size, args.tile_size, args.link, args.noise, args.sparsity, args.seed,
        gamma=args.gamma, threshold=args.threshold, scale=args.scale, sigma=args.sigma,
        covariate_scale=args.covariate_scale, deterministic=args.deterministic)
    synthworld.save_world(world, args.out, force=args.force)
    _emit(_dump({"schema": SCHEMA, "command": "generate", "out": str(args.out), "C": world.truth,
                 "n_tiles": world.tiles.count, "seed": args.seed}), None)
    return EXIT_OK


def _load_inputs(args):
    world = synthworld.load_world(args.world)
    raster = geogrid.load_raster(args.covariate) if args.covariate else None
    mask = None
    if args.region:
        r = raster if raster is not None else world.raster
        mask = geogrid.rasterize_region(geogrid.load_polygon(args.region), r.grid, r)
    return world, raster, mask


def cmd_fit(args) -> int:
    if args.samples:
        samples = proposal.read_samples(args.samples)
        tile_size = args.tile_size
    else:
        if not args.world:
            raise ValueError("fit needs --world or --samples")
        world, raster, mask = _load_inputs(args)
        raster = world.raster if raster is None else raster
        mask = experiment.covariate_mask(world, raster) if mask is None else mask
        base = proposal.identity_proposal(raster, mask, args.epsilon)
        samples = proposal.build_training_set(
            lambda x, y: synthworld.count_at(world, x, y), raster, base, proposal.uniform_proposal(mask),
            args.train_n, args.positive_fraction, args.cap, args.seed, world.tiles.count)
        tile_size = world.tile_size
        if args.save_samples:
            proposal.write_samples(samples, args.save_samples)
    model = proposal.fit_isotonic(samples, tile_size)
    model.save(args.out)
    _emit(_dump({"schema": SCHEMA, "command": "fit", "out": str(args.out), "n_samples": len(samples),
                 "n_breakpoints": len(model.breakpoints)}), None)
    return EXIT_OK


def estimate_report(args, figure: Optional[str] = None) -> dict:
    world, raster, mask = _load_inputs(args)
    res = experiment.run_method(world, args.method, args.budget, args.seed,
                                train_fraction=args.train_fraction, epsilon=args.epsilon,
                                transform=args.transform, raster=raster, mask=mask,
                                positive_fraction=args.positive_fraction, cap=args.cap)
    C = world.truth
    est = res.estimate
    report = {
        "schema": SCHEMA,
        "command": "estimate",
        "method": args.method,
        "transform": None if args.method in ("uniform", "identity") else args.transform,
        "estimate": est.estimate,
        "n": est.n,
        "l": est.tile_size,
        "stderr": est.stderr,
        "seed": args.seed,
        "epsilon": args.epsilon,
        "budget": {"total": args.budget, "train_fraction": res.budget.train_fraction,
                   "deduct_training": res.budget.deduct_training,
                   "train_n": res.train_n, "sampling_n": res.sampling_n},
        "truth": C,
        "percent_error": estimator.percent_error(est.estimate, C) if C > 0 else None,
        "bounds": experiment.bounds_for(world, res.proposal, res.sampling_n, args.markov_k),
    }
    if figure:
        plotting.plot_proposal(res.proposal, figure, res.batch,
                               title=f"{args.method}: estimate {est.estimate:,.1f}, C = {C:,}")
    return report


def cmd_estimate(args) -> int:
    _emit(_dump(estimate_report(args, args.figure)), args.out)
    return EXIT_OK


def compare_report(args):
    world, raster, mask = _load_inputs(args)
    rows = experiment.sweep(world, _str_list(args.methods), _int_list(args.budgets), args.repetitions,
                            args.seed, workers=args.workers, train_fraction=args.train_fraction,
                            epsilon=args.epsilon, transform=args.transform, raster=raster, mask=mask,
                            positive_fraction=args.positive_fraction, cap=args.cap)
    summary = experiment.summarize(rows)
    report = {"schema": SCHEMA, "command": "compare", "seed": args.seed, "truth": world.truth,
              "repetitions": args.repetitions, "transform": args.transform, "epsilon": args.epsilon,
              "summary": summary, "runs": rows}
    return report


def _summary_csv(summary) -> str:
    buf = io.StringIO()
    fields = ["method", "budget", "repetitions", "mean_percent_error", "std_percent_error",
              "stderr_percent_error", "single_run"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in summary:
        writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in fields})
    return buf.getvalue()


def cmd_compare(args) -> int:
    report = compare_report(args)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "compare.json").write_text(_dump(report), encoding="utf-8")
        (d / "compare.csv").write_text(_summary_csv(report["summary"]), encoding="utf-8")
        if not args.no_figure:
            plotting.plot_compare(report["summary"], d / "compare.png",
                                  title=f"C = {report['truth']:,}, {args.repetitions} runs")
    else:
        sys.stdout.write(_dump(report))
    return EXIT_OK


def cmd_cost(args) -> int:
    rep = costmodel.savings_report(args.area, args.percent, args.price, args.image_pixels, args.gsd_km,
                                   args.minutes_per_hit, args.images_per_hit)
    if args.format == "table":
        text = rep.table() + "\n"
    else:
        text = _dump({"schema": SCHEMA, "command": "cost", **rep.to_dict()})
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--world", help="synthetic world directory")
    p.add_argument("--covariate", help="covariate raster replacing the world's own")
    p.add_argument("--region", help="region boundary JSON restricting the proposal")
    p.add_argument("--transform", choices=experiment.TRANSFORMS, default="isotonic")
    p.add_argument("--train-fraction", type=float, default=0.2)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--cap", type=int, default=proposal.TRAINING_CAP, help="training sample cap")
    p.add_argument("--epsilon", type=float, default=proposal.DEFAULT_EPSILON,
                   help="weight of the uniform floor in every proposal")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iscount", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="flat JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic world directory")
    g.add_argument("--config", help=argparse.SUPPRESS)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--ncols", type=int)
    g.add_argument("--nrows", type=int)
    g.add_argument("--cell-size", type=float, default=1.0)
    g.add_argument("--tile-size", type=float, help="tile edge l (default: cell size)")
    g.add_argument("--link", choices=synthworld.LINKS, default="linear")
    g.add_argument("--gamma", type=float, default=1.5)
    g.add_argument("--threshold", type=float, default=1.0)
    g.add_argument("--scale", type=float, default=5.0)
    g.add_argument("--sigma", type=float, default=1.0, help="log-normal covariate shape")
    g.add_argument("--covariate-scale", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--sparsity", type=float, default=0.0)
    g.add_argument("--deterministic", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit an isotonic covariate-to-count map")
    f.add_argument("--config", help=argparse.SUPPRESS)
    _add_pipeline_flags(f)
    f.add_argument("--samples", help="labelled samples CSV (x,y,h,f,w) instead of drawing from --world")
    f.add_argument("--tile-size", type=float)
    f.add_argument("--train-n", type=int, default=200)
    f.add_argument("--save-samples", help="write the drawn training set as CSV")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("estimate", help="estimate the total count of a world")
    e.add_argument("--config", help=argparse.SUPPRESS)
    _add_pipeline_flags(e)
    e.add_argument("--method", choices=estimator.METHODS, default="identity")
    e.add_argument("--budget", type=int, default=1000)
    e.add_argument("--markov-k", type=float, default=2.0)
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--figure", help="render the proposal and drawn samples to this image file")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("compare", help="repeat estimates across methods and budgets")
    c.add_argument("--config", help=argparse.SUPPRESS)
    _add_pipeline_flags(c)
    c.add_argument("--methods", default=",".join(estimator.METHODS))
    c.add_argument("--budgets", default="50,200")
    c.add_argument("--repetitions", type=int, default=20)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out-dir", help="write compare.json, compare.csv and compare.png here")
    c.add_argument("--no-figure", action="store_true")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("cost", help="image and labelling cost of exhaustive vs sampled counting")
    k.add_argument("--config", help=argparse.SUPPRESS)
    k.add_argument("--area", type=float, required=True, help="region area in km^2")
    k.add_argument("--percent", type=float, required=True, help="percent of the area sampled")
    k.add_argument("--price", type=float, default=costmodel.PRICE_PER_SQ_KM)
    k.add_argument("--image-pixels", type=int, default=costmodel.IMAGE_PIXELS)
    k.add_argument("--gsd-km", type=float, default=costmodel.GSD_KM)
    k.add_argument("--minutes-per-hit", type=float, default=costmodel.MINUTES_PER_HIT)
    k.add_argument("--images-per-hit", type=int, default=costmodel.IMAGES_PER_HIT)
    k.add_argument("--format", choices=("json", "table"), default="json")
    k.add_argument("--out")
    k.set_defaults(func=cmd_cost)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            parser.error("--config must hold a flat JSON object")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        defaults = {}
        for key, value in doc.items():
            dest = key.replace("-", "_")
            if dest not in known:
                parser.error(f"unknown config key {key!r} for {args.command}")
            defaults[dest] = value
        # config values become defaults, so explicit flags still win
        subparser.set_defaults(**defaults)
        for action in subparser._actions:
            if action.dest in defaults:
                action.required = False
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"iscount: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, OSError, KeyError) as exc:
        print(f"iscount: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
