"""Command-line entry points: train, eval, ablate, bench, gen-data.

Thin wrappers over the library functions; every number they print comes
from the same code paths the tests exercise.
"""

from __future__ import annotations

import argparse
from dataclasses import replace

from . import sim
from .ablate import ablate
from .bench import bench_inference
from .config import load_config
from .evaluate import evaluate
from .report import write_report_csv
from .train import train


def _print_report(report):
    for key, value in report.as_row().items():
        print(f"{key}: {value}")


def _cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = train(cfg, out_dir=args.out)
    _print_report(result.report)
    if args.out:
        write_report_csv(f"{args.out}/report.csv", [result.report])
        print(f"checkpoint: {args.out}/final.ckpt")


def _cmd_eval(args):
    report = evaluate(args.ckpt, args.data, out_dir=args.out,
                      dump_images=args.dump_images)
    _print_report(report)
    if args.out:
        write_report_csv(f"{args.out}/report.csv", [report])


def _cmd_ablate(args):
    cfg = load_config(args.config)
    variants = [v for v in args.variants.split(",") if v]
    reports = ablate(cfg, variants, out_dir=args.out)
    for report in reports:
        row = report.as_row()
        print(f"{row['label']}: params={row['params']} "
              f"psnr={row['psnr_db']} y_psnr={row['y_psnr_db']} "
              f"ssim={row['ssim']} delta_e={row['delta_e']}")


def _cmd_bench(args):
    report = bench_inference(args.ckpt, size=args.size,
                             repeats=args.repeats)
    _print_report(report)


def _cmd_gen_data(args):
    screen_ranges, cap_ranges = sim.RANGE_PRESETS[args.ranges]
    rows = sim.dataset_generate(args.out, args.n, size=(args.size,
                                                        args.size),
                                content_source=args.content,
                                screen_ranges=screen_ranges,
                                cap_ranges=cap_ranges, seed=args.seed)
    print(f"wrote {len(rows)} pairs to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="demoire",
        description="Raw-domain demoireing laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--dump-images", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and compare variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True,
                   help="comma-separated variant names")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("bench", help="measure inference latency")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--repeats", type=int, default=50)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--content", default=None,
                   help="directory of PNG content (default: procedural)")
    p.add_argument("--ranges", choices=sorted(sim.RANGE_PRESETS),
                   default="train")
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0
