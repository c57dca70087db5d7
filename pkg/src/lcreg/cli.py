"""Command-line entry point: ``lcreg <verb> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .env import SCENARIOS
from .roadsim import DEMAND_LEVELS


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="stable_flow", choices=sorted(SCENARIOS))
    p.add_argument("--scenario-file", help="YAML scenario file (overrides --scenario/--demand)")
    p.add_argument("--demand", default="low", choices=sorted(DEMAND_LEVELS))
    p.add_argument("--cv-rate", type=float, default=1.0)
    p.add_argument("--seeds", help="evaluation seeds, e.g. 1,2,10-19")
    p.add_argument("--steps", type=int, default=50_000, help="training env steps")
    p.add_argument("--episodes", type=int, default=30, help="evaluation episodes when --seeds is absent")
    p.add_argument("--out", help="output root (default $LCREG_OUT or ./runs)")
    p.add_argument("--baseline", action="store_true", help="evaluate the all-allow policy")
    p.add_argument("--checkpoint", help="checkpoint file (default: final checkpoint of the matching training run)")
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="parallel evaluation episodes")
    p.add_argument("--force", action="store_true", help="retrain even if a finished run exists")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcreg", description="Grid-based lane-change regulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_ in [("train", "train the shared grid-agent Q-network"),
                        ("eval", "evaluate a checkpoint (or --baseline) over seeds"),
                        ("compare", "paired policy vs all-allow baseline"),
                        ("validate", "run the oracle checks"),
                        ("export", "write trajectory, grid, episode and PDE field CSVs for one seed")]:
        _common(sub.add_parser(verb, help=help_))
    ex = sub.choices["export"]
    ex.add_argument("--seconds", type=float, default=60.0, help="exported episode length after warm-up")
    sw = sub.add_parser("sweep-cvrate", help="train and compare at several CV penetration rates")
    _common(sw)
    sw.add_argument("--rates", default="0,0.5,1", help="comma-separated rates in [0, 1]")
    return parser


def manifest_from_args(args) -> harness.RunManifest:
    return harness.RunManifest(
        scenario=args.scenario, demand=args.demand, cv_rate=args.cv_rate, seeds=harness.parse_seeds(args.seeds),
        checkpoint=args.checkpoint, steps=args.steps, episodes=args.episodes, out=args.out,
        baseline=args.baseline, scenario_file=args.scenario_file, train_seed=args.train_seed,
        workers=args.workers, force=args.force)


def _print_row(row):
    print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    m = manifest_from_args(args)
    try:
        if args.verb == "train":
            res = harness.cmd_train(m, progress=_print_row)
            print(f"log: {res['log']}\ncheckpoint: {res['checkpoint']}")
        elif args.verb == "eval":
            res = harness.cmd_eval(m)
            for name, (mean, std) in res["summary"].items():
                print(f"{name:28s} {mean:10.4f} +- {std:.4f}")
            print(f"written to {res['dir']}")
        elif args.verb == "compare":
            res = harness.cmd_compare(m)
            for s in res["summary"]:
                print(f"{s['metric']:28s} uplift {s['uplift_mean_pct']:+8.3f}%  p={s['p_value']:.3g}")
            print(f"written to {res['dir']}")
        elif args.verb == "sweep-cvrate":
            rates = [float(r) for r in args.rates.split(",") if r.strip()]
            res = harness.cmd_sweep_cvrate(m, rates, progress=_print_row if args.verbose else None)
            for row in res["rows"]:
                _print_row(row)
            print(f"written to {res['dir']}")
        elif args.verb == "validate":
            checks, code, d = harness.cmd_validate(m)
            for c in checks:
                print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:28s} {c.measured}  (tolerance {c.tolerance})")
            print(f"written to {d}")
            return code
        elif args.verb == "export":
            seeds = m.eval_seeds()
            res = harness.cmd_export(m, seeds[0], args.seconds)
            print(f"written to {res['dir']}")
    except (ValueError, FileNotFoundError) as exc:
        print(f"lcreg {args.verb}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
