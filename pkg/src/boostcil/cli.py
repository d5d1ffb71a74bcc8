"""Command-line entry point.

    boostcil run --config cfg.json [--seed N] [--out DIR]
    boostcil ablate --config cfg.json --suite NAME [--out DIR]
    boostcil report --dir DIR

Exit code 0 on success; nonzero with a stage-tagged message on stderr
otherwise.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .evaluation import regenerate_reports
from .exceptions import ExperimentError
from .runner import build_suite, run_ablation_suite, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boostcil")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment end to end")
    run.add_argument("--config", required=True, help="path to a JSON config file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")

    ablate = sub.add_parser("ablate", help="run an ablation suite against a base config")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--suite", required=True, choices=["components", "beta", "exemplars"])
    ablate.add_argument("--out", default=None)

    report = sub.add_parser("report", help="regenerate plots from a results directory")
    report.add_argument("--dir", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.out is not None:
                cfg.out_dir = args.out
            run = run_experiment(cfg)
            for s in run.sessions:
                print(f"session {s.session}: acc={s.acc:.4f} old={s.acc_old} new={s.acc_new:.4f}")
            print(f"average incremental accuracy: {run.avg_inc_acc:.4f}")
            if cfg.out_dir:
                print(f"results written to {cfg.out_dir}")
        elif args.command == "ablate":
            cfg = load_config(args.config)
            if args.out is not None:
                cfg.out_dir = args.out
            rows = run_ablation_suite(cfg, build_suite(args.suite, cfg))
            for row in rows:
                if row["error"]:
                    print(f"{row['variant']}: FAILED ({row['error']})")
                else:
                    print(f"{row['variant']}: avg={row['avg_inc_acc']} final={row['final_acc']}")
        else:
            for path in regenerate_reports(args.dir):
                print(f"wrote {path}")
    except ExperimentError as e:
        tag = f"[session={e.session} stage={e.stage}] " if e.session is not None else ""
        print(f"error: {tag}{e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
