"""Command line entry point.

    oclbench run --config exp.cfg [--out results]
    oclbench dump-scenario --config exp.cfg [--out results]
    oclbench inspect-weights weights.oclw
    oclbench grad-check [--config exp.cfg]
"""

from __future__ import annotations

import argparse
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigError, FormatError
from .experiment import SeedFailures, dump_scenario, run_experiment
from .weights import inspect_weights

GRAD_TOLERANCE = 1e-4


def _load(path: str | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    return load_config(path)


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    results = run_experiment(cfg, args.out)
    for seed in cfg.seeds:
        metrics = results[seed].metrics
        summary = " ".join(f"{k}={metrics[k]:.4f}" for k in sorted(metrics))
        print(f"seed {seed}: {summary}")
    print(f"artifacts written to {args.out}")
    return 0


def _cmd_dump_scenario(args) -> int:
    for path in dump_scenario(_load(args.config), args.out):
        print(path)
    return 0


def _cmd_inspect_weights(args) -> int:
    for name, shape in inspect_weights(args.path):
        print(f"{name} {'x'.join(str(d) for d in shape)}")
    return 0


def _cmd_grad_check(args) -> int:
    # deferred import: builds a model, only needed for this subcommand
    from .gradsuite import run_grad_suite

    cfg = _load(args.config)
    report = run_grad_suite(cfg)
    worst = 0.0
    for name, err in report:
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        print(f"{name}: max rel err {err:.3e} [{status}]")
        worst = max(worst, err)
    print(f"worst: {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    return 0 if worst < GRAD_TOLERANCE else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="oclbench",
                                     description="online continual learning bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run all seeds of an experiment")
    p_run.add_argument("--config", default=None, help="flat key=value config file")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_dump = sub.add_parser("dump-scenario", help="write scenario CSVs only")
    p_dump.add_argument("--config", default=None)
    p_dump.add_argument("--out", default="results")
    p_dump.set_defaults(func=_cmd_dump_scenario)

    p_insp = sub.add_parser("inspect-weights", help="list tensors in a weight file")
    p_insp.add_argument("path")
    p_insp.set_defaults(func=_cmd_inspect_weights)

    p_grad = sub.add_parser("grad-check",
                            help="finite-difference check on the configured model")
    p_grad.add_argument("--config", default=None)
    p_grad.set_defaults(func=_cmd_grad_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, SeedFailures, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
