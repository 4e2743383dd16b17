"""Command line: ``fedmutual run <config>`` and ``fedmutual validate <config>``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import ConfigError, load_config
from .data import DataError, fold_count
from .simulation import SimulationError, prepare_data, run_simulation, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmutual",
        description="Federated learning simulator: vanilla, async weight updating, mutual learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a simulation and write outputs")
    run.add_argument("config", help="path to an INI config file")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--strategy", help="override strategy.kind (vanilla, async, dml)")
    run.add_argument("--out", help="override run.out")
    run.add_argument("-v", "--verbose", action="store_true", help="log each round and write epochs.csv")
    check = sub.add_parser("validate", help="check a config (and its data) without running")
    check.add_argument("config")
    return parser


def _check_data(cfg) -> None:
    train, _ = prepare_data(cfg)
    need = fold_count(cfg.clients, cfg.rounds)
    if min(train.class_counts) < need:
        raise DataError(
            f"{need} folds need at least {need} examples per class; "
            f"training data has class counts {train.class_counts}"
        )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.command == "run":
        overrides = {("run", "seed"): args.seed, ("strategy", "kind"): args.strategy,
                     ("run", "out"): args.out}
        if args.verbose:
            overrides[("run", "verbose")] = "true"
            logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "validate":
            _check_data(cfg)
            print(f"{args.config}: ok ({cfg.strategy.kind.value}, {cfg.clients} clients, "
                  f"{cfg.rounds} rounds, {fold_count(cfg.clients, cfg.rounds)} folds)")
            return 0
        result = run_simulation(cfg)
        out = write_outputs(result, cfg.out)
    except (ConfigError, DataError, SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, acc, _ in result.final_metrics:
        print(f"{name}: held-out accuracy {acc:.4f}")
    print(f"outputs written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
