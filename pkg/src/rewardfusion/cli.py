"""Command-line entry point: ``rewardfusion {train,eval,ablate,curves,oracle}``."""

from __future__ import annotations

import argparse
import csv
import enum
import io
import logging
import sys
from pathlib import Path

from rewardfusion import oracles
from rewardfusion.harness import (
    ConfigError,
    ExperimentConfig,
    atomic_write,
    curve_csv,
    emit_curves,
    load_config,
    run_ablation,
    summarize,
)
from rewardfusion.trainer import cem_train, eval_seeds, evaluate, load_params, save_params

log = logging.getLogger("rewardfusion")


class ExitCode(enum.IntEnum):
    OK = 0
    INTERNAL = 1
    USAGE = 2
    CONFIG = 3
    IO = 4
    RUN_FAILED = 5


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rewardfusion", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", type=Path, help="experiment config file ([section] key = value)")
        sp.add_argument("--seed", type=int, help="training / evaluation seed (overrides the config)")
        sp.add_argument("--out", type=Path, default=Path(out_default), help="output directory")

    sp = sub.add_parser("train", help="train one fusion mode with CEM")
    common(sp)
    sp.add_argument("--mode", default="FullRFM")

    sp = sub.add_parser("eval", help="evaluate a saved parameter file")
    common(sp)
    sp.add_argument("params", type=Path)
    sp.add_argument("--mode", default="FullRFM", help="fusion mode used to score returns")
    sp.add_argument("--trials", type=int)

    sp = sub.add_parser("ablate", help="train and evaluate all configured modes")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--mode", action="append", help="restrict to this mode (repeatable)")

    sp = sub.add_parser("curves", help="write the enhancement and phase curves")
    common(sp)

    sub.add_parser("oracle", help="print the independently derived reference values")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "trials", None) is not None:
        if args.trials <= 0:
            raise ConfigError("--trials must be positive")
        cfg = cfg.with_trials(args.trials)
    return cfg


def cmd_train(args, cfg: ExperimentConfig) -> ExitCode:
    fusion = cfg.fusion.with_mode(args.mode)
    result = cem_train(cfg.train, cfg.env, fusion)
    name = fusion.mode.value
    atomic_write(args.out / f"curve_{name}.csv", curve_csv(result.curve))
    save_params(result.best_params, args.out / f"params_{name}.txt")
    print(f"{name}: best fitness {result.best_fitness:.3f} after {cfg.train.iterations} iterations")
    return ExitCode.OK


def cmd_eval(args, cfg: ExperimentConfig) -> ExitCode:
    params = load_params(args.params)
    fusion = cfg.fusion.with_mode(args.mode)
    seeds = eval_seeds(cfg.harness.seed, cfg.harness.trials)
    summary = evaluate(params, cfg.env, fusion, seeds, record=True)
    row = summarize(fusion.mode.value, summary.result.traces, cfg.harness.window)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("seed", "return", "failure", "final_d_p", "final_d_theta"))
    res = summary.result
    for i, s in enumerate(seeds):
        values = (res.returns[i], res.final_d_p[i], res.final_d_theta[i])
        writer.writerow([int(s), repr(float(values[0])), int(res.failure[i])] + [repr(float(v)) for v in values[1:]])
    atomic_write(args.out / "eval.csv", buf.getvalue())
    print(
        f"mean return {summary.mean_return:.3f}  success {row.success_rate:.1f}%  "
        f"median d_p {summary.median_d_p:.4f} m  median d_theta {summary.median_d_theta:.4f} rad"
    )
    return ExitCode.OK


def cmd_ablate(args, cfg: ExperimentConfig) -> ExitCode:
    if args.mode:
        cfg = cfg.with_modes(args.mode)
    report = run_ablation(cfg, args.out)
    sys.stdout.write(report.to_table())
    return ExitCode.OK if all(r.ok for r in report.rows) else ExitCode.RUN_FAILED


def cmd_curves(args, cfg: ExperimentConfig) -> ExitCode:
    for path in emit_curves(cfg.fusion, args.out):
        print(path)
    return ExitCode.OK


def cmd_oracle(args, cfg) -> ExitCode:
    for name, value in oracles.derived_values().items():
        print(f"{name} = {value!r}")
    return ExitCode.OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "curves": cmd_curves, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return ExitCode.OK if exc.code == 0 else ExitCode.USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args) if args.command != "oracle" else None
        return int(COMMANDS[args.command](args, cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ExitCode.CONFIG
    except (OSError, ValueError) as exc:
        kind = ExitCode.IO if isinstance(exc, OSError) else ExitCode.USAGE
        print(f"error: {exc}", file=sys.stderr)
        return kind
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return ExitCode.INTERNAL


if __name__ == "__main__":
    sys.exit(main())
