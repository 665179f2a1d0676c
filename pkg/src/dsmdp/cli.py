"""Command-line front end.

    dsmdp goldens   [--convention appendixc|section3] [--arithmetic exact|worked] [--dump-qvalues]
    dsmdp simulate  [--config PATH] [--seed N] [--n N] --out DIR
    dsmdp train     [--config PATH] [--seed N] --out DIR [--format csv|json]
    dsmdp attribute [--config PATH] [--lengths 1,8,64] --out DIR [--dump-qvalues]
    dsmdp calibrate --input FILE.jsonl --out DIR [--bootstrap 100] [--by-task]

Exit codes: 0 success, 1 validation failure, 2 I/O or parse failure.
Set DSMDP_LOG_LEVEL (e.g. DEBUG) for more output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__, config
from .attribution import attribution_sweep, write_sweep_csv
from .calibration import calibration_report, group_by_task
from .goldens import format_table, qvalue_table, run_goldens
from .objectives import reward
from .policy import KLSign
from .trainer import TrainingDiverged, summarize, train
from .trajectory import Trajectory, read_jsonl, sample_batch, write_jsonl

log = logging.getLogger("dsmdp")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
QTABLE_COLUMNS = ("step", "action", "d_k", "future_v", "q", "score", "parameter", "contribution")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key = value or JSON settings file (or a manifest.json to replay)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=out_required)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--convention", choices=[k.value for k in KLSign])
    p.add_argument("--dump-config", type=Path, metavar="PATH", help="write the resolved settings and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsmdp", description="Two-stage decision-sampling laboratory.")
    parser.add_argument("--version", action="version", version=f"dsmdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("goldens", help="recompute the worked example and check it")
    _common(p, out_required=False)
    p.add_argument("--arithmetic", choices=("exact", "worked"), default="exact")
    p.add_argument("--perturb-theta-s", type=float, default=0.0, help="negative control: shift theta_s")
    p.add_argument("--dump-qvalues", action="store_true")

    p = sub.add_parser("simulate", help="sample trajectories to JSONL")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--task", help="task label written on every line")

    p = sub.add_parser("train", help="GRPO-style training run")
    _common(p)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("attribute", help="expected attribution sweep over answer lengths")
    _common(p)
    p.add_argument("--lengths", help="comma-separated answer lengths")
    p.add_argument("--dump-qvalues", action="store_true")
    p.add_argument("--trajectory", default="WR CS", help="trajectory for --dump-qvalues, e.g. 'WR CS'")

    p = sub.add_parser("calibrate", help="fit the calibration model to trajectory JSONL")
    _common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--by-task", action="store_true")
    return parser


def resolve_settings(args) -> config.Settings:
    settings = config.load(args.config) if args.config else config.Settings()
    overrides = {"seed": args.seed, "kl_sign_convention": args.convention}
    for name in ("n", "steps"):
        overrides[name] = getattr(args, name, None)
    if getattr(args, "lengths", None):
        overrides["lengths"] = config._coerce("lengths", args.lengths)
    return settings.replace(**overrides).validate()


def write_manifest(out: Path, command: str, settings: config.Settings, artifacts: list[str], argv) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": settings.to_dict(),
        "seed": settings.seed,
        "artifacts": sorted(artifacts),
        "version": f"dsmdp {__version__}",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _write_rows(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _dump_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        raise TypeError(repr(o))

    path.write_text(json.dumps(obj, indent=2, default=default) + "\n", encoding="utf-8")


def cmd_goldens(args, settings: config.Settings) -> tuple[int, list[str]]:
    convention = KLSign(args.convention) if args.convention else KLSign.APPENDIX_C
    results = run_goldens(convention, args.perturb_theta_s, args.arithmetic)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} within tolerance "
          f"(convention={convention.value}, arithmetic={args.arithmetic})")
    if args.dump_qvalues:
        print()
        writer = csv.DictWriter(sys.stdout, fieldnames=QTABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(qvalue_table())
    artifacts = []
    if args.out:
        payload = [
            {"name": r.golden.name, "expected": r.golden.expected, "value": r.value,
             "exact_value": r.exact_value, "diff": r.diff, "passed": r.passed,
             "sign_sensitive": r.golden.sign_sensitive}
            for r in results
        ]
        _dump_json(args.out / "goldens.json", payload)
        artifacts.append("goldens.json")
    return (EXIT_VALIDATION if failed else EXIT_OK), artifacts


def cmd_simulate(args, settings: config.Settings) -> tuple[int, list[str]]:
    trajs = sample_batch(settings.params, settings.world, settings.n, settings.seed)
    name = "trajectories.jsonl"
    write_jsonl(trajs, args.out / name, task=args.task)
    summary = {
        "n": len(trajs),
        "mean_reward": sum(reward(t) for t in trajs) / len(trajs),
        "truncated": sum(t.truncated for t in trajs),
        "mean_attempts": sum(len(t) for t in trajs) / len(trajs),
    }
    _dump_json(args.out / "summary.json", summary)
    return EXIT_OK, [name, "summary.json"]


def cmd_train(args, settings: config.Settings) -> tuple[int, list[str]]:
    status = EXIT_OK
    try:
        trace = train(settings.train_config)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        trace, status = exc.trace, EXIT_VALIDATION
    artifacts = []
    if len(trace):
        name = f"trace.{args.format}"
        (trace.write_csv if args.format == "csv" else trace.write_json)(args.out / name)
        _dump_json(args.out / "summary.json", summarize(trace).to_json())
        artifacts += [name, "summary.json"]
    return status, artifacts


def cmd_attribute(args, settings: config.Settings) -> tuple[int, list[str]]:
    rows = attribution_sweep(settings.params, settings.ref, settings.world, settings.lengths,
                             settings.balance_threshold)
    if args.format == "csv":
        name = "sweep.csv"
        write_sweep_csv(rows, args.out / name)
    else:
        name = "sweep.json"
        _dump_json(args.out / name, [{"L": r.length, **r.report.to_json()} for r in rows])
    artifacts = [name]
    for r in rows:
        rep = r.report
        print(f"L={r.length:<5} {rep.track.value:<7} ratio={rep.ratio:.4g} balanced={rep.balanced}")
    if args.dump_qvalues:
        table = qvalue_table(settings.params, settings.ref, settings.world, Trajectory.from_string(args.trajectory))
        _write_rows(args.out / "qvalues.csv", table, QTABLE_COLUMNS)
        artifacts.append("qvalues.csv")
    return EXIT_OK, artifacts


def cmd_calibrate(args, settings: config.Settings) -> tuple[int, list[str]]:
    pairs = read_jsonl(args.input)
    if not pairs:
        raise ValueError(f"{args.input}: no records")
    if args.by_task:
        groups = group_by_task(pairs)
    else:
        groups = group_by_task([(t, None) for t, _ in pairs])
    reports = [calibration_report(g, args.bootstrap, settings.seed) for g in groups]
    _dump_json(args.out / "calibration.json", reports)
    for rep in reports:
        print(f"{rep['task']}: n={rep['n']} predicted={rep['predicted_acc']} observed={rep['observed_acc']}")
    return EXIT_OK, ["calibration.json"]


COMMANDS = {
    "goldens": cmd_goldens,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DSMDP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_IO
    try:
        settings = resolve_settings(args)
    except config.ConfigError as exc:
        print(f"dsmdp: config error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"dsmdp: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dsmdp: invalid settings: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.dump_config:
        text = config.dump_json(settings) if args.dump_config.suffix == ".json" else config.dump_kv(settings)
        try:
            args.dump_config.write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"dsmdp: {exc}", file=sys.stderr)
            return EXIT_IO
        return EXIT_OK

    try:
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
        status, artifacts = COMMANDS[args.command](args, settings)
        if args.out:
            write_manifest(args.out, args.command, settings, artifacts, argv)
    except OSError as exc:
        print(f"dsmdp: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # malformed input records
        print(f"dsmdp: {exc}", file=sys.stderr)
        return EXIT_IO
    return status


if __name__ == "__main__":
    sys.exit(main())
