"""Command-line entry point.

Subcommands:

    rigfusion run <scenario.json> --out DIR [--seed S] [--duration D]
              [--sensors front,left,...] [--init zero|perturbed|truth|map-align]
    rigfusion eval --est FILE --gt FILE [--out FILE]
    rigfusion report --runlog DIR

Exit codes: 0 success, 1 configuration error, 2 runtime failure.  Errors are
also emitted as one JSON object per line on stderr for machine consumption.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_scenario, sensor_ids
from .errors import ConfigError, RigFusionError
from .evaluation import (
    compute_accuracy,
    extrinsic_convergence_report,
    load_trajectory,
)
from .network import InitPolicy, run_scenario


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _write_reports(out: Path, log) -> None:
    est = load_trajectory(out / "est_center.txt")
    gt = load_trajectory(out / "gt_center.txt")
    acc = compute_accuracy(est, gt)
    (out / "accuracy.txt").write_text(acc.as_text() + "\n")
    (out / "accuracy.kv").write_text(acc.as_kv() + "\n")
    conv = extrinsic_convergence_report(log.stamps(), log.extrinsic_series(),
                                        log.true_extrinsics)
    (out / "convergence.txt").write_text(conv.as_text() + "\n")
    rows = ["stamp," + ",".join(
        f"rot_deg_{i},trans_m_{i}" for i in range(conv.rotation_error_deg.shape[1]))]
    for k in range(len(conv.stamps)):
        vals = []
        for i in range(conv.rotation_error_deg.shape[1]):
            vals += [repr(float(conv.rotation_error_deg[k, i])),
                     repr(float(conv.translation_error_m[k, i]))]
        rows.append(repr(float(conv.stamps[k])) + "," + ",".join(vals))
    (out / "convergence.csv").write_text("\n".join(rows) + "\n")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["bus"] = dataclasses.replace(scenario.bus, seed=args.seed)
    if args.duration is not None:
        overrides["duration"] = args.duration
    if args.sensors is not None:
        names = [s.strip() for s in args.sensors.split(",") if s.strip()]
        overrides["enabled"] = sensor_ids(scenario.rig, names)
    if args.init is not None:
        overrides["init"] = dataclasses.replace(scenario.init, kind=args.init)
    if overrides:
        scenario = dataclasses.replace(scenario, **overrides)
    scenario.validate()

    log = run_scenario(scenario)
    out = Path(args.out)
    log.write(out)
    _write_reports(out, log)
    n_flagged = sum(1 for r in log.records if r.flags)
    print(f"run '{scenario.name}': {log.n_scans} scans, "
          f"{log.n_messages} messages ({log.n_dropped} dropped), "
          f"{n_flagged} flagged steps -> {out}")
    print((out / "accuracy.txt").read_text().rstrip())
    return 0


def cmd_eval(args) -> int:
    est = load_trajectory(args.est)
    gt = load_trajectory(args.gt)
    acc = compute_accuracy(est, gt)
    text = acc.as_text()
    print(text)
    if args.out:
        Path(args.out).write_text(acc.as_kv() + "\n")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.runlog)
    steps = run_dir / "steps.csv"
    truth_file = run_dir / "true_extrinsics.txt"
    if not steps.exists() or not truth_file.exists():
        raise ConfigError(f"{run_dir} does not look like a run log directory")
    truth = np.loadtxt(truth_file).reshape(-1, 6)
    n = len(truth)
    header = steps.read_text().splitlines()
    cols = header[0].split(",")
    x0 = cols.index("x0")
    stamps = []
    extr = []
    for line in header[1:]:
        parts = line.split(",")
        stamps.append(float(parts[0]))
        state = np.array([float(v) for v in parts[x0:x0 + 12 + 6 * n]])
        extr.append(state[12:].reshape(n, 6))
    conv = extrinsic_convergence_report(np.array(stamps), np.array(extr), truth)
    print(conv.as_text())

    est_f = run_dir / "est_center.txt"
    gt_f = run_dir / "gt_center.txt"
    if est_f.exists() and gt_f.exists():
        acc = compute_accuracy(load_trajectory(est_f), load_trajectory(gt_f))
        print(acc.as_text())
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rigfusion",
                                description="Decentralized multi-sensor "
                                            "calibration / localization "
                                            "simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate a scenario and write a run log")
    pr.add_argument("scenario", help="scenario JSON file")
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--duration", type=float, default=None)
    pr.add_argument("--sensors", default=None,
                    help="comma-separated subset (names or indices)")
    pr.add_argument("--init", default=None,
                    choices=["zero", "perturbed", "truth", "map-align"])
    pr.set_defaults(fn=cmd_run)

    pe = sub.add_parser("eval", help="compare trajectories")
    pe.add_argument("--est", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--out", default=None, help="write key=value report here")
    pe.set_defaults(fn=cmd_eval)

    pp = sub.add_parser("report", help="reports from a run log directory")
    pp.add_argument("--runlog", required=True)
    pp.set_defaults(fn=cmd_report)
    return p


def cli_main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; normalize bad flags to exit 1
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail("config", str(exc), 1)
    except RigFusionError as exc:
        return _fail("runtime", str(exc), 2)
    except OSError as exc:
        return _fail("io", str(exc), 2)


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
