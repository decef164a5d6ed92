"""Command-line entry point: simulate, identify, export, lap-report."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from racestack.simulation import (RaceLog, Scenario, ScenarioError,
                                  builtin_data_path, run_scenario)
from racestack.sysid import Dataset, hyperband, load_param_space
from racestack.vehicle import load_vehicle_params


def _log_dir(log_arg: str) -> Path:
    """Accept either a run directory or a path to its events.json."""
    p = Path(log_arg)
    if p.is_dir():
        return p
    if p.name == "events.json":
        return p.parent
    raise SystemExit(f"--log expects a run directory or its events.json, "
                     f"got {log_arg}")


def _read_events(run_dir: Path) -> dict:
    path = run_dir / "events.json"
    if not path.exists():
        raise SystemExit(f"no events.json in {run_dir}")
    return json.loads(path.read_text())


def cmd_simulate(args) -> int:
    try:
        scenario = Scenario.from_file(args.scenario, seed_override=args.seed)
        log = run_scenario(scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    paths = log.write(args.out)
    res = log.result
    print(f"scenario {scenario.name!r} seed={scenario.seed} "
          f"finished at t={res['finish_time']:.2f} s")
    if res["dnf"]:
        print(f"  ego {res['ego']}: DNF "
              f"(collision at t={res['collision_time']:.2f} s)")
    else:
        laps = ", ".join(f"{t:.3f}" for t in res["ego_lap_times"]) or "none"
        print(f"  ego {res['ego']}: lap times [{laps}] s, "
              f"{res['ego_overtakes']} overtake(s)")
    print(f"  wrote {paths['ticks']}, {paths['controls']}, {paths['events']}")
    return 0


def cmd_identify(args) -> int:
    data = Path(args.data)
    controls = Path(args.controls) if args.controls else data.parent / "controls.csv"
    if not controls.exists():
        print(f"no control log at {controls}; pass --controls explicitly",
              file=sys.stderr)
        return 2
    dataset = Dataset.from_log_csv(
        data, controls, vehicles=[args.vehicle] if args.vehicle else None)
    space = load_param_space(args.space)
    base = load_vehicle_params(args.params if args.params
                               else builtin_data_path("vehicle_params.json"))
    trace: list = []
    best = hyperband(args.budget, args.eta, space, dataset, base,
                     seed=args.seed, trace=trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "best.json", "w") as fh:
        json.dump({"values": best.values, "loss": best.loss}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bracket", "rung", "n_i", "rounds", "best_loss"))
        for row in trace:
            w.writerow((row["bracket"], row["rung"], row["n_i"],
                        row["rounds"], repr(row["best_loss"])))
    print(f"best loss {best.loss:.6g} over {len(dataset)} episode(s); "
          f"wrote {out / 'best.json'} and {out / 'trace.csv'}")
    return 0


def cmd_export(args) -> int:
    run_dir = _log_dir(args.log)
    payload = _read_events(run_dir)
    ticks_path = run_dir / "ticks.csv"
    if args.format == "csv":
        sys.stdout.write(ticks_path.read_text())
        return 0
    with open(ticks_path, newline="") as fh:
        ticks = list(csv.DictReader(fh))
    payload["ticks"] = ticks
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def cmd_lap_report(args) -> int:
    payload = _read_events(_log_dir(args.log))
    result = payload.get("result", {})
    laps: dict = {}
    for e in payload.get("events", ()):
        if e.get("type") == "lap":
            laps.setdefault(e["vehicle"], []).append(e)
    print(f"run: {payload.get('meta', {}).get('name', '?')}  "
          f"seed={payload.get('meta', {}).get('seed', '?')}")
    if not laps:
        print("no completed laps")
    for vid in sorted(laps):
        for e in laps[vid]:
            note = " (partial)" if e.get("partial") else ""
            print(f"  {vid}  lap {e['lap']}  t={e['t']:.3f} s  "
                  f"lap_time={e['lap_time']:.3f} s{note}")
    ego = result.get("ego")
    if ego is not None:
        status = "DNF" if result.get("dnf") else "finished"
        print(f"ego {ego}: {status} at t={result.get('finish_time', 0):.2f} s, "
              f"{result.get('ego_overtakes', 0)} overtake(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racestack",
        description="Head-to-head racing stack: simulate scenarios, identify "
                    "tire parameters from logs, inspect run logs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("--scenario", required=True,
                   help="scenario JSON (builtin: prefix resolves packaged files)")
    p.add_argument("--out", required=True, help="output directory for logs")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's master seed")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("identify", help="fit tire parameters to a drive log")
    p.add_argument("--data", required=True, help="ticks.csv from a run")
    p.add_argument("--space", required=True, help="parameter space JSON")
    p.add_argument("--budget", type=float, default=81.0,
                   help="max mutation rounds per candidate (R)")
    p.add_argument("--eta", type=float, default=3.0, help="halving factor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controls", default=None,
                   help="controls.csv (default: next to --data)")
    p.add_argument("--params", default=None,
                   help="base vehicle params JSON (default: packaged)")
    p.add_argument("--vehicle", default=None,
                   help="only fit this vehicle id (default: all)")
    p.add_argument("--out", default="identify_out",
                   help="output directory for best.json + trace.csv")
    p.set_defaults(fn=cmd_identify)

    p = sub.add_parser("export", help="re-emit a run log as csv or json")
    p.add_argument("--log", required=True,
                   help="run directory or its events.json")
    p.add_argument("--format", required=True, choices=("csv", "json"))
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("lap-report", help="print lap times from a run log")
    p.add_argument("--log", required=True,
                   help="run directory or its events.json")
    p.set_defaults(fn=cmd_lap_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
