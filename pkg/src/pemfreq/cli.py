"""Command-line front end.

    pemfreq run --scenario FILE --seed N --out DIR
    pemfreq sweep --eta-max 0,0.33,0.67,1 --out DIR
    pemfreq report --out DIR --format md
    pemfreq calibrate --target-rocof 104
"""
from __future__ import annotations

import argparse
import io
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

from . import engine, report
from .errors import PemFreqError
from .scenario import bundled_scenario_path, emit_scenario, parse_scenario


def _eta_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty eta_max list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, default=None, help="scenario file (default: bundled reference scenario)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("--format", choices=("csv", "md"), default=None, help="report format")
    common.add_argument("--fast-init", action="store_true", help="skip warm-up, start from the quasi-steady initializer")
    common.add_argument("--subsample-fleet", type=int, default=None, metavar="N",
                        help="simulate N devices, each weighted to keep fleet MW unchanged")
    common.add_argument("--workers", type=int, default=None)

    p = argparse.ArgumentParser(prog="pemfreq", description="Grid frequency / PEM fleet co-simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="single closed-loop run")
    run.add_argument("--eta-max", type=float, default=None)
    sw = sub.add_parser("sweep", parents=[common], help="eta_max sweep from a shared warm-up")
    sw.add_argument("--eta-max", type=_eta_list, default=[0.0, 0.33, 0.67, 1.0])
    sub.add_parser("report", parents=[common], help="re-render the report of a previous run in --out")
    cal = sub.add_parser("calibrate", parents=[common], help="solve for the per-area base power S")
    cal.add_argument("--target-rocof", type=float, default=104.0, help="no-PEM ROCOF magnitude, mHz/s")
    return p


def load_scenario(args) -> engine.Scenario:
    s = parse_scenario(args.scenario or bundled_scenario_path())
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    sim = s.simulation
    if args.fast_init:
        sim = replace(sim, fast_init=True)
    if args.workers is not None:
        sim = replace(sim, workers=args.workers)
    s = replace(s, simulation=sim)
    if args.format is not None:
        s = replace(s, output=replace(s.output, report_format=args.format))
    if args.subsample_fleet is not None:
        s = s.subsampled(args.subsample_fleet)
    if getattr(args, "eta_max", None) is not None and not isinstance(args.eta_max, list):
        s = s.with_eta_max(args.eta_max)
    return s


def write_outputs(out: Path, files: dict[str, str]) -> None:
    """Write every file to a temporary name first, then move them into place."""
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="\n") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _csv(ts: engine.TimeSeries) -> str:
    buf = io.StringIO()
    ts.to_csv(buf)
    return buf.getvalue()


def _histograms_csv(ts: engine.TimeSeries) -> str:
    if not ts.histograms:
        return ""
    n = len(ts.histograms[0][1])
    lines = ["t," + ",".join(f"bin{i + 1}" for i in range(n))]
    lines += [f"{t:.10g}," + ",".join(str(int(v)) for v in h) for t, h in ts.histograms]
    return "\n".join(lines) + "\n"


def _notes(results) -> list[str]:
    notes = []
    for r in results:
        for v in r.estimate.violations:
            notes.append(f"eta_max={r.metrics.eta_max:g}: {v}")
    return notes


def _eta_tag(eta: float) -> str:
    return f"{eta:.2f}".replace(".", "p")


def cmd_run(args) -> int:
    s = load_scenario(args)
    t0 = time.perf_counter()
    res = engine.run_scenario(s)
    wall = time.perf_counter() - t0
    fmt = s.output.report_format
    files = {
        "timeseries.csv": _csv(res.series),
        "proportional.csv": _csv(res.proportional),
        "metrics.json": report.metrics_json([res.metrics]),
        "metrics.csv": report.metrics_csv([res.metrics]),
        f"report.{fmt}": report.run_report(s, [res.metrics], fmt, wall, _notes([res])),
        "scenario.yaml": emit_scenario(s),
    }
    if res.series.histograms:
        files["histograms.csv"] = _histograms_csv(res.series)
    write_outputs(args.out, files)
    print(report.response_table_md([res.metrics]), end="")
    print(report.damping_table_md([res.metrics]), end="")
    return 0


def cmd_sweep(args) -> int:
    s = load_scenario(args)
    t0 = time.perf_counter()
    results = engine.sweep(s, args.eta_max)
    wall = time.perf_counter() - t0
    metrics = [r.metrics for r in results]
    fmt = s.output.report_format
    files = {
        "metrics.json": report.metrics_json(metrics),
        "metrics.csv": report.metrics_csv(metrics),
        f"report.{fmt}": report.run_report(s, metrics, fmt, wall, _notes(results)),
        "scenario.yaml": emit_scenario(s),
    }
    for r in results:
        files[f"timeseries_eta{_eta_tag(r.metrics.eta_max)}.csv"] = _csv(r.series)
    write_outputs(args.out, files)
    print(report.response_table_md(metrics), end="")
    print(report.damping_table_md(metrics), end="")
    return 0


def cmd_report(args) -> int:
    src = args.out / "metrics.json"
    if not src.exists():
        raise PemFreqError(f"no metrics.json in {args.out}; run 'run' or 'sweep' first")
    metrics = report.metrics_from_json(src.read_text())
    s = parse_scenario(args.out / "scenario.yaml") if (args.out / "scenario.yaml").exists() else load_scenario(args)
    fmt = args.format or s.output.report_format
    text = report.run_report(s, metrics, fmt)
    write_outputs(args.out, {f"report.{fmt}": text})
    print(text, end="")
    return 0


def cmd_calibrate(args) -> int:
    s = load_scenario(args)
    S = engine.calibrate_base_power(s, args.target_rocof)
    print(f"S = {S:.1f} MW per area (no-PEM ROCOF {args.target_rocof:g} mHz/s)")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except PemFreqError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
