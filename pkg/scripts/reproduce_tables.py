"""Run the eta_max sweep on the bundled scenario and print both tables.

    python3 scripts/reproduce_tables.py [--subsample N] [--fast-init]
"""
import argparse
import time
from dataclasses import replace

from pemfreq import engine, report
from pemfreq.scenario import load_bundled


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--subsample", type=int, default=None, metavar="N", help="simulate N weighted devices")
    p.add_argument("--fast-init", action="store_true", help="skip the warm-up")
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()

    s = load_bundled()
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    if args.fast_init:
        s = replace(s, simulation=replace(s.simulation, fast_init=True))
    if args.subsample:
        s = s.subsampled(args.subsample)

    t0 = time.perf_counter()
    results = engine.sweep(s, [0.0, 0.33, 0.67, 1.0])
    metrics = [r.metrics for r in results]
    print(report.response_table_md(metrics))
    print(report.damping_table_md(metrics))
    for r in results:
        for v in r.estimate.violations:
            print(f"note eta_max={r.metrics.eta_max:g}: {v}")
    print(f"wall clock {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
