"""Solve for the per-area base power S that gives a target no-PEM ROCOF.

    python3 scripts/calibrate_base_power.py [--target 104] [--substeps 40]
"""
import argparse
from dataclasses import replace

from pemfreq import engine
from pemfreq.scenario import load_bundled


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--target", type=float, default=104.0, help="ROCOF magnitude, mHz/s")
    p.add_argument("--substeps", type=int, default=None, help="override the grid substep count")
    args = p.parse_args()

    s = load_bundled()
    if args.substeps:
        s = replace(s, simulation=replace(s.simulation, substeps=args.substeps))
    S = engine.calibrate_base_power(s, args.target)
    s_new = replace(s, network=s.network.with_base_power(S))
    print(f"substeps {s.simulation.substeps}: S = {S:.1f} MW per area, "
          f"ROCOF {abs(engine.baseline_rocof(s_new)):.2f} mHz/s")


if __name__ == "__main__":
    main()
