#!/usr/bin/env python3
"""Sweep the rate/queue trade-off parameter V for both schemes at fixed
fronthaul SNR and write the per-BS averages to CSV."""

import argparse
import sys

from fhsdn.cli import ExperimentSpec, run_experiment, write_csv
from fhsdn.sim import SimConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--v", type=float, nargs="+", default=[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100])
    parser.add_argument("--snr-db", type=float, default=20.0)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--out", help="CSV path (default: stdout)")
    args = parser.parse_args()

    spec = ExperimentSpec(
        base=SimConfig(num_frames=args.frames),
        v_values=tuple(args.v),
        fronthaul_snr_db_values=(args.snr_db,),
        schemes=("sdn", "baseline"),
        seeds=tuple(args.seeds),
    )
    rows, ok = run_experiment(spec)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
