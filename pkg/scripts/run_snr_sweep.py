#!/usr/bin/env python3
"""Sweep the fronthaul SNR at fixed V and write the per-BS averages to CSV.

The baseline is unaffected by the fronthaul but is swept alongside for
paired comparison rows.
"""

import argparse
import sys

from fhsdn.cli import ExperimentSpec, run_experiment, write_csv
from fhsdn.sim import SimConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--snr-db", type=float, nargs="+", default=[0, 5, 10, 15, 20])
    parser.add_argument("--v", type=float, default=100.0)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--out", help="CSV path (default: stdout)")
    args = parser.parse_args()

    spec = ExperimentSpec(
        base=SimConfig(num_frames=args.frames),
        v_values=(args.v,),
        fronthaul_snr_db_values=tuple(args.snr_db),
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
