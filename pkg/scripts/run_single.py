#!/usr/bin/env python3
"""Run one simulation and print its metrics."""

import argparse
import json

from fhsdn.sim import SimConfig, run


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scheme", default="sdn", choices=("sdn", "baseline"))
    parser.add_argument("--v", type=float, default=50.0)
    parser.add_argument("--snr-db", type=float, default=20.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--trace", help="optional NDJSON slot trace path")
    args = parser.parse_args()

    cfg = SimConfig(
        scheme=args.scheme,
        v=args.v,
        fronthaul_snr_db=args.snr_db,
        seed=args.seed,
        num_frames=args.frames,
    )
    metrics = run(cfg, trace_path=args.trace)
    print(json.dumps(metrics.__dict__, indent=2, default=str))


if __name__ == "__main__":
    main()
