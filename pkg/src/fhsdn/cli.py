"""Experiment driver: config parsing, sweep execution and CSV emission.

The config file is YAML with two kinds of keys: sweep axes (``v_values``,
``fronthaul_snr_db_values``, ``schemes``, ``seeds``) and overrides of the
base run configuration (see ``BASE_KEYS``).  An empty file runs the full
default sweep of the reference setup.  Results stream to CSV, one row per
(scheme, V, SNR, seed, BS), written in deterministic sweep order no matter
how workers finish.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import yaml

from .sim import Metrics, SCHEMES, SimConfig, Topology
from .sim import run as run_sim

WORKERS_ENV = "FHSDN_WORKERS"

CSV_COLUMNS = [
    "run_id",
    "scheme",
    "V",
    "fronthaul_snr_db",
    "seed",
    "bs_id",
    "avg_rate_mbps",
    "avg_queue_mbit",
    "delay_proxy_s",
    "sum_rate_mbps",
    "sum_queue_mbit",
    "epsilon_u",
    "rp_objective",
    "no_rec_frame_fraction",
]

SWEEP_KEYS = {"v_values", "fronthaul_snr_db_values", "schemes", "seeds"}
BASE_KEYS = {
    "num_frames",
    "warmup_fraction",
    "t0",
    "num_subcarriers",
    "tau_levels",
    "arrival_rates_mbps",
    "bs_power_mw",
    "controller_power_mw",
    "noise_mw",
    "num_gain_levels",
    "r_unit",
    "slot_duration_s",
    "subcarrier_bandwidth_hz",
    "packet_size_mbit",
    "a_max_factor",
    "resolve_every",
    "tv_threshold",
    "solver_tol",
    "solver_max_iter",
    "warm_stages",
    "warm_max_iter",
    "distances",
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Sweep axes around a base run configuration."""

    base: SimConfig = field(default_factory=SimConfig)
    v_values: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
    fronthaul_snr_db_values: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    schemes: tuple[str, ...] = ("sdn", "baseline")
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not self.v_values or not self.fronthaul_snr_db_values:
            raise ConfigError("sweep axes must be non-empty")
        if not self.schemes or not self.seeds:
            raise ConfigError("schemes and seeds must be non-empty")
        if any(v < 0 for v in self.v_values):
            raise ConfigError("V values must be non-negative")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")

    def grid(self):
        """Deterministic sweep order: scheme, V, SNR, seed."""
        for scheme in self.schemes:
            for v in self.v_values:
                for snr in self.fronthaul_snr_db_values:
                    for seed in self.seeds:
                        yield scheme, v, snr, seed

    def config_for(self, scheme: str, v: float, snr: float, seed: int) -> SimConfig:
        return replace(
            self.base, scheme=scheme, v=v, fronthaul_snr_db=snr, seed=int(seed)
        )


def _to_nested_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_to_nested_tuple(v) for v in value)
    return value


def parse_config(path: str) -> ExperimentSpec:
    """Load and validate a YAML experiment file; empty file means defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    unknown = set(raw) - SWEEP_KEYS - BASE_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    base_kwargs = {}
    for key in BASE_KEYS & set(raw):
        value = _to_nested_tuple(raw[key])
        if key == "distances":
            base_kwargs["topology"] = Topology(distances=value)
        else:
            base_kwargs[key] = value
    try:
        base = SimConfig(**base_kwargs)
        base.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid base configuration: {exc}") from exc

    spec_kwargs = {"base": base}
    for key in SWEEP_KEYS & set(raw):
        spec_kwargs[key] = _to_nested_tuple(raw[key])
    try:
        spec = ExperimentSpec(**spec_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for scheme, v, snr, seed in spec.grid():
        try:
            spec.config_for(scheme, v, snr, seed).validate()
        except ValueError as exc:
            raise ConfigError(f"invalid sweep point {scheme}/{v}/{snr}/{seed}: {exc}")
    return spec


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _run_point(config: SimConfig) -> Metrics:
    return run_sim(config)


def _effective_config(config: SimConfig) -> SimConfig:
    # The baseline ignores the fronthaul entirely, so all SNR points share
    # one result; normalizing the key lets the sweep reuse it.
    if config.scheme == "baseline":
        return replace(config, fronthaul_snr_db=0.0)
    return config


def run_experiment(spec: ExperimentSpec, max_workers=None) -> tuple[list[dict], bool]:
    """Execute the sweep; returns (rows, all_succeeded).

    Failed runs yield one row per BS with ``error`` in every metric column;
    the sweep keeps going.
    """
    points = list(spec.grid())
    keys = [_effective_config(spec.config_for(*p)) for p in points]
    pending = sorted(
        set(keys), key=lambda c: (c.scheme, c.v, c.fronthaul_snr_db, c.seed)
    )
    if max_workers is None:
        max_workers = int(os.environ.get(WORKERS_ENV, "0")) or os.cpu_count() or 1
    results: dict[SimConfig, object] = {}
    if max_workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            for cfg, outcome in zip(pending, pool.map(_run_point_safe, pending)):
                results[cfg] = outcome
    else:
        for cfg in pending:
            results[cfg] = _run_point_safe(cfg)

    num_bs = spec.base.topology.num_bs
    rows = []
    ok = True
    for point, key in zip(points, keys):
        scheme, v, snr, seed = point
        run_id = f"{scheme}-v{v:g}-snr{snr:g}-seed{seed}"
        outcome = results[key]
        if isinstance(outcome, Metrics):
            for b in range(num_bs):
                rows.append(
                    {
                        "run_id": run_id,
                        "scheme": scheme,
                        "V": v,
                        "fronthaul_snr_db": snr,
                        "seed": seed,
                        "bs_id": b,
                        "avg_rate_mbps": outcome.per_bs_rate_mbps[b],
                        "avg_queue_mbit": outcome.per_bs_queue_mbit[b],
                        "delay_proxy_s": outcome.per_bs_delay_s[b],
                        "sum_rate_mbps": outcome.sum_rate_mbps,
                        "sum_queue_mbit": outcome.sum_queue_mbit,
                        "epsilon_u": outcome.epsilon_u,
                        "rp_objective": outcome.rp_objective,
                        "no_rec_frame_fraction": outcome.no_rec_frame_fraction,
                    }
                )
        else:
            ok = False
            for b in range(num_bs):
                row = {c: "error" for c in CSV_COLUMNS}
                row.update(
                    run_id=run_id, scheme=scheme, V=v, fronthaul_snr_db=snr,
                    seed=seed, bs_id=b,
                )
                rows.append(row)
    return rows, ok


def _run_point_safe(config: SimConfig):
    try:
        return _run_point(config)
    except Exception as exc:  # noqa: BLE001 - the row carries the marker
        return f"{type(exc).__name__}: {exc}"


def write_csv(rows: list[dict], fh) -> None:
    """UTF-8, LF-terminated CSV with floats at 9 significant digits."""
    fh.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        fh.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fhsdn",
        description="Run two-timescale scheduling experiments and emit CSV.",
    )
    parser.add_argument("--config", required=True, help="YAML experiment file")
    parser.add_argument("--out", help="CSV output path (default: stdout)")
    parser.add_argument(
        "--seed-override",
        type=int,
        help="replace the seed axis with this single seed",
    )
    parser.add_argument(
        "--scheme",
        choices=SCHEMES,
        help="restrict the sweep to one scheme",
    )
    args = parser.parse_args(argv)

    try:
        spec = parse_config(args.config)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        spec = replace(spec, seeds=(args.seed_override,))
    if args.scheme is not None:
        spec = replace(spec, schemes=(args.scheme,))

    rows, ok = run_experiment(spec)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
