"""Two-timescale simulation engine.

A run advances frame by frame: the BSs upload their running estimates, the
fronthaul round trip is realized and quantized (or the frame is forfeited
when even the largest allowed overhead is insufficient), the controller
refreshes its equilibrium strategy and samples per-slot recommendation
rules, and every slot each BS re-optimizes its transmit powers over the
recommended sub-carriers, with queues and estimators trailing the realized
rates.  The non-coordinated baseline runs the identical slot loop with all
sub-carriers available, zero overhead and no controller, consuming the same
channel and traffic randomness for paired comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import controller as ctrl
from . import fronthaul as fh
from .channel import ChannelSampler, build_gain_set, quantize_exponential
from .equilibrium import verify_coarse_equilibrium
from .game import ActionSpace, GameModel
from .scheduler import BSScheduler, SchedulerParams, update_local_statistics

SCHEMES = ("sdn", "baseline")


@dataclass(frozen=True)
class Topology:
    """Distances (meters) from every BS to every user: [bs][mu][tx_bs]."""

    distances: tuple[tuple[tuple[float, ...], ...], ...]

    @property
    def num_bs(self) -> int:
        return len(self.distances)

    @property
    def mus_per_bs(self) -> tuple[int, ...]:
        return tuple(len(mus) for mus in self.distances)

    @classmethod
    def two_cell_default(cls) -> "Topology":
        # Two cells, two users each; near users 10 m from their BS and 40 m
        # from the interferer, far users 20 m and 30 m.
        return cls(
            distances=(
                ((10.0, 40.0), (20.0, 30.0)),
                ((40.0, 10.0), (30.0, 20.0)),
            )
        )

    def validate(self) -> None:
        for b, mus in enumerate(self.distances):
            if len(mus) < 1:
                raise ValueError(f"BS {b} has no users")
            for m, row in enumerate(mus):
                if len(row) != self.num_bs:
                    raise ValueError("each user needs one distance per BS")
                if any(d <= 0 for d in row):
                    raise ValueError("distances must be positive")


@dataclass(frozen=True)
class SimConfig:
    """Full configuration of one run; defaults follow the reference setup."""

    topology: Topology = field(default_factory=Topology.two_cell_default)
    scheme: str = "sdn"
    v: float = 50.0
    fronthaul_snr_db: float = 20.0
    seed: int = 0
    num_frames: int = 2000
    warmup_fraction: float = 0.1
    bs_power_mw: float = 100.0
    controller_power_mw: float = 10 ** 2.5
    noise_mw: float = 10 ** -8.5
    num_subcarriers: int = 2
    t0: int = 10
    tau_levels: tuple[float, ...] = (0.25, 0.5)
    arrival_rates_mbps: tuple[tuple[float, ...], ...] = ((8.0, 8.0), (5.0, 5.0))
    num_gain_levels: int = 2
    r_unit: float = 0.25 * math.log2(1.05)
    slot_duration_s: float = 0.1
    subcarrier_bandwidth_hz: float = 1e7
    packet_size_mbit: float = 0.01
    a_max_factor: float = 4.0
    # In-simulation solver budget: the equilibrium property of the returned
    # strategy is exact by construction, the tolerance only bounds how far
    # the recommendation objective may sit from its optimum.
    resolve_every: int = 10
    tv_threshold: float = 1e-3
    solver_tol: float = 2e-2
    solver_max_iter: int = 150
    warm_stages: int = 1
    warm_max_iter: int = 12

    def validate(self) -> None:
        self.topology.validate()
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.v < 0:
            raise ValueError("v must be non-negative")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.num_subcarriers < 1 or self.t0 < 1:
            raise ValueError("num_subcarriers and t0 must be >= 1")
        if self.num_gain_levels < 2:
            raise ValueError("num_gain_levels must be >= 2")
        if len(self.tau_levels) < 1 or any(t <= 0 for t in self.tau_levels):
            raise ValueError("tau_levels must be positive")
        if any(b <= a for a, b in zip(self.tau_levels, self.tau_levels[1:])):
            raise ValueError("tau_levels must be strictly increasing")
        if max(self.tau_levels) > self.t0:
            raise ValueError("overhead levels cannot exceed the frame length")
        if len(self.arrival_rates_mbps) != self.topology.num_bs:
            raise ValueError("need one arrival tuple per BS")
        for rates, n_mu in zip(self.arrival_rates_mbps, self.topology.mus_per_bs):
            if len(rates) != n_mu:
                raise ValueError("need one arrival rate per user")
            if any(r < 0 for r in rates):
                raise ValueError("arrival rates must be non-negative")
        for name in (
            "bs_power_mw",
            "controller_power_mw",
            "noise_mw",
            "r_unit",
            "slot_duration_s",
            "subcarrier_bandwidth_hz",
            "packet_size_mbit",
            "a_max_factor",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.resolve_every < 1:
            raise ValueError("resolve_every must be >= 1")


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    tau: Optional[float]
    per_bs_rate_se: tuple[float, ...]
    per_bs_rate_mbps: tuple[float, ...]
    queues_mbit: tuple[tuple[float, ...], ...]
    actions: tuple[int, ...]


@dataclass(frozen=True)
class Metrics:
    """Warmup-excluded averages plus bookkeeping for invariant checks."""

    per_bs_rate_mbps: tuple[float, ...]
    per_bs_queue_mbit: tuple[float, ...]
    per_bs_delay_s: tuple[float, ...]
    sum_rate_mbps: float
    sum_queue_mbit: float
    epsilon_u: float
    rp_objective: float
    no_rec_frame_fraction: float
    num_slots: int
    final_queues_mbit: tuple[tuple[float, ...], ...]
    arrived_mbit: tuple[tuple[float, ...], ...]
    served_mbit: tuple[tuple[float, ...], ...]
    clamp_mbit: tuple[tuple[float, ...], ...]


def sample_arrivals(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Packetized Poisson arrivals (Mbit) for one slot, clipped at the cap."""
    rates = np.asarray(config.arrival_rates_mbps, dtype=float)
    mean_mbit = rates * config.slot_duration_s
    mean_packets = mean_mbit / config.packet_size_mbit
    counts = rng.poisson(mean_packets)
    arrivals = counts * config.packet_size_mbit
    return np.minimum(arrivals, config.a_max_factor * mean_mbit)


def realize_slot(
    powers_mw: np.ndarray,
    direct_gains: np.ndarray,
    cross_gains: np.ndarray,
    tau: float,
    t0: int,
    noise_mw: float,
) -> tuple[np.ndarray, np.ndarray]:
    """True per-(BS, user, sub-carrier) rates and aggregate interference.

    ``cross_gains[tx, rx, m, s]`` must be zero on its diagonal (tx == rx);
    the interference a user sees is every other BS's per-sub-carrier power
    through its cross link.
    """
    sc_power = powers_mw.sum(axis=1)  # (B, S)
    interference = np.einsum("ts,tbms->bms", sc_power, cross_gains)
    sinr = powers_mw * direct_gains / (noise_mw + interference)
    rates = (t0 - tau) / t0 * np.log2(1.0 + sinr)
    return rates, interference


class Simulation:
    """One seeded run; owns all mutable state."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        topo = config.topology
        self.num_bs = topo.num_bs
        self.num_mus = topo.mus_per_bs[0]
        if any(n != self.num_mus for n in topo.mus_per_bs):
            raise ValueError("all BSs must serve the same number of users")
        self.num_sc = config.num_subcarriers
        levels = config.num_gain_levels

        spaces = [
            ActionSpace(self.num_mus, self.num_sc, config.bs_power_mw)
            for _ in range(self.num_bs)
        ]
        direct_sets = [
            [
                [
                    build_gain_set(
                        _link(topo, b, m, b), levels
                    )
                    for _ in range(self.num_sc)
                ]
                for m in range(self.num_mus)
            ]
            for b in range(self.num_bs)
        ]
        cross_sets = {}
        for tx in range(self.num_bs):
            for rx in range(self.num_bs):
                if tx == rx:
                    continue
                cross_sets[(tx, rx)] = [
                    [build_gain_set(_link(topo, rx, m, tx), levels) for _ in range(self.num_sc)]
                    for m in range(self.num_mus)
                ]
        self.model = GameModel(
            tau_levels=config.tau_levels,
            t0=config.t0,
            noise_mw=config.noise_mw,
            action_spaces=spaces,
            direct_gain_sets=direct_sets,
            cross_gain_sets=cross_sets,
        )

        # dense gain tables for the slot loop
        self.direct_table = np.zeros((self.num_bs, self.num_mus, self.num_sc, levels))
        for b in range(self.num_bs):
            for m in range(self.num_mus):
                for s in range(self.num_sc):
                    self.direct_table[b, m, s] = direct_sets[b][m][s].gains
        self.cross_table = np.zeros(
            (self.num_bs, self.num_bs, self.num_mus, self.num_sc, levels)
        )
        for (tx, rx), sets in cross_sets.items():
            for m in range(self.num_mus):
                for s in range(self.num_sc):
                    self.cross_table[tx, rx, m, s] = sets[m][s].gains

        # fronthaul links: mean gain calibrated so the mean per-sub-carrier
        # upload SNR at equal power split matches the configured value;
        # uplink and downlink fade independently around the same mean.
        snr_lin = 10 ** (config.fronthaul_snr_db / 10.0)
        fh_mean_gain = snr_lin * config.noise_mw / config.bs_power_mw
        self.fh_up_sets = [quantize_exponential(fh_mean_gain, levels) for _ in range(self.num_bs)]
        self.fh_down_sets = [quantize_exponential(fh_mean_gain, levels) for _ in range(self.num_bs)]

        dl_sets = []
        for b in range(self.num_bs):
            for m in range(self.num_mus):
                for s in range(self.num_sc):
                    dl_sets.append(direct_sets[b][m][s])
        self.cross_pairs = [
            (tx, rx) for tx in range(self.num_bs) for rx in range(self.num_bs) if tx != rx
        ]
        for tx, rx in self.cross_pairs:
            for m in range(self.num_mus):
                for s in range(self.num_sc):
                    dl_sets.append(cross_sets[(tx, rx)][m][s])
        # downlink sampler draws per (link, subcarrier) but the per-set
        # subcarrier dimension is already unrolled above
        self.dl_sampler = ChannelSampler(dl_sets, 1)
        fh_sets = list(self.fh_up_sets) + list(self.fh_down_sets)
        self.fh_sampler = ChannelSampler(fh_sets, self.num_sc)

        params = SchedulerParams(
            v=config.v,
            slot_duration_s=config.slot_duration_s,
            subcarrier_bandwidth_hz=config.subcarrier_bandwidth_hz,
        )
        self.schedulers = [
            BSScheduler(
                spaces[b],
                self.direct_table[b],
                num_tau=len(config.tau_levels),
                noise_mw=config.noise_mw,
                params=params,
            )
            for b in range(self.num_bs)
        ]

        self.tables = None
        self.controller = None
        if config.scheme == "sdn":
            self.tables = self.model.build_utility_tables()
            self.controller = ctrl.Controller(
                self.tables,
                resolve_every=config.resolve_every,
                tv_threshold=config.tv_threshold,
                tol=config.solver_tol,
                max_iter_per_stage=config.solver_max_iter,
                warm_stages=config.warm_stages,
                warm_max_iter=config.warm_max_iter,
                lambda_scale=1e6 / config.subcarrier_bandwidth_hz,
            )

        seq = np.random.SeedSequence(config.seed)
        ch_ss, tr_ss, ct_ss, sv_ss = seq.spawn(4)
        self.channel_rng = np.random.default_rng(ch_ss)
        self.traffic_rng = np.random.default_rng(tr_ss)
        self.controller_rng = np.random.default_rng(ct_ss)
        self.solver_rng = np.random.default_rng(sv_ss)  # reserved for restarts

        count = self.num_mus * self.num_sc * levels + len(config.tau_levels) + 1
        self.r_up = fh.upload_target_rate(count, config.r_unit)
        self.r_down = fh.download_target_rate(config.t0, config.r_unit)
        self.full_mask = (1 << self.num_sc) - 1
        self._gain_weights = [
            self.model.state_space._gain_weights[b] for b in range(self.num_bs)
        ]

    # -- frame-level pieces ----------------------------------------------------

    def fronthaul_outcome(self, fh_levels: np.ndarray) -> fh.FronthaulOutcome:
        cfg = self.config
        up_gains = np.zeros((self.num_bs, self.num_sc))
        down_gains = np.zeros((self.num_bs, self.num_sc))
        for b in range(self.num_bs):
            up_gains[b] = np.asarray(self.fh_up_sets[b].gains)[fh_levels[b]]
            down_gains[b] = np.asarray(self.fh_down_sets[b].gains)[
                fh_levels[self.num_bs + b]
            ]
        uploads = []
        downloads = []
        for b in range(self.num_bs):
            others = [o for o in range(self.num_bs) if o != b]
            uploads.append(
                fh.upload_time(
                    self.r_up,
                    up_gains[b],
                    up_gains[others],
                    cfg.bs_power_mw,
                    [cfg.bs_power_mw] * len(others),
                    cfg.noise_mw,
                )
            )
            downloads.append(
                fh.download_time(
                    self.r_down,
                    down_gains[b],
                    self.num_bs,
                    cfg.controller_power_mw,
                    cfg.noise_mw,
                )
            )
        return fh.round_trip_overhead(uploads, downloads, cfg.tau_levels)

    # -- main loop ---------------------------------------------------------------

    def run(self, trace_path=None) -> Metrics:
        cfg = self.config
        sdn = cfg.scheme == "sdn"
        t0 = cfg.t0
        warmup_frames = int(round(cfg.warmup_fraction * cfg.num_frames))
        mbit_per_se = cfg.subcarrier_bandwidth_hz * cfg.slot_duration_s / 1e6
        num_levels = cfg.num_gain_levels
        n_direct = self.num_bs * self.num_mus * self.num_sc

        rate_acc = np.zeros(self.num_bs)
        queue_acc = np.zeros(self.num_bs)
        counted_slots = 0
        arrived = np.zeros((self.num_bs, self.num_mus))
        served = np.zeros((self.num_bs, self.num_mus))
        clamped = np.zeros((self.num_bs, self.num_mus))
        norec_frames = 0
        trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None

        cross_real = np.zeros((self.num_bs, self.num_bs, self.num_mus, self.num_sc))
        slot_counter = 0
        try:
            for frame in range(cfg.num_frames):
                fh_levels = self.fh_sampler.sample(self.channel_rng)
                rules = None
                tau = 0.0
                tau_idx = -1
                if sdn:
                    # uploads first, then the realized round trip decides
                    # whether the recommendations arrive in time
                    reports = [s.report() for s in self.schedulers]
                    outcome = self.fronthaul_outcome(fh_levels)
                    if outcome.tau_quantized is None:
                        norec_frames += 1
                    else:
                        tau = outcome.tau_quantized
                        tau_idx = cfg.tau_levels.index(tau)
                        rules = self.controller.new_frame(reports, t0, self.controller_rng)
                        for s in self.schedulers:
                            s.stats.tau_counts[tau_idx] += 1
                forfeited = sdn and rules is None

                for t in range(t0):
                    lv = self.dl_sampler.sample(self.channel_rng)[:, 0]
                    arrivals = sample_arrivals(cfg, self.traffic_rng)
                    direct_lv = lv[:n_direct].reshape(
                        self.num_bs, self.num_mus, self.num_sc
                    )
                    cross_lv = lv[n_direct:].reshape(
                        len(self.cross_pairs), self.num_mus, self.num_sc
                    )

                    in_window = frame >= warmup_frames
                    if in_window:
                        for b in range(self.num_bs):
                            queue_acc[b] += self.schedulers[b].queues.sum()

                    gain_idx = [
                        int((direct_lv[b] * self._gain_weights[b]).sum())
                        for b in range(self.num_bs)
                    ]
                    actions = [0] * self.num_bs
                    masks = [0] * self.num_bs
                    if not forfeited:
                        if sdn:
                            global_idx = self.model.state_space.global_index(
                                tau_idx, gain_idx
                            )
                        for b in range(self.num_bs):
                            if sdn:
                                rec = ctrl.recommend(
                                    rules, t, global_idx, b, self.tables
                                )
                                mask = rec.sc_mask
                            else:
                                mask = self.full_mask
                            masks[b] = mask
                            key = (tau_idx, gain_idx[b], mask)
                            actions[b] = self.schedulers[b].choose_action(
                                key, direct_lv[b], mask
                            )

                    powers = np.stack(
                        [
                            self.model.action_spaces[b].powers_mw[actions[b]]
                            for b in range(self.num_bs)
                        ]
                    )
                    m_idx, s_idx = np.indices((self.num_mus, self.num_sc))
                    direct_real = np.stack(
                        [
                            self.direct_table[b][m_idx, s_idx, direct_lv[b]]
                            for b in range(self.num_bs)
                        ]
                    )
                    cross_real[:] = 0.0
                    for k, (tx, rx) in enumerate(self.cross_pairs):
                        cross_real[tx, rx] = self.cross_table[tx, rx][
                            m_idx, s_idx, cross_lv[k]
                        ]
                    rates, interference = realize_slot(
                        powers, direct_real, cross_real, tau, t0, cfg.noise_mw
                    )
                    se_per_mu = rates.sum(axis=2)  # (B, M)
                    for b in range(self.num_bs):
                        sched = self.schedulers[b]
                        q_before = sched.queues.copy()
                        sched.serve(se_per_mu[b], arrivals[b])
                        capacity = se_per_mu[b] * mbit_per_se
                        drained = np.minimum(q_before, capacity)
                        arrived[b] += arrivals[b]
                        served[b] += drained
                        clamped[b] += capacity - drained
                        update_local_statistics(
                            sched.stats, None, direct_lv[b], float(arrivals[b].sum())
                        )
                        if not forfeited and masks[b] != 0:
                            sched.interference.update(
                                (tau_idx, gain_idx[b], masks[b]), interference[b]
                            )

                    if in_window:
                        rate_acc += se_per_mu.sum(axis=1)
                        counted_slots += 1
                    if trace_fh is not None:
                        rec = SlotRecord(
                            slot=slot_counter,
                            tau=None if forfeited else tau,
                            per_bs_rate_se=tuple(float(v) for v in se_per_mu.sum(axis=1)),
                            per_bs_rate_mbps=tuple(
                                float(v) * cfg.subcarrier_bandwidth_hz / 1e6
                                for v in se_per_mu.sum(axis=1)
                            ),
                            queues_mbit=tuple(
                                tuple(float(q) for q in s.queues) for s in self.schedulers
                            ),
                            actions=tuple(actions),
                        )
                        trace_fh.write(json.dumps(rec.__dict__) + "\n")
                    slot_counter += 1
        finally:
            if trace_fh is not None:
                trace_fh.close()

        rate_mbps = rate_acc / max(counted_slots, 1) * cfg.subcarrier_bandwidth_hz / 1e6
        queue_mbit = queue_acc / max(counted_slots, 1)
        lam_bs = np.array([sum(r) for r in cfg.arrival_rates_mbps])
        with np.errstate(divide="ignore", invalid="ignore"):
            delay = np.where(lam_bs > 0, queue_mbit / np.where(lam_bs > 0, lam_bs, 1.0), 0.0)

        epsilon_u = math.nan
        rp_objective = math.nan
        if self.controller is not None and self.controller.solution is not None:
            rp_objective = self.controller.solution.objective
            report = verify_coarse_equilibrium(
                self.controller.solution.strategy, self.controller.problem, "expected"
            )
            epsilon_u = report.epsilon

        return Metrics(
            per_bs_rate_mbps=tuple(float(v) for v in rate_mbps),
            per_bs_queue_mbit=tuple(float(v) for v in queue_mbit),
            per_bs_delay_s=tuple(float(v) for v in delay),
            sum_rate_mbps=float(rate_mbps.sum()),
            sum_queue_mbit=float(queue_mbit.sum()),
            epsilon_u=float(epsilon_u),
            rp_objective=float(rp_objective),
            no_rec_frame_fraction=norec_frames / cfg.num_frames,
            num_slots=slot_counter,
            final_queues_mbit=tuple(
                tuple(float(q) for q in s.queues) for s in self.schedulers
            ),
            arrived_mbit=tuple(tuple(float(v) for v in row) for row in arrived),
            served_mbit=tuple(tuple(float(v) for v in row) for row in served),
            clamp_mbit=tuple(tuple(float(v) for v in row) for row in clamped),
        )


def _link(topo: Topology, rx_bs: int, mu: int, tx_bs: int):
    from .channel import LinkSpec

    return LinkSpec(
        tx_id=f"bs{tx_bs}",
        rx_id=f"bs{rx_bs}-mu{mu}",
        distance_m=topo.distances[rx_bs][mu][tx_bs],
    )


def run(config: SimConfig, trace_path=None) -> Metrics:
    """Validate, build and execute one seeded simulation."""
    return Simulation(config).run(trace_path)
