"""Per-slot base-station logic: queue-aware power allocation and estimators.

Each slot the BS maximizes a queue-weighted sum of expected log rates over
the sub-carriers the controller recommended, by continuous water filling
against its empirical conditional interference distributions, then projects
the continuous allocation onto its discrete action set.  Queues follow the
standard arrival/service recursion, and the BS keeps running estimates of
its state marginals, mean arrivals and conditional interference for upload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import waterfill_kernel
from .controller import BSReport
from .game import ActionSpace

MBIT = 1e6

# resolution for keying observed interference values (mW)
INTERFERENCE_QUANTUM = 1e-15


@dataclass(frozen=True)
class SchedulerParams:
    """Knobs of the per-slot allocation."""

    v: float
    slot_duration_s: float = 0.1
    subcarrier_bandwidth_hz: float = 1e7
    rel_tol: float = 1e-8
    max_bisect_iter: int = 100

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("trade-off parameter must be non-negative")
        if self.slot_duration_s <= 0 or self.subcarrier_bandwidth_hz <= 0:
            raise ValueError("slot duration and bandwidth must be positive")


@dataclass
class QueueState:
    q_mbit: np.ndarray

    def __post_init__(self):
        self.q_mbit = np.asarray(self.q_mbit, dtype=float)
        if (self.q_mbit < 0).any() or not np.isfinite(self.q_mbit).all():
            raise ValueError("queues must be finite and non-negative")


@dataclass
class LocalStatistics:
    """Empirical counts a BS accumulates for its frame-level report."""

    gain_counts: np.ndarray  # (M, S, L)
    tau_counts: np.ndarray  # (num_tau,)
    arrival_sum_mbit: float = 0.0
    arrival_slots: int = 0


class InterferenceEstimate:
    """Empirical conditional interference distributions.

    Keyed by (overhead index, local gain index, recommended sub-carrier
    mask); per key one discrete distribution per (user, sub-carrier),
    updated by moving the old distribution toward a point mass at the new
    observation with weight 1/(1+n).  Before the first observation of a key
    the estimate is a point mass at zero interference.
    """

    def __init__(self, num_mus: int, num_sc: int, initial_capacity: int = 8):
        self.num_mus = num_mus
        self.num_sc = num_sc
        self._cap = initial_capacity
        self.table: dict[tuple, dict] = {}
        self._zero_vals = np.zeros((num_mus, num_sc, 1))
        self._zero_probs = np.ones((num_mus, num_sc, 1))
        self._zero_lens = np.ones((num_mus, num_sc), dtype=np.int64)

    def count(self, key) -> int:
        entry = self.table.get(key)
        return 0 if entry is None else entry["count"]

    def distributions(self, key):
        """(values, probs, lens) arrays; point mass at zero when unseen."""
        entry = self.table.get(key)
        if entry is None:
            return self._zero_vals, self._zero_probs, self._zero_lens
        return entry["vals"], entry["probs"], entry["lens"]

    def update(self, key, observed_mw: np.ndarray) -> None:
        """Fold one (M, S) interference observation into the matching key."""
        observed = np.asarray(observed_mw, dtype=float)
        entry = self.table.get(key)
        if entry is None:
            entry = {
                "count": 0,
                "vals": np.zeros((self.num_mus, self.num_sc, self._cap)),
                "probs": np.zeros((self.num_mus, self.num_sc, self._cap)),
                "lens": np.zeros((self.num_mus, self.num_sc), dtype=np.int64),
            }
            self.table[key] = entry
        n = entry["count"]
        keep = n / (1.0 + n)
        add = 1.0 / (1.0 + n)
        vals, probs, lens = entry["vals"], entry["probs"], entry["lens"]
        if vals.shape[2] == lens.max():
            grow = np.zeros((self.num_mus, self.num_sc, vals.shape[2] + self._cap))
            grow[:, :, : vals.shape[2]] = vals
            entry["vals"] = vals = grow
            grow = np.zeros_like(vals)
            grow[:, :, : probs.shape[2]] = probs
            entry["probs"] = probs = grow
        for m in range(self.num_mus):
            for s in range(self.num_sc):
                quantized = round(observed[m, s] / INTERFERENCE_QUANTUM)
                value = quantized * INTERFERENCE_QUANTUM
                ln = lens[m, s]
                probs[m, s, :ln] *= keep
                hit = -1
                for k in range(ln):
                    if vals[m, s, k] == value:
                        hit = k
                        break
                if hit >= 0:
                    probs[m, s, hit] += add
                else:
                    vals[m, s, ln] = value
                    probs[m, s, ln] = add
                    lens[m, s] = ln + 1
        entry["count"] = n + 1


def bp_weight(
    queue_mbit: float,
    v: float,
    gain: float,
    ivals: np.ndarray,
    iprobs: np.ndarray,
    noise_mw: float,
) -> float:
    """Marginal value of the first power unit for one (user, sub-carrier)."""
    ivals = np.asarray(ivals, dtype=float)
    iprobs = np.asarray(iprobs, dtype=float)
    if abs(iprobs.sum() - 1.0) > 1e-9:
        raise ValueError("interference probabilities must sum to one")
    return float(((queue_mbit + v) * gain / (noise_mw + ivals) * iprobs).sum())


def water_fill(
    queues_mbit: np.ndarray,
    v: float,
    gains: np.ndarray,
    sc_mask: int,
    interference: tuple[np.ndarray, np.ndarray, np.ndarray],
    budget_mw: float,
    noise_mw: float,
    params: SchedulerParams,
) -> tuple[np.ndarray, float]:
    """Continuous allocation over the allowed sub-carriers.

    Returns the (M, S) power map and the water level; the all-zero map with
    level 0 when no sub-carrier is allowed or every weight vanishes.
    """
    gains = np.ascontiguousarray(gains, dtype=float)
    num_mus, num_sc = gains.shape
    active = np.array(
        [1 if sc_mask & (1 << s) else 0 for s in range(num_sc)], dtype=np.uint8
    )
    qv = np.ascontiguousarray(np.asarray(queues_mbit, dtype=float) + v)
    ivals, iprobs, ilens = interference
    return waterfill_kernel(
        qv,
        gains,
        active,
        np.ascontiguousarray(ivals),
        np.ascontiguousarray(iprobs),
        np.ascontiguousarray(ilens),
        noise_mw,
        budget_mw,
        params.rel_tol,
        params.max_bisect_iter,
    )


def project_to_action(
    continuous_powers: np.ndarray, action_space: ActionSpace, sc_mask: int
) -> int:
    """Nearest discrete action supported on the allowed sub-carriers.

    Euclidean distance over the flattened (user, sub-carrier) power map;
    ties resolve to the lowest action index.
    """
    allowed = action_space.supported_on(sc_mask)
    if len(allowed) == 0:
        raise ValueError("no action supported on the given mask")
    diffs = action_space.powers_mw[allowed].reshape(len(allowed), -1) - np.asarray(
        continuous_powers, dtype=float
    ).ravel()
    return int(allowed[np.argmin((diffs * diffs).sum(axis=1))])


def update_queue(
    q_mbit: float,
    served_se: float,
    arrival_mbit: float,
    bandwidth_hz: float = 1e7,
    slot_s: float = 0.1,
) -> float:
    """One step of the arrival/service recursion.

    ``served_se`` is the slot's spectral efficiency summed over sub-carriers
    (bit/s/Hz); it converts to Mbit through the sub-carrier bandwidth and the
    slot duration.
    """
    if q_mbit < 0 or served_se < 0 or arrival_mbit < 0:
        raise ValueError("queue, service and arrival must be non-negative")
    served_mbit = served_se * bandwidth_hz * slot_s / MBIT
    return max(q_mbit - served_mbit, 0.0) + arrival_mbit


def update_local_statistics(
    stats: LocalStatistics,
    tau_index,
    gain_levels: np.ndarray,
    arrival_total_mbit: float,
) -> LocalStatistics:
    """Fold one slot's observation into the running counts.

    ``tau_index`` may be None for slots in which no overhead value was
    observed (the per-frame overhead is counted once, not per slot).
    """
    levels = np.asarray(gain_levels)
    m_idx, s_idx = np.indices(levels.shape)
    stats.gain_counts[m_idx.ravel(), s_idx.ravel(), levels.ravel()] += 1
    if tau_index is not None:
        stats.tau_counts[tau_index] += 1
    stats.arrival_sum_mbit += float(arrival_total_mbit)
    stats.arrival_slots += 1
    return stats


def make_report(stats: LocalStatistics, slot_duration_s: float = 0.1) -> BSReport:
    """Normalized marginals and mean arrival rate from the running counts.

    Count rows that are still all zero fall back to uniform marginals; the
    arrival estimate is 0 until the first slot has been observed.
    """
    counts = stats.gain_counts.astype(float)
    totals = counts.sum(axis=2, keepdims=True)
    num_levels = counts.shape[2]
    marginals = np.where(
        totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / num_levels
    )
    tau_counts = stats.tau_counts.astype(float)
    tau_total = tau_counts.sum()
    if tau_total > 0:
        tau_marginal = tau_counts / tau_total
    else:
        tau_marginal = np.full(len(tau_counts), 1.0 / len(tau_counts))
    if stats.arrival_slots > 0:
        lam = stats.arrival_sum_mbit / stats.arrival_slots / slot_duration_s
    else:
        lam = 0.0
    return BSReport(
        gain_marginals=marginals, tau_marginal=tau_marginal, lambda_hat_mbps=lam
    )


class BSScheduler:
    """Runtime state of one BS: queues, estimators and the slot decision."""

    def __init__(
        self,
        action_space: ActionSpace,
        gain_table: np.ndarray,  # (M, S, L) representative gains
        num_tau: int,
        noise_mw: float,
        params: SchedulerParams,
    ):
        self.space = action_space
        self.gain_table = gain_table
        self.noise_mw = noise_mw
        self.params = params
        num_mus = action_space.num_mus
        num_sc = action_space.num_subcarriers
        self.queues = np.zeros(num_mus)
        self.stats = LocalStatistics(
            gain_counts=np.zeros(
                (num_mus, num_sc, gain_table.shape[2]), dtype=np.int64
            ),
            tau_counts=np.zeros(num_tau, dtype=np.int64),
        )
        self.interference = InterferenceEstimate(num_mus, num_sc)
        self.budget_mw = num_sc * action_space.unit_power_mw
        self._m_idx, self._s_idx = np.indices((num_mus, num_sc))

    def realized_gains(self, gain_levels: np.ndarray) -> np.ndarray:
        return self.gain_table[self._m_idx, self._s_idx, gain_levels]

    def choose_action(self, key, gain_levels: np.ndarray, sc_mask: int) -> int:
        """Water-fill over the allowed sub-carriers, then snap to an action."""
        if sc_mask == 0:
            return 0  # the all-idle action
        gains = self.realized_gains(gain_levels)
        dists = self.interference.distributions(key)
        powers, _ = water_fill(
            self.queues,
            self.params.v,
            gains,
            sc_mask,
            dists,
            self.budget_mw,
            self.noise_mw,
            self.params,
        )
        return project_to_action(powers, self.space, sc_mask)

    def serve(self, served_se_per_mu: np.ndarray, arrivals_mbit: np.ndarray) -> None:
        for m in range(len(self.queues)):
            self.queues[m] = update_queue(
                self.queues[m],
                float(served_se_per_mu[m]),
                float(arrivals_mbit[m]),
                self.params.subcarrier_bandwidth_hz,
                self.params.slot_duration_s,
            )

    def report(self) -> BSReport:
        return make_report(self.stats, self.params.slot_duration_s)
