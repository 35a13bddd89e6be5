"""Stochastic game among base stations: states, actions and utilities.

Each BS observes a local state (the frame overhead plus its own direct-link
gain levels) and picks a discrete power vector over its users and
sub-carriers.  Utilities are downlink-rate sums; because a BS never knows the
individual cross-link gains, its utility is the exact expectation over the
finite interfering-gain levels, and a pessimistic variant replaces every
interfering gain by its largest level.  The pessimistic utility never exceeds
the expected one, which is what makes controller-side guarantees carry over.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import GainSet


@dataclass(frozen=True)
class LocalState:
    """Overhead level plus per-(user, sub-carrier) gain level of one BS."""

    tau_index: int
    gain_levels: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class GlobalState:
    """Shared overhead level plus every BS's local gain levels."""

    tau_index: int
    locals: tuple[LocalState, ...]

    def __post_init__(self):
        if any(ls.tau_index != self.tau_index for ls in self.locals):
            raise ValueError("all local states must share the global tau index")


class ActionSpace:
    """Discrete transmit-power vectors of one BS, in deterministic order.

    A power vector assigns each (user, sub-carrier) pair a multiple of the
    unit power, at most one served user per sub-carrier, and a total budget
    of ``num_subcarriers`` power units.  Enumeration order is lexicographic
    in the flattened (user-major) multiplier tuple, so identical
    configurations always index identically.
    """

    def __init__(self, num_mus: int, num_subcarriers: int, unit_power_mw: float):
        if num_mus < 1:
            raise ValueError("num_mus must be >= 1")
        if num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if not unit_power_mw > 0:
            raise ValueError("unit_power_mw must be positive")
        self.num_mus = num_mus
        self.num_subcarriers = num_subcarriers
        self.unit_power_mw = unit_power_mw

        valid = []
        for flat in itertools.product(
            range(num_subcarriers + 1), repeat=num_mus * num_subcarriers
        ):
            mult = np.array(flat, dtype=np.int64).reshape(num_mus, num_subcarriers)
            if mult.sum() > num_subcarriers:
                continue
            if ((mult > 0).sum(axis=0) > 1).any():
                continue
            valid.append(mult)
        self.multipliers = np.stack(valid)  # (n_actions, M, S)
        self.powers_mw = self.multipliers * unit_power_mw
        self.sc_power_mw = self.powers_mw.sum(axis=1)  # (n_actions, S)
        self.support_masks = np.array(
            [self._mask(a) for a in range(len(valid))], dtype=np.int64
        )
        self._by_mask: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return self.multipliers.shape[0]

    def _mask(self, action: int) -> int:
        bits = 0
        for s in range(self.num_subcarriers):
            if self.sc_power_mw[action, s] > 0:
                bits |= 1 << s
        return bits

    def supported_on(self, sc_mask: int) -> np.ndarray:
        """Indices of actions whose power lives only on sub-carriers in the mask."""
        cached = self._by_mask.get(sc_mask)
        if cached is None:
            cached = np.flatnonzero((self.support_masks & ~sc_mask) == 0)
            self._by_mask[sc_mask] = cached
        return cached


def enumerate_actions(
    num_mus: int, num_subcarriers: int, unit_power_mw: float
) -> ActionSpace:
    """Convenience constructor mirroring :class:`ActionSpace`."""
    return ActionSpace(num_mus, num_subcarriers, unit_power_mw)


class StateSpace:
    """Mixed-radix indexing of local and global states.

    Local index of BS ``b``: ``tau_index * n_gain_b + gain_index`` where the
    gain index runs user-major, sub-carrier-minor over the level indices.
    Global index: ``tau_index`` first, then the BSs' gain indices in BS
    order, the last BS varying fastest.
    """

    def __init__(self, num_tau: int, level_counts: Sequence[np.ndarray]):
        if num_tau < 1:
            raise ValueError("num_tau must be >= 1")
        self.num_tau = num_tau
        self.level_counts = [np.asarray(c, dtype=np.int64) for c in level_counts]
        self.num_bs = len(self.level_counts)
        self.n_gain = [int(c.prod()) for c in self.level_counts]
        self.n_local = [num_tau * n for n in self.n_gain]
        self.n_global = num_tau * int(np.prod(self.n_gain))

        self._gain_weights = []
        for counts in self.level_counts:
            flat = counts.ravel()
            w = np.ones_like(flat)
            w[:-1] = np.cumprod(flat[::-1])[::-1][1:]
            self._gain_weights.append(w.reshape(counts.shape))

        self._bs_weights = np.ones(self.num_bs, dtype=np.int64)
        for b in range(self.num_bs - 2, -1, -1):
            self._bs_weights[b] = self._bs_weights[b + 1] * self.n_gain[b + 1]

    def gain_index(self, b: int, levels: np.ndarray) -> int:
        return int((np.asarray(levels) * self._gain_weights[b]).sum())

    def global_index(self, tau_index: int, gain_indices: Sequence[int]) -> int:
        g = int(np.dot(np.asarray(gain_indices, dtype=np.int64), self._bs_weights))
        return tau_index * int(np.prod(self.n_gain)) + g

    def local_index(self, b: int, tau_index: int, gain_index: int) -> int:
        return tau_index * self.n_gain[b] + gain_index

    def decode_gain_index(self, b: int, gain_index: int) -> np.ndarray:
        counts = self.level_counts[b]
        flat = np.zeros(counts.size, dtype=np.int64)
        rem = gain_index
        weights = self._gain_weights[b].ravel()
        for i in range(counts.size):
            flat[i] = rem // weights[i]
            rem = rem % weights[i]
        return flat.reshape(counts.shape)

    def decode_global(self, idx: int) -> tuple[int, list[np.ndarray]]:
        total_gain = int(np.prod(self.n_gain))
        tau_index, g = divmod(idx, total_gain)
        levels = []
        for b in range(self.num_bs):
            gb = (g // self._bs_weights[b]) % self.n_gain[b]
            levels.append(self.decode_gain_index(b, gb))
        return tau_index, levels

    def local_map(self, b: int) -> np.ndarray:
        """Array mapping every global index to BS ``b``'s local index."""
        out = np.empty(self.n_global, dtype=np.int64)
        total_gain = int(np.prod(self.n_gain))
        for idx in range(self.n_global):
            tau_index, g = divmod(idx, total_gain)
            gb = (g // self._bs_weights[b]) % self.n_gain[b]
            out[idx] = tau_index * self.n_gain[b] + gb
        return out

    def to_local_state(self, b: int, local_index: int) -> LocalState:
        tau_index, gain_index = divmod(local_index, self.n_gain[b])
        levels = self.decode_gain_index(b, gain_index)
        return LocalState(
            tau_index=tau_index,
            gain_levels=tuple(tuple(int(v) for v in row) for row in levels),
        )

    def to_global_state(self, idx: int) -> GlobalState:
        tau_index, levels = self.decode_global(idx)
        locals_ = tuple(
            LocalState(
                tau_index=tau_index,
                gain_levels=tuple(tuple(int(v) for v in row) for row in lv),
            )
            for lv in levels
        )
        return GlobalState(tau_index=tau_index, locals=locals_)


def dl_rate(
    power_mw: float,
    direct_gain: float,
    interference_mw: float,
    tau: float,
    t0: int,
    noise_mw: float,
) -> float:
    """Effective downlink rate (bit/s/Hz) of one user on one sub-carrier.

    The leading factor accounts for the fraction of the frame lost to the
    fronthaul round trip.
    """
    if power_mw < 0 or direct_gain < 0 or interference_mw < 0:
        raise ValueError("power, gain and interference must be non-negative")
    if tau < 0 or tau > t0:
        raise ValueError(f"tau must lie in [0, t0], got {tau}")
    if power_mw == 0:
        return 0.0
    sinr = power_mw * direct_gain / (noise_mw + interference_mw)
    return (t0 - tau) / t0 * math.log2(1.0 + sinr)


class GameModel:
    """Geometry, channel statistics and action spaces of the BS game.

    ``direct_gain_sets[b][m][s]`` describes the serving link of user ``m`` of
    BS ``b``; ``cross_gain_sets[(tx, b)][m][s]`` the interfering link from BS
    ``tx`` to that same user.
    """

    def __init__(
        self,
        tau_levels: Sequence[float],
        t0: int,
        noise_mw: float,
        action_spaces: Sequence[ActionSpace],
        direct_gain_sets: Sequence[Sequence[Sequence[GainSet]]],
        cross_gain_sets: dict[tuple[int, int], Sequence[Sequence[GainSet]]],
    ):
        self.tau_levels = tuple(tau_levels)
        self.t0 = t0
        self.noise_mw = noise_mw
        self.action_spaces = list(action_spaces)
        self.direct_gain_sets = direct_gain_sets
        self.cross_gain_sets = cross_gain_sets
        self.num_bs = len(action_spaces)
        self.num_subcarriers = action_spaces[0].num_subcarriers

        level_counts = []
        for b, space in enumerate(self.action_spaces):
            counts = np.array(
                [
                    [direct_gain_sets[b][m][s].num_levels for s in range(space.num_subcarriers)]
                    for m in range(space.num_mus)
                ],
                dtype=np.int64,
            )
            level_counts.append(counts)
        self.state_space = StateSpace(len(self.tau_levels), level_counts)

        self.n_actions = [len(s) for s in self.action_spaces]
        self.n_joint = int(np.prod(self.n_actions))
        self._joint_weights = np.ones(self.num_bs, dtype=np.int64)
        for b in range(self.num_bs - 2, -1, -1):
            self._joint_weights[b] = self._joint_weights[b + 1] * self.n_actions[b + 1]
        self._map_cache: dict = {}

    # -- joint-action indexing -------------------------------------------------

    def joint_index(self, per_bs_actions: Sequence[int]) -> int:
        return int(np.dot(np.asarray(per_bs_actions, dtype=np.int64), self._joint_weights))

    def split_joint(self, joint: int) -> tuple[int, ...]:
        out = []
        for b in range(self.num_bs):
            out.append(int(joint // self._joint_weights[b]) % self.n_actions[b])
        return tuple(out)

    def own_action_map(self, b: int) -> np.ndarray:
        key = ("own", b)
        if key not in self._map_cache:
            joints = np.arange(self.n_joint, dtype=np.int64)
            self._map_cache[key] = (joints // self._joint_weights[b]) % self.n_actions[b]
        return self._map_cache[key]

    def opponent_profile_map(self, b: int) -> np.ndarray:
        """Joint index -> mixed-radix index over all other BSs' actions."""
        key = ("opp", b)
        if key not in self._map_cache:
            joints = np.arange(self.n_joint, dtype=np.int64)
            out = np.zeros(self.n_joint, dtype=np.int64)
            for other in range(self.num_bs):
                if other == b:
                    continue
                out = out * self.n_actions[other] + (
                    joints // self._joint_weights[other]
                ) % self.n_actions[other]
            self._map_cache[key] = out
        return self._map_cache[key]

    def joint_from_parts(self, b: int) -> np.ndarray:
        """(n_own, n_opp) table of joint indices from own and opponent parts."""
        n_opp = self.n_joint // self.n_actions[b]
        table = np.empty((self.n_actions[b], n_opp), dtype=np.int64)
        own_map = self.own_action_map(b)
        opp_map = self.opponent_profile_map(b)
        table[own_map, opp_map] = np.arange(self.n_joint, dtype=np.int64)
        return table

    # -- utilities -------------------------------------------------------------

    def _state_pieces(self, b: int, state) -> tuple[int, np.ndarray]:
        """Accept a GlobalState, a global index, or (b-local) LocalState."""
        if isinstance(state, GlobalState):
            local = state.locals[b]
            return local.tau_index, np.asarray(local.gain_levels, dtype=np.int64)
        if isinstance(state, LocalState):
            return state.tau_index, np.asarray(state.gain_levels, dtype=np.int64)
        tau_index, levels = self.state_space.decode_global(int(state))
        return tau_index, levels[b]

    def _interferers(self, b: int, joint: int) -> list[tuple[int, float]]:
        """(tx BS, per-sub-carrier powers) of every other BS, by sub-carrier."""
        parts = self.split_joint(joint)
        return [
            (tx, self.action_spaces[tx].sc_power_mw[parts[tx]])
            for tx in range(self.num_bs)
            if tx != b
        ]

    def expected_utility(self, b: int, state, joint) -> float:
        """Exact expectation of the rate sum over interfering-gain levels."""
        tau_index, levels = self._state_pieces(b, state)
        joint = int(joint)
        tau = self.tau_levels[tau_index]
        own = self.action_spaces[b].powers_mw[self.split_joint(joint)[b]]
        interferers = self._interferers(b, joint)
        total = 0.0
        for m in range(self.action_spaces[b].num_mus):
            for s in range(self.num_subcarriers):
                p = own[m, s]
                if p <= 0:
                    continue
                h = self.direct_gain_sets[b][m][s].gains[int(levels[m, s])]
                active = [
                    (pw[s], self.cross_gain_sets[(tx, b)][m][s])
                    for tx, pw in interferers
                    if pw[s] > 0
                ]
                total += self._expected_rate(p, h, active, tau)
        return total

    def _expected_rate(
        self,
        power_mw: float,
        direct_gain: float,
        active: list[tuple[float, GainSet]],
        tau: float,
    ) -> float:
        if not active:
            return dl_rate(power_mw, direct_gain, 0.0, tau, self.t0, self.noise_mw)
        total = 0.0
        choices = [range(gs.num_levels) for _, gs in active]
        for combo in itertools.product(*choices):
            prob = 1.0
            interference = 0.0
            for (pw, gs), k in zip(active, combo):
                prob *= gs.probs[k]
                interference += pw * gs.gains[k]
            total += prob * dl_rate(
                power_mw, direct_gain, interference, tau, self.t0, self.noise_mw
            )
        return total

    def worst_case_utility(self, b: int, state, joint) -> float:
        """Rate sum with every interfering gain pinned to its largest level."""
        tau_index, levels = self._state_pieces(b, state)
        joint = int(joint)
        tau = self.tau_levels[tau_index]
        own = self.action_spaces[b].powers_mw[self.split_joint(joint)[b]]
        interferers = self._interferers(b, joint)
        total = 0.0
        for m in range(self.action_spaces[b].num_mus):
            for s in range(self.num_subcarriers):
                p = own[m, s]
                if p <= 0:
                    continue
                h = self.direct_gain_sets[b][m][s].gains[int(levels[m, s])]
                interference = sum(
                    pw[s] * self.cross_gain_sets[(tx, b)][m][s].max_gain
                    for tx, pw in interferers
                    if pw[s] > 0
                )
                total += dl_rate(p, h, interference, tau, self.t0, self.noise_mw)
        return total

    def rate_cap(self, b: int) -> float:
        """Upper bound on any single per-user rate term of BS ``b``."""
        space = self.action_spaces[b]
        best = 0.0
        for m in range(space.num_mus):
            for s in range(self.num_subcarriers):
                h = self.direct_gain_sets[b][m][s].max_gain
                snr = space.num_subcarriers * space.unit_power_mw * h / self.noise_mw
                best = max(best, math.log2(1.0 + snr))
        return best

    def build_utility_tables(self) -> "UtilityTables":
        expected = []
        worst = []
        for b in range(self.num_bs):
            n_local = self.state_space.n_local[b]
            e = np.zeros((n_local, self.n_joint))
            w = np.zeros((n_local, self.n_joint))
            for l in range(n_local):
                local = self.state_space.to_local_state(b, l)
                for joint in range(self.n_joint):
                    e[l, joint] = self.expected_utility(b, local, joint)
                    w[l, joint] = self.worst_case_utility(b, local, joint)
            expected.append(e)
            worst.append(w)
        local_maps = [self.state_space.local_map(b) for b in range(self.num_bs)]
        return UtilityTables(self, expected, worst, local_maps)


@dataclass
class UtilityTables:
    """Precomputed per-BS utilities indexed by (local state, joint action)."""

    model: GameModel
    expected: list[np.ndarray]
    worst_case: list[np.ndarray]
    local_maps: list[np.ndarray]

    def __post_init__(self):
        for b in range(self.model.num_bs):
            if (self.worst_case[b] > self.expected[b] + 1e-12).any():
                raise ValueError("worst-case utility exceeds expected utility")
        self._cache: dict = {}

    def global_matrix(self, b: int, kind: str = "expected") -> np.ndarray:
        """(n_global, n_joint) utility matrix of BS ``b``."""
        key = ("global", b, kind)
        if key not in self._cache:
            table = self.expected[b] if kind == "expected" else self.worst_case[b]
            self._cache[key] = table[self.local_maps[b]]
        return self._cache[key]

    def deviation_tensor(self, b: int, kind: str = "worst_case") -> np.ndarray:
        """(n_local, n_own, n_opp) utilities under a unilateral own-action swap."""
        key = ("deviation", b, kind)
        if key not in self._cache:
            table = self.worst_case[b] if kind == "worst_case" else self.expected[b]
            joint_from = self.model.joint_from_parts(b)
            self._cache[key] = table[:, joint_from]
        return self._cache[key]


def average_utility(
    strategy_probs: np.ndarray,
    state_dist: np.ndarray,
    utility_matrix: np.ndarray,
) -> float:
    """State- and strategy-averaged utility.

    ``strategy_probs`` rows must be distributions over joint actions and
    ``utility_matrix`` must be aligned with the global state indexing.
    """
    strategy_probs = np.asarray(strategy_probs, dtype=float)
    state_dist = np.asarray(state_dist, dtype=float)
    if strategy_probs.shape != utility_matrix.shape:
        raise ValueError("strategy and utility shapes differ")
    if strategy_probs.shape[0] != state_dist.shape[0]:
        raise ValueError("state distribution length mismatch")
    return float(np.einsum("w,wp,wp->", state_dist, strategy_probs, utility_matrix))


def deviation_utility(
    tables: UtilityTables,
    b: int,
    local_index: int,
    own_action: int,
    strategy_probs: np.ndarray,
    state_dist: np.ndarray,
    kind: str = "worst_case",
) -> float:
    """Utility of committing to ``own_action`` whenever the local state matches.

    The opponents keep following the joint strategy; the sum runs over all
    global states projecting onto ``local_index``.
    """
    model = tables.model
    mask = tables.local_maps[b] == local_index
    if not mask.any():
        raise ValueError("local state index out of range")
    dev = tables.deviation_tensor(b, kind)[local_index, own_action]  # (n_opp,)
    opp_map = model.opponent_profile_map(b)
    weighted = state_dist[mask, None] * strategy_probs[mask]
    n_opp = model.n_joint // model.n_actions[b]
    opp_mass = np.zeros(n_opp)
    np.add.at(opp_mass, opp_map, weighted.sum(axis=0))
    return float(opp_mass @ dev)
