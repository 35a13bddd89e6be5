"""Frame-timescale controller: report aggregation, strategy refresh and
per-slot recommendation sampling.

Once per frame the controller fuses the BSs' uploaded statistics into a
product-form state distribution, refreshes its recommendation strategy when
the estimates have drifted (or a refresh is due), samples one state-to-action
rule per slot of the upcoming frame, and serves per-BS recommendations from
those rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .equilibrium import (
    StrategyProblem,
    StrategySolution,
    StrategyTable,
    build_strategy_problem,
    solve_strategy_problem,
)
from .game import UtilityTables


@dataclass
class BSReport:
    """Per-frame upload of one BS: state marginals and mean arrival."""

    gain_marginals: np.ndarray  # (M, S, L)
    tau_marginal: np.ndarray  # (num_tau,)
    lambda_hat_mbps: float

    def __post_init__(self):
        self.gain_marginals = np.asarray(self.gain_marginals, dtype=float)
        self.tau_marginal = np.asarray(self.tau_marginal, dtype=float)
        sums = self.gain_marginals.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("gain marginals must sum to one")
        if abs(self.tau_marginal.sum() - 1.0) > 1e-9:
            raise ValueError("tau marginal must sum to one")
        if self.lambda_hat_mbps < 0:
            raise ValueError("lambda_hat_mbps must be non-negative")


@dataclass(frozen=True)
class MappingRuleSet:
    """One sampled state-to-joint-action rule per slot of a frame."""

    actions: np.ndarray  # (t0, n_global) joint-action indices

    def rule(self, slot_in_frame: int) -> np.ndarray:
        return self.actions[slot_in_frame]


@dataclass(frozen=True)
class Recommendation:
    """Per-BS projection of the sampled joint action for one slot."""

    action_index: Optional[int]
    sc_mask: int

    @property
    def is_empty(self) -> bool:
        return self.action_index is None or self.sc_mask == 0


class MissingReportError(ValueError):
    """A BS failed to upload; the frame carries no recommendation."""


def aggregate_reports(
    reports: Sequence[Optional[BSReport]],
    min_lambda_mbps: float = 1e-9,
) -> tuple[np.ndarray, list, np.ndarray]:
    """Fuse per-BS uploads into (tau marginal, gain marginals, demands).

    The shared overhead marginal is averaged across BSs; demands are floored
    at a tiny positive value so the strategy program stays well posed before
    any traffic has been observed.
    """
    if any(r is None for r in reports):
        raise MissingReportError("missing BS report")
    tau = np.mean([r.tau_marginal for r in reports], axis=0)
    gain_marginals = [r.gain_marginals for r in reports]
    lam = np.array([max(r.lambda_hat_mbps, min_lambda_mbps) for r in reports])
    return tau, gain_marginals, lam


def sample_mapping_rules(
    strategy: StrategyTable, t0: int, rng: np.random.Generator
) -> MappingRuleSet:
    """Draw one joint action per (slot, global state), i.i.d. per row."""
    probs = strategy.probs
    n_states = probs.shape[0]
    cum = np.cumsum(probs, axis=1)
    u = rng.random((t0, n_states))
    actions = np.empty((t0, n_states), dtype=np.int64)
    for w in range(n_states):
        actions[:, w] = np.searchsorted(cum[w], u[:, w], side="right")
    np.clip(actions, 0, probs.shape[1] - 1, out=actions)
    return MappingRuleSet(actions=actions)


def recommend(
    rules: Optional[MappingRuleSet],
    slot_in_frame: int,
    global_state_index: int,
    bs: int,
    tables: UtilityTables,
) -> Recommendation:
    """Project the slot's sampled joint action onto one BS.

    A frame without rules (no recommendation received) yields the explicit
    empty recommendation.
    """
    if rules is None:
        return Recommendation(action_index=None, sc_mask=0)
    model = tables.model
    joint = int(rules.actions[slot_in_frame, global_state_index])
    own = model.split_joint(joint)[bs]
    mask = int(model.action_spaces[bs].support_masks[own])
    return Recommendation(action_index=own, sc_mask=mask)


class Controller:
    """Holds the strategy between frames and decides when to re-solve.

    A full continuation solve runs on the first frame; afterwards the solve
    is warm-started and triggered only when ``resolve_every`` frames have
    elapsed or the estimated state distribution moved more than
    ``tv_threshold`` in total variation.
    """

    def __init__(
        self,
        tables: UtilityTables,
        resolve_every: int = 10,
        tv_threshold: float = 1e-3,
        tol: float = 1e-4,
        max_iter_per_stage: int = 350,
        warm_stages: int = 2,
        warm_max_iter: int = 80,
        lambda_scale: float = 1.0,
    ):
        self.tables = tables
        self.resolve_every = resolve_every
        self.tv_threshold = tv_threshold
        self.tol = tol
        self.max_iter_per_stage = max_iter_per_stage
        self.warm_stages = warm_stages
        self.warm_max_iter = warm_max_iter
        self.lambda_scale = lambda_scale
        self.solution: Optional[StrategySolution] = None
        self.problem: Optional[StrategyProblem] = None
        self._frames_since_solve = 0
        self._solved_dist: Optional[np.ndarray] = None
        self._core = None
        self.num_solves = 0

    def _needs_resolve(self, state_dist: np.ndarray) -> bool:
        if self.solution is None:
            return True
        if self._frames_since_solve >= self.resolve_every:
            return True
        drift = 0.5 * float(np.abs(state_dist - self._solved_dist).sum())
        return drift > self.tv_threshold

    def new_frame(
        self, reports: Sequence[Optional[BSReport]], t0: int, rng: np.random.Generator
    ) -> MappingRuleSet:
        """Aggregate, possibly re-solve, and sample the frame's rules."""
        tau, gains, lam_mbps = aggregate_reports(reports)
        problem = build_strategy_problem(
            self.tables, tau, gains, lam_mbps * self.lambda_scale
        )
        if self._needs_resolve(problem.state_dist):
            if self._core is None:
                from .equilibrium import _SolverCore

                self._core = _SolverCore(problem)
            if self.solution is None:
                self.solution = solve_strategy_problem(
                    problem,
                    tol=self.tol,
                    max_iter_per_stage=self.max_iter_per_stage,
                    core=self._core,
                )
            else:
                self.solution = solve_strategy_problem(
                    problem,
                    tol=self.tol,
                    init_logits=self.solution.logits,
                    num_stages=self.warm_stages,
                    max_iter_per_stage=self.warm_max_iter,
                    core=self._core,
                )
            self.num_solves += 1
            self._frames_since_solve = 0
            self._solved_dist = problem.state_dist.copy()
        else:
            self._frames_since_solve += 1
        self.problem = problem
        return sample_mapping_rules(self.solution.strategy, t0, rng)
