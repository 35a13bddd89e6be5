"""Controller-side strategy optimization and equilibrium verification.

The controller picks a conditional distribution over joint actions for every
global state, maximizing a traffic-weighted log utility subject to (i) each
BS's average pessimistic utility covering its demand and (ii) coarse
correlated equilibrium (CCE) constraints: no BS may gain by committing to a
fixed own action whenever it observes a given local state.

The program is concave.  The best-deviation variables are eliminated in
closed form, each strategy row is parameterized by a softmax, and the two
constraint families are handled with a logarithmic barrier whose weight
shrinks geometrically.  The inner maximum over deviations is smoothed by a
log-sum-exp with an increasing temperature; since log-sum-exp upper-bounds
the true maximum, any point accepted by the barrier satisfies the exact CCE
constraints up to the (tiny) terminal slack offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .game import UtilityTables, average_utility


@dataclass
class StrategyTable:
    """Conditional distribution over joint actions, one row per global state.

    Rows must sum to one within 1e-9; entries may undershoot zero by at most
    1e-12 and are clamped and renormalized on construction.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("strategy must be a (states, actions) matrix")
        if (probs < -1e-12).any():
            raise ValueError("strategy entries below -1e-12")
        sums = probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("strategy rows must sum to one")
        probs = np.clip(probs, 0.0, None)
        self.probs = probs / probs.sum(axis=1, keepdims=True)


@dataclass
class StrategyProblem:
    """Data of the controller's convex program for one frame.

    ``state_dist`` is the product-form global state distribution assembled
    from the reported marginals; ``lambda_hat`` the per-BS demand expressed
    in the same rate units as the utilities.
    """

    tables: UtilityTables
    state_dist: np.ndarray
    lambda_hat: np.ndarray

    def __post_init__(self):
        model = self.tables.model
        self.state_dist = np.asarray(self.state_dist, dtype=float)
        self.lambda_hat = np.asarray(self.lambda_hat, dtype=float)
        if self.state_dist.shape != (model.state_space.n_global,):
            raise ValueError("state distribution has the wrong length")
        if abs(self.state_dist.sum() - 1.0) > 1e-9:
            raise ValueError("state distribution must sum to one")
        if (self.lambda_hat <= 0).any():
            raise ValueError("lambda_hat must be positive")
        if self.lambda_hat.shape != (model.num_bs,):
            raise ValueError("need one demand per BS")

    @property
    def num_bs(self) -> int:
        return self.tables.model.num_bs

    def local_dists(self) -> list[np.ndarray]:
        model = self.tables.model
        out = []
        for b in range(model.num_bs):
            loc = self.tables.local_maps[b]
            dist = np.zeros(model.state_space.n_local[b])
            np.add.at(dist, loc, self.state_dist)
            out.append(dist)
        return out


def product_state_distribution(
    tables: UtilityTables,
    tau_marginal: Sequence[float],
    gain_marginals: Sequence,
) -> np.ndarray:
    """Product-form state distribution from per-link level marginals.

    ``gain_marginals[b][m][s]`` is the level distribution of the serving
    link of user ``m`` of BS ``b``.  Every marginal must sum to one within
    1e-9, otherwise the report is rejected.
    """
    model = tables.model
    factors = [np.asarray(tau_marginal, dtype=float)]
    for b in range(model.num_bs):
        space = model.action_spaces[b]
        for m in range(space.num_mus):
            for s in range(model.num_subcarriers):
                factors.append(np.asarray(gain_marginals[b][m][s], dtype=float))
    dist = np.array([1.0])
    for f in factors:
        if abs(f.sum() - 1.0) > 1e-9 or (f < 0).any():
            raise ValueError(f"marginal {f} is not a distribution")
        dist = np.kron(dist, f)
    if dist.shape != (model.state_space.n_global,):
        raise ValueError("marginal shapes do not match the state space")
    return dist


def build_strategy_problem(
    tables: UtilityTables,
    tau_marginal: Sequence[float],
    gain_marginals: Sequence,
    lambda_hat: Sequence[float],
) -> StrategyProblem:
    """Assemble the per-frame program from aggregated BS reports."""
    dist = product_state_distribution(tables, tau_marginal, gain_marginals)
    return StrategyProblem(
        tables=tables, state_dist=dist, lambda_hat=np.asarray(lambda_hat, dtype=float)
    )


@dataclass
class StrategySolution:
    strategy: StrategyTable
    theta: list[np.ndarray]
    objective: float
    feasible: bool
    qos_slack: np.ndarray
    cce_slack: np.ndarray
    stationarity: float
    stage_objectives: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def logits(self) -> np.ndarray:
        """Warm-start representation of the strategy."""
        return np.log(self.strategy.probs + 1e-300)


@dataclass(frozen=True)
class EquilibriumReport:
    """Exhaustive deviation check of a strategy against one utility kind."""

    max_constraint_violation: float
    epsilon: float
    per_bs_gaps: tuple[float, ...]


class _SolverCore:
    """Tensors and forward/gradient passes shared by all solver phases.

    The static game tensors survive across frames; ``rebind`` refreshes only
    the pieces that depend on the estimated state distribution and demands.
    """

    def __init__(self, problem: StrategyProblem):
        tables = problem.tables
        model = tables.model
        self.model = model
        self.tables = tables
        self.num_bs = model.num_bs
        self.n_states = model.state_space.n_global
        self.n_joint = model.n_joint
        self.vg = [tables.global_matrix(b, "worst_case") for b in range(self.num_bs)]
        self.dev = [tables.deviation_tensor(b, "worst_case") for b in range(self.num_bs)]
        self.loc = tables.local_maps
        self.opp_map = [model.opponent_profile_map(b) for b in range(self.num_bs)]
        self.n_own = model.n_actions
        self.n_opp = [self.n_joint // n for n in self.n_own]
        self.scale = max(float(v.max()) for v in self.vg) or 1.0

        self.perm = []
        self.group_starts = []
        for b in range(self.num_bs):
            perm = np.argsort(self.loc[b], kind="stable")
            group = self.n_states // model.state_space.n_local[b]
            self.perm.append(perm)
            self.group_starts.append(np.arange(0, self.n_states, group))
        self.rebind(problem)

    def rebind(self, problem: StrategyProblem) -> None:
        if problem.tables is not self.tables:
            raise ValueError("solver core belongs to different utility tables")
        self.p = problem.state_dist
        self.lam = problem.lambda_hat
        self.av = [self.p[:, None] * self.vg[b] for b in range(self.num_bs)]

    def softmax(self, z: np.ndarray) -> np.ndarray:
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def deviation_values(self, x: np.ndarray) -> list[np.ndarray]:
        """Per BS: (n_local, n_own) matrix of unnormalized deviation values."""
        out = []
        xp = self.p[:, None] * x
        for b in range(self.num_bs):
            shaped = xp.reshape(self.n_states, *self.n_own)
            opp = shaped.sum(axis=1 + b).reshape(self.n_states, self.n_opp[b])
            grouped = np.add.reduceat(opp[self.perm[b]], self.group_starts[b], axis=0)
            out.append(np.einsum("lo,ljo->lj", grouped, self.dev[b]))
        return out

    def vhat(self, x: np.ndarray) -> np.ndarray:
        return np.array([(a * x).sum() for a in self.av])

    def smoothed_commit_value(self, t: np.ndarray, beta: float) -> float:
        m = t.max(axis=1)
        return float((m + np.log(np.exp(beta * (t - m[:, None])).sum(axis=1)) / beta).sum())

    def exact_commit_value(self, t: np.ndarray) -> float:
        return float(t.max(axis=1).sum())

    def true_objective(self, vhat: np.ndarray) -> float:
        return float((self.lam * np.log1p(vhat)).sum())


class _BarrierPhase:
    """One barrier optimization phase (main objective or QoS repair)."""

    def __init__(self, core: _SolverCore, qos_mode: str):
        self.core = core
        self.qos_mode = qos_mode  # "barrier" or "penalty"

    def _pieces(self, x, beta):
        core = self.core
        vhat = core.vhat(x)
        t = core.deviation_values(x)
        commit = np.array(
            [core.smoothed_commit_value(t[b], beta) for b in range(core.num_bs)]
        )
        return vhat, t, commit

    def _commit_grad_expand(self, t, beta):
        """Per BS: gradient of the smoothed commitment value w.r.t. X."""
        core = self.core
        out = []
        for b in range(core.num_bs):
            tb = t[b]
            w = np.exp(beta * (tb - tb.max(axis=1, keepdims=True)))
            w /= w.sum(axis=1, keepdims=True)
            m = np.einsum("lj,ljo->lo", w, core.dev[b])
            out.append(core.p[:, None] * m[core.loc[b]][:, core.opp_map[b]])
        return out

    def value(self, x, mu, beta, q_off, r_off):
        core = self.core
        vhat, t, commit = self._pieces(x, beta)
        cce_args = vhat - commit + r_off
        if (cce_args <= 0).any():
            return -np.inf, None
        if self.qos_mode == "barrier":
            qos_args = vhat - core.lam + q_off
            if (qos_args <= 0).any():
                return -np.inf, None
            f = core.true_objective(vhat)
            f += mu * float(np.log(qos_args).sum() + np.log(cce_args).sum())
        else:
            viol = np.clip(core.lam - vhat, 0.0, None)
            f = -float((viol**2).sum())
            f += mu * float(np.log(cce_args).sum())
        return f, (vhat, t, commit, cce_args)

    def gradient(self, x, aux, mu, beta, q_off, r_off):
        core = self.core
        vhat, t, commit, cce_args = aux
        if self.qos_mode == "barrier":
            qos_args = vhat - core.lam + q_off
            coef = core.lam / (1.0 + vhat) + mu / qos_args + mu / cce_args
        else:
            viol = np.clip(core.lam - vhat, 0.0, None)
            coef = 2.0 * viol + mu / cce_args
        gx = np.zeros((core.n_states, core.n_joint))
        commit_grads = self._commit_grad_expand(t, beta)
        for b in range(core.num_bs):
            gx += coef[b] * core.av[b]
            gx -= (mu / cce_args[b]) * commit_grads[b]
        return gx

    def restore(self, z, beta, r_off, q_off, max_iter):
        """Drive the point strictly inside the stage's barrier domain.

        Maximizes a concave squared-hinge feasibility measure targeting a
        slack margin of half the offsets; returns the new point plus the
        residual CCE/QoS deficits (non-positive when restoration succeeded).
        """
        core = self.core
        r_target = 0.5 * r_off
        q_target = 0.5 * q_off
        want_qos = self.qos_mode == "barrier"

        def residuals(vhat, commit):
            cce = commit - vhat - r_target
            qos = core.lam - vhat - q_target if want_qos else np.full_like(vhat, -1.0)
            return cce, qos

        def value(x):
            vhat, t, commit = self._pieces(x, beta)
            cce, qos = residuals(vhat, commit)
            val = -float((np.clip(cce, 0, None) ** 2).sum())
            val -= float((np.clip(qos, 0, None) ** 2).sum())
            return val, t, cce, qos

        def grad(t, cce, qos):
            gx = np.zeros((core.n_states, core.n_joint))
            commit_grads = self._commit_grad_expand(t, beta)
            for b in range(core.num_bs):
                coef = 2.0 * max(cce[b], 0.0)
                if coef > 0:
                    gx += coef * (core.av[b] - commit_grads[b])
                if want_qos and qos[b] > 0:
                    gx += 2.0 * qos[b] * core.av[b]
            return gx

        x = core.softmax(z)
        f, t, cce, qos = value(x)
        if f == 0.0:
            return z, cce, qos, 0
        step = 1.0
        iters = 0
        window_f = f
        for _ in range(max_iter):
            if iters % 5 == 0:
                # give up when five iterations shaved less than 0.1% of the
                # remaining deficit (the margin may simply be unreachable)
                if iters > 0 and (f - window_f) < 1e-3 * (-f):
                    break
                window_f = f
            gx = grad(t, cce, qos)
            row_gap = float((gx.max(axis=1) - (x * gx).sum(axis=1)).sum())
            gz = x * (gx - (x * gx).sum(axis=1, keepdims=True))
            descent = float((gz * gz).sum())
            iters += 1
            f_before = f
            accepted = False
            while descent > 0 and step > 1e-16:
                z_new = z + step * gz
                z_new -= z_new.max(axis=1, keepdims=True)
                x_new = core.softmax(z_new)
                f_new, t_new, cce_new, qos_new = value(x_new)
                if f_new >= f + 1e-4 * step * descent:
                    z, x, f, t, cce, qos = z_new, x_new, f_new, t_new, cce_new, qos_new
                    step = min(step * 2.0, 1e6)
                    accepted = True
                    break
                step *= 0.5
            # A vertex-directed step picks up the slack when softmax gradients
            # vanish and the plain step crawls (or is rejected outright).
            crawling = accepted and (f - f_before) < 1e-3 * (-f)
            if (not accepted or crawling) and row_gap > 0:
                direction = -x.copy()
                direction[np.arange(x.shape[0]), gx.argmax(axis=1)] += 1.0
                alpha = 0.5
                while alpha > 1e-16:
                    x_new = x + alpha * direction
                    f_new, t_new, cce_new, qos_new = value(x_new)
                    if f_new >= f + 1e-4 * alpha * row_gap:
                        x, f, t, cce, qos = x_new, f_new, t_new, cce_new, qos_new
                        z = np.log(x + 1e-300)
                        z -= z.max(axis=1, keepdims=True)
                        step = 1.0
                        accepted = True
                        break
                    alpha *= 0.5
            if not accepted or f == 0.0:
                break
        return z, cce, qos, iters

    def stage(self, z, mu, beta, r_plan, q_plan, gtol, max_iter, do_restore=True):
        """Restoration (optional) followed by barrier ascent.

        Offsets are bumped beyond their planned values only when the point
        does not sit inside the planned domain after restoration (or, for
        warm starts, where it currently sits); the bump adds one plan-sized
        margin on top of the deficit.  The ascent itself keeps pushing the
        point back toward feasibility because the objective rewards raising
        the average utilities that the constraints compare against.
        """
        restore_iters = 0
        if do_restore:
            z, cce_res, qos_res, restore_iters = self.restore(
                z, beta, r_plan, q_plan, max_iter
            )
            worst_cce = float(np.max(cce_res))
            worst_qos = float(np.max(qos_res))
        else:
            vhat, t, commit = self._pieces(self.core.softmax(z), beta)
            worst_cce = float(np.max(commit - vhat - 0.5 * r_plan))
            if self.qos_mode == "barrier":
                worst_qos = float(np.max(self.core.lam - vhat - 0.5 * q_plan))
            else:
                worst_qos = -1.0
        # residual = constraint value minus half the offset; the achieved
        # barrier argument is 0.5*plan - residual.
        r_off = r_plan
        if 0.5 * r_plan - worst_cce < 0.25 * r_plan:
            r_off = worst_cce + 0.5 * r_plan + r_plan
        q_off = q_plan
        if 0.5 * q_plan - worst_qos < 0.25 * q_plan:
            q_off = worst_qos + 0.5 * q_plan + q_plan
        z, gnorm, iters = self.ascend(z, mu, beta, q_off, r_off, gtol, max_iter)
        return z, gnorm, iters + restore_iters

    def ascend(self, z, mu, beta, q_off, r_off, gtol, max_iter):
        """Maximize the stage objective over the product of row simplices.

        Convergence is certified by the Frank-Wolfe gap, which for a concave
        objective upper-bounds the remaining improvement.  Softmax gradient
        steps do the bulk of the work; when they stall (their gradients
        vanish near vertices), a Frank-Wolfe step toward the best row
        vertices takes over.
        """
        core = self.core
        x = core.softmax(z)
        f, aux = self.value(x, mu, beta, q_off, r_off)
        if not np.isfinite(f):
            raise RuntimeError("barrier started outside its domain")
        step = 1.0
        gap = math.inf
        iters = 0
        for _ in range(max_iter):
            gx = self.gradient(x, aux, mu, beta, q_off, r_off)
            row_best = gx.max(axis=1)
            gap = float((row_best - (x * gx).sum(axis=1)).sum())
            if gap <= gtol:
                break
            iters += 1

            gz = x * (gx - (x * gx).sum(axis=1, keepdims=True))
            descent = float((gz * gz).sum())
            accepted = False
            while descent > 0 and step > 1e-16:
                z_new = z + step * gz
                z_new -= z_new.max(axis=1, keepdims=True)
                x_new = core.softmax(z_new)
                f_new, aux_new = self.value(x_new, mu, beta, q_off, r_off)
                if f_new >= f + 1e-4 * step * descent:
                    z, x, f, aux = z_new, x_new, f_new, aux_new
                    step = min(step * 2.0, 1e6)
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                continue

            # Frank-Wolfe fallback: move toward the row-wise best vertices.
            direction = -x.copy()
            direction[np.arange(x.shape[0]), gx.argmax(axis=1)] += 1.0
            alpha = 0.5
            fw_accepted = False
            while alpha > 1e-16:
                x_new = x + alpha * direction
                f_new, aux_new = self.value(x_new, mu, beta, q_off, r_off)
                if f_new >= f + 1e-4 * alpha * gap:
                    x, f, aux = x_new, f_new, aux_new
                    z = np.log(x + 1e-300)
                    z -= z.max(axis=1, keepdims=True)
                    step = 1.0
                    fw_accepted = True
                    break
                alpha *= 0.5
            if not fw_accepted:
                break
        return z, gap, iters


def solve_strategy_problem(
    problem: StrategyProblem,
    tol: float = 1e-6,
    init_logits: Optional[np.ndarray] = None,
    max_iter_per_stage: int = 350,
    num_stages: int = 10,
    core: Optional[_SolverCore] = None,
) -> StrategySolution:
    """Barrier solve of the controller program.

    The returned strategy always satisfies the CCE constraints up to the
    terminal slack (min(tol/10, 1e-7)); if the demand constraints cannot be
    met, ``feasible`` is False and the strategy minimizes the squared demand
    violation instead, with the per-BS slack reported.  ``core`` may carry a
    solver core cached across solves of the same utility tables.
    """
    if core is None:
        core = _SolverCore(problem)
    else:
        core.rebind(problem)
    full_stages = 10
    mus = 0.2 ** np.arange(full_stages)
    betas = np.geomspace(10.0, 1e4, full_stages)
    slack_final = min(tol * 0.1, 1e-7)
    slack0 = max(1e-3 * core.scale, 10 * slack_final)
    offsets = np.geomspace(slack0, slack_final, full_stages)

    if init_logits is not None:
        # Warm start: continue from the schedule tail instead of re-running
        # the whole continuation path.
        num_stages = min(num_stages, full_stages)
        mus = mus[-num_stages:]
        betas = betas[-num_stages:]
        offsets = offsets[-num_stages:]
        z = np.asarray(init_logits, dtype=float).copy()
        z -= z.max(axis=1, keepdims=True)
    else:
        z = np.zeros((core.n_states, core.n_joint))

    phase = _BarrierPhase(core, "barrier")
    stage_objectives = []
    total_iters = 0
    gnorm = math.inf
    warm = init_logits is not None
    for s in range(len(mus)):
        mu, beta = float(mus[s]), float(betas[s])
        # Frank-Wolfe gap tolerance in objective units, tightening with mu.
        gtol = max(tol, mu)
        z, gnorm, iters = phase.stage(
            z,
            mu,
            beta,
            float(offsets[s]),
            float(offsets[s]),
            gtol,
            max_iter_per_stage,
            do_restore=not warm,
        )
        total_iters += iters
        stage_objectives.append(core.true_objective(core.vhat(core.softmax(z))))

    z, polish_iters = _exact_polish(
        phase, z, slack_final, core.lam, max_iter_per_stage, want_qos=True
    )
    total_iters += polish_iters
    x = core.softmax(z)
    solution = _finalize(problem, core, x, gnorm, stage_objectives, total_iters, tol)
    if solution.feasible:
        return solution

    # Demand cannot be met: a repair phase minimizes the squared demand
    # violation while keeping the equilibrium constraints active.
    repair = _BarrierPhase(core, "penalty")
    z = np.zeros((core.n_states, core.n_joint))
    for s in range(len(mus)):
        mu, beta = float(mus[s]), float(betas[s])
        z, gnorm, iters = repair.stage(
            z, mu, beta, float(offsets[s]), 0.0, max(tol, mu), max_iter_per_stage
        )
        total_iters += iters
    z, polish_iters = _exact_polish(
        repair, z, slack_final, core.lam, max_iter_per_stage, want_qos=False
    )
    total_iters += polish_iters
    x = core.softmax(z)
    return _finalize(problem, core, x, gnorm, stage_objectives, total_iters, tol)


def _exact_polish(phase, z, slack_final, lam, max_iter, want_qos):
    """Repair any residual exact-constraint violation the smoothed stages left.

    At a very high temperature the smoothed commitment value agrees with the
    exact maximum to well below the terminal slack, so a short restoration
    pass pins the equilibrium constraints down exactly.  Runs only when the
    exact violation exceeds the terminal slack.
    """
    core = phase.core
    beta_exact = 1e8
    x = core.softmax(z)
    vhat, t, commit = phase._pieces(x, beta_exact)
    worst = float(np.max(commit - vhat))
    if want_qos:
        worst = max(worst, float(np.max(lam - vhat)))
    if worst <= slack_final:
        return z, 0
    z, _, _, iters = phase.restore(
        z, beta_exact, 2 * slack_final, 2 * slack_final, max_iter
    )
    return z, iters


def _finalize(problem, core, x, gnorm, stage_objectives, iterations, tol):
    vhat = core.vhat(x)
    t = core.deviation_values(x)
    commit = np.array([core.exact_commit_value(t[b]) for b in range(core.num_bs)])
    qos_slack = vhat - core.lam
    cce_slack = vhat - commit
    local_dists = problem.local_dists()
    theta = []
    for b in range(core.num_bs):
        best = t[b].max(axis=1)
        dist = local_dists[b]
        with np.errstate(divide="ignore", invalid="ignore"):
            th = np.where(dist > 0, best / np.where(dist > 0, dist, 1.0), 0.0)
        theta.append(th)
    feasible = bool((qos_slack >= -tol).all())
    return StrategySolution(
        strategy=StrategyTable(probs=x),
        theta=theta,
        objective=core.true_objective(vhat),
        feasible=feasible,
        qos_slack=qos_slack,
        cce_slack=cce_slack,
        stationarity=float(gnorm),
        stage_objectives=stage_objectives,
        iterations=iterations,
    )


def verify_coarse_equilibrium(
    strategy: StrategyTable,
    problem: StrategyProblem,
    utility: str = "worst_case",
) -> EquilibriumReport:
    """Exhaustive deviation check of ``strategy`` against one utility kind.

    For every BS and local state the best committed deviation is enumerated;
    the report carries the largest average gain any BS could realize
    (clamped at zero for ``epsilon``).
    """
    core = _SolverCore(problem)
    tables = problem.tables
    x = strategy.probs
    gaps = []
    for b in range(core.num_bs):
        dev = tables.deviation_tensor(b, utility)
        xp = core.p[:, None] * x
        shaped = xp.reshape(core.n_states, *core.n_own)
        opp = shaped.sum(axis=1 + b).reshape(core.n_states, core.n_opp[b])
        grouped = np.add.reduceat(opp[core.perm[b]], core.group_starts[b], axis=0)
        t = np.einsum("lo,ljo->lj", grouped, dev)
        ubar = average_utility(x, core.p, tables.global_matrix(b, utility))
        gaps.append(float(t.max(axis=1).sum() - ubar))
    worst = max(gaps)
    return EquilibriumReport(
        max_constraint_violation=worst,
        epsilon=max(0.0, worst),
        per_bs_gaps=tuple(gaps),
    )


def equilibrium_gap_bound(
    strategy: StrategyTable,
    problem: StrategyProblem,
    check_tol: float = 1e-6,
) -> float:
    """A-priori bound on the expected-utility deviation gain of a strategy
    that is an exact equilibrium for the pessimistic utility.

    Verifies the pessimistic equilibrium first and rejects strategies whose
    violation exceeds ``check_tol``.
    """
    report = verify_coarse_equilibrium(strategy, problem, "worst_case")
    if report.epsilon > check_tol:
        raise ValueError(
            f"strategy violates the pessimistic equilibrium by {report.epsilon}"
        )
    core = _SolverCore(problem)
    tables = problem.tables
    x = strategy.probs
    bound = 0.0
    for b in range(core.num_bs):
        xp = core.p[:, None] * x
        shaped = xp.reshape(core.n_states, *core.n_own)
        opp = shaped.sum(axis=1 + b).reshape(core.n_states, core.n_opp[b])
        grouped = np.add.reduceat(opp[core.perm[b]], core.group_starts[b], axis=0)
        t_u = np.einsum("lo,ljo->lj", grouped, tables.deviation_tensor(b, "expected"))
        t_v = np.einsum("lo,ljo->lj", grouped, tables.deviation_tensor(b, "worst_case"))
        gap = np.clip(t_u.max(axis=1) - t_v.max(axis=1), 0.0, None).sum()
        bound = max(bound, float(gap))
    return bound


def dump_debug(problem: StrategyProblem, solution: StrategySolution, path) -> None:
    """Full-precision structured text dump for offline inspection."""
    model = problem.tables.model
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# strategy problem dump\n")
        fh.write(f"num_states {model.state_space.n_global}\n")
        fh.write(f"num_joint_actions {model.n_joint}\n")
        fh.write("lambda_hat " + " ".join(repr(v) for v in problem.lambda_hat) + "\n")
        fh.write("state_dist\n")
        for i, p in enumerate(problem.state_dist):
            fh.write(f"{i} {p!r}\n")
        fh.write(f"objective {solution.objective!r}\n")
        fh.write(f"feasible {solution.feasible}\n")
        fh.write("qos_slack " + " ".join(repr(v) for v in solution.qos_slack) + "\n")
        fh.write("strategy\n")
        for w in range(model.state_space.n_global):
            row = " ".join(repr(v) for v in solution.strategy.probs[w])
            fh.write(f"{w} {row}\n")
