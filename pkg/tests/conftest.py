"""Shared builders and independent oracles used across the test suite."""

import itertools
import math

import numpy as np
import pytest

from fhsdn.channel import GainSet, quantize_exponential
from fhsdn.equilibrium import build_strategy_problem
from fhsdn.game import ActionSpace, GameModel


def uniform_gain_set(mean, num_levels=2):
    if num_levels == 1:
        return GainSet(gains=(mean,), probs=(1.0,), thresholds=())
    return quantize_exponential(mean, num_levels)


def build_model(
    num_bs=2,
    num_mus=1,
    num_sc=1,
    tau_levels=(0.25,),
    t0=10,
    noise=1.0,
    unit_power=1.0,
    direct_means=None,
    cross_means=None,
    num_levels=2,
    cross_levels=2,
):
    """Small symmetric game model with exponential-quantized gain sets."""
    if direct_means is None:
        direct_means = [[5.0 * (m + 1) for m in range(num_mus)] for _ in range(num_bs)]
    if cross_means is None:
        cross_means = 0.5
    spaces = [ActionSpace(num_mus, num_sc, unit_power) for _ in range(num_bs)]
    direct = [
        [
            [uniform_gain_set(direct_means[b][m], num_levels) for _ in range(num_sc)]
            for m in range(num_mus)
        ]
        for b in range(num_bs)
    ]
    cross = {}
    for tx in range(num_bs):
        for rx in range(num_bs):
            if tx == rx:
                continue
            cross[(tx, rx)] = [
                [uniform_gain_set(cross_means, cross_levels) for _ in range(num_sc)]
                for _ in range(num_mus)
            ]
    return GameModel(
        tau_levels=tau_levels,
        t0=t0,
        noise_mw=noise,
        action_spaces=spaces,
        direct_gain_sets=direct,
        cross_gain_sets=cross,
    )


def random_strategy(rng, n_states, n_joint):
    x = rng.random((n_states, n_joint)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


@pytest.fixture()
def rng():
    # fresh, order-independent stream per test
    return np.random.default_rng(20240)


def make_problem(model, lam, tau_marginal=None, rng=None):
    """Strategy problem with uniform (or randomized) reported marginals."""
    tables = model.build_utility_tables()
    n_tau = len(model.tau_levels)
    if tau_marginal is None:
        tau_marginal = [1.0 / n_tau] * n_tau
    gm = []
    for b in range(model.num_bs):
        space = model.action_spaces[b]
        per_bs = []
        for m in range(space.num_mus):
            per_mu = []
            for s in range(model.num_subcarriers):
                levels = model.direct_gain_sets[b][m][s].num_levels
                if rng is None:
                    marg = np.full(levels, 1.0 / levels)
                else:
                    marg = rng.random(levels) + 0.2
                    marg /= marg.sum()
                per_mu.append(marg)
            per_bs.append(per_mu)
        gm.append(per_bs)
    return build_strategy_problem(tables, tau_marginal, gm, lam)


def cvxpy_reference(problem, solver=None):
    """Independent oracle: the program in its explicit best-deviation form,
    handed to an interior-point conic solver."""
    import cvxpy as cp

    if solver is None:
        solver = cp.CLARABEL
    tables = problem.tables
    model = tables.model
    ns, nj = model.state_space.n_global, model.n_joint
    dist = problem.state_dist
    lam = problem.lambda_hat
    x = cp.Variable((ns, nj), nonneg=True)
    cons = [cp.sum(x, axis=1) == 1]
    objective_terms = []
    for b in range(model.num_bs):
        vg = tables.global_matrix(b, "worst_case")
        vhat = cp.sum(cp.multiply(dist[:, None] * vg, x))
        dev = tables.deviation_tensor(b, "worst_case")
        opp = model.opponent_profile_map(b)
        loc = tables.local_maps[b]
        n_local = model.state_space.n_local[b]
        local_dist = np.zeros(n_local)
        np.add.at(local_dist, loc, dist)
        theta = cp.Variable(n_local)
        for l in range(n_local):
            mask = loc == l
            for j in range(model.n_actions[b]):
                row = dev[l, j, :][opp]
                lhs = cp.sum(cp.multiply(dist[mask, None] * row[None, :], x[mask]))
                cons.append(lhs <= local_dist[l] * theta[l])
        cons.append(vhat >= local_dist @ theta)
        cons.append(vhat >= lam[b])
        objective_terms.append(lam[b] * cp.log1p(vhat))
    cvx_problem = cp.Problem(cp.Maximize(cp.sum(cp.hstack(objective_terms))), cons)
    cvx_problem.solve(solver=solver)
    return cvx_problem.status, cvx_problem.value


def simplex_grid(dim, steps):
    """All probability vectors with entries in multiples of 1/steps."""
    out = []
    for cuts in itertools.combinations_with_replacement(range(steps + 1), dim - 1):
        prev = 0
        vec = []
        for c in cuts:
            vec.append(c - prev)
            prev = c
        vec.append(steps - prev)
        out.append(vec)
    return np.array(out, dtype=float) / steps


def grid_search_reference(problem, steps=20, refine_rounds=3, refine_samples=4000):
    """Dense per-state simplex grid plus local random refinement.

    Tractable only for instances with at most two global states; returns the
    best feasible objective found.
    """
    tables = problem.tables
    model = tables.model
    ns, nj = model.state_space.n_global, model.n_joint
    assert ns <= 2
    dist = problem.state_dist
    lam = problem.lambda_hat

    def evaluate(x_batch):
        best_val = -np.inf
        best_x = None
        for x in x_batch:
            ok = True
            vhats = []
            for b in range(model.num_bs):
                vg = tables.global_matrix(b, "worst_case")
                vhat = float((dist[:, None] * vg * x).sum())
                dev = tables.deviation_tensor(b, "worst_case")
                opp = model.opponent_profile_map(b)
                loc = tables.local_maps[b]
                commit = 0.0
                for l in range(model.state_space.n_local[b]):
                    mask = loc == l
                    vals = [
                        float(
                            (dist[mask, None] * dev[l, j, :][opp][None, :] * x[mask]).sum()
                        )
                        for j in range(model.n_actions[b])
                    ]
                    commit += max(vals)
                if vhat < commit - 1e-9 or vhat < lam[b] - 1e-9:
                    ok = False
                    break
                vhats.append(vhat)
            if ok:
                val = float((lam * np.log1p(vhats)).sum())
                if val > best_val:
                    best_val = val
                    best_x = x
        return best_val, best_x

    grid = simplex_grid(nj, steps)
    if ns == 1:
        batch = grid[:, None, :]
    else:
        idx = np.arange(len(grid))
        batch = np.array([np.stack([grid[i], grid[j]]) for i in idx for j in idx])
    best_val, best_x = evaluate(batch)

    local_rng = np.random.default_rng(0)
    radius = 1.0 / steps
    for _ in range(refine_rounds):
        if best_x is None:
            break
        noise = local_rng.dirichlet(np.ones(nj), size=(refine_samples, ns))
        mixed = (1 - radius) * best_x[None] + radius * noise
        val, x = evaluate(mixed)
        if val > best_val:
            best_val, best_x = val, x
        radius *= 0.4
    return best_val


def bp_objective(powers, qv, gains, interference, noise):
    """Natural-log scheduling objective the water allocation maximizes."""
    vals, probs, lens = interference
    total = 0.0
    num_mus, num_sc = gains.shape
    for m in range(num_mus):
        for s in range(num_sc):
            if powers[m, s] <= 0:
                continue
            for k in range(lens[m, s]):
                total += (
                    qv[m]
                    * probs[m, s, k]
                    * math.log(1 + powers[m, s] * gains[m, s] / (noise + vals[m, s, k]))
                )
    return total


def waterfill_grid_reference(qv, gains, mask, interference, budget, noise, points=10_000):
    """Budget-simplex grid oracle for the per-slot allocation."""
    num_mus, num_sc = gains.shape
    active = [
        (m, s)
        for m in range(num_mus)
        for s in range(num_sc)
        if mask & (1 << s) and qv[m] > 0
    ]
    best = 0.0
    if not active:
        return best
    if len(active) == 1:
        grids = np.linspace(0, 1, points)[:, None]
    elif len(active) == 2:
        fractions = np.linspace(0, 1, points)
        grids = np.stack([fractions, 1 - fractions], axis=1)
    else:
        steps = max(2, int(round(points ** (1 / (len(active) - 1)))))
        axes = [np.linspace(0, 1, steps)] * (len(active) - 1)
        mesh = np.meshgrid(*axes, indexing="ij")
        partial = np.stack([m.ravel() for m in mesh], axis=1)
        last = 1 - partial.sum(axis=1)
        keep = last >= -1e-12
        grids = np.concatenate(
            [partial[keep], np.clip(last[keep], 0, None)[:, None]], axis=1
        )
    for frac in grids:
        powers = np.zeros((num_mus, num_sc))
        for (m, s), f in zip(active, frac):
            powers[m, s] = f * budget
        val = bp_objective(powers, qv, gains, interference, noise)
        if val > best:
            best = val
    return best


def random_interference_dists(rng, num_mus, num_sc, max_support=3, scale=5e-9):
    """Padded (values, probs, lens) arrays with random discrete supports."""
    kmax = max_support
    vals = np.zeros((num_mus, num_sc, kmax))
    probs = np.zeros((num_mus, num_sc, kmax))
    lens = np.zeros((num_mus, num_sc), dtype=np.int64)
    for m in range(num_mus):
        for s in range(num_sc):
            k = int(rng.integers(1, max_support + 1))
            v = np.sort(rng.uniform(0, scale, size=k))
            p = rng.random(k) + 0.1
            p /= p.sum()
            vals[m, s, :k] = v
            probs[m, s, :k] = p
            lens[m, s] = k
    return vals, probs, lens
