import itertools
import math

import numpy as np
import pytest

from conftest import build_model, cvxpy_reference, grid_search_reference, make_problem
from fhsdn.equilibrium import (
    EquilibriumReport,
    StrategyProblem,
    StrategyTable,
    build_strategy_problem,
    dump_debug,
    equilibrium_gap_bound,
    product_state_distribution,
    solve_strategy_problem,
    verify_coarse_equilibrium,
)
from fhsdn.game import average_utility

cp = pytest.importorskip("cvxpy")


class TestProblemConstruction:
    def test_product_distribution_two_bs(self):
        model = build_model(num_bs=2, num_mus=2, num_sc=2, tau_levels=(0.25, 0.5))
        tables = model.build_utility_tables()
        unif = [0.5, 0.5]
        gm = [[[unif, unif], [unif, unif]] for _ in range(2)]
        dist = product_state_distribution(tables, unif, gm)
        assert dist.shape == (512,)
        assert np.allclose(dist, 1.0 / 512)

    def test_single_state(self):
        model = build_model(
            num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,), num_levels=1
        )
        tables = model.build_utility_tables()
        dist = product_state_distribution(tables, [1.0], [[[[1.0]]]])
        assert dist.tolist() == [1.0]

    def test_non_normalized_marginal_rejected(self):
        model = build_model(num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,))
        tables = model.build_utility_tables()
        with pytest.raises(ValueError):
            product_state_distribution(tables, [1.0], [[[[0.5, 0.4]]]])

    def test_lambda_positive_required(self):
        model = build_model(num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,))
        with pytest.raises(ValueError):
            make_problem(model, [0.0])

    def test_strategy_validation(self):
        with pytest.raises(ValueError):
            StrategyTable(np.array([[0.5, 0.4]]))
        with pytest.raises(ValueError):
            StrategyTable(np.array([[1.2, -0.2]]))
        table = StrategyTable(np.array([[0.5 + 1e-13, 0.5 - 1e-13]]))
        assert table.probs.sum() == pytest.approx(1.0, abs=1e-15)


class TestSolver:
    def test_single_player_transmits(self):
        model = build_model(
            num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,), direct_means=[[5.0]]
        )
        problem = make_problem(model, [0.5])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert sol.feasible
        # probability one on the transmit action in every state
        assert (sol.strategy.probs[:, 1] > 1 - 1e-3).all()
        vg = problem.tables.global_matrix(0, "worst_case")
        oracle = float((problem.state_dist * vg.max(axis=1)).sum())
        assert sol.objective == pytest.approx(0.5 * math.log1p(oracle), abs=1e-6)

    def test_single_state_single_action_feasibility(self):
        model = build_model(
            num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,), num_levels=1
        )
        tables = model.build_utility_tables()
        rate = tables.worst_case[0][0, 1]
        # feasible when the demand sits below the only transmit rate
        prob = build_strategy_problem(tables, [1.0], [[[[1.0]]]], [rate * 0.5])
        sol = solve_strategy_problem(prob, tol=1e-6)
        assert sol.feasible
        # infeasible when it exceeds it
        prob2 = build_strategy_problem(tables, [1.0], [[[[1.0]]]], [rate * 2.0])
        sol2 = solve_strategy_problem(prob2, tol=1e-6)
        assert not sol2.feasible
        assert sol2.qos_slack.min() == pytest.approx(-rate, rel=0.2)

    def test_two_player_matches_cvxpy(self, rng):
        for trial in range(4):
            dm = [[float(rng.uniform(1, 8))], [float(rng.uniform(1, 8))]]
            model = build_model(
                num_bs=2,
                num_mus=1,
                num_sc=1,
                tau_levels=(0.25, 0.5),
                direct_means=dm,
                cross_means=float(rng.uniform(0.3, 3.0)),
            )
            lam = [float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.1, 0.5))]
            problem = make_problem(model, lam, rng=rng)
            sol = solve_strategy_problem(problem, tol=1e-6)
            status, ref = cvxpy_reference(problem)
            if status != "optimal" or not sol.feasible:
                continue
            assert sol.objective == pytest.approx(ref, abs=1e-3)
            assert sol.objective >= ref - 1e-3

    def test_two_state_instance_matches_grid_search(self):
        # two players, one binary state component each held fixed; two global
        # states through the overhead level
        model = build_model(
            num_bs=2,
            num_mus=1,
            num_sc=1,
            tau_levels=(0.25, 0.5),
            num_levels=1,
            cross_levels=2,
            direct_means=[[6.0], [3.0]],
            cross_means=1.5,
        )
        problem = make_problem(model, [0.4, 0.3])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert sol.feasible
        grid_val = grid_search_reference(problem, steps=20)
        assert sol.objective >= grid_val - 1e-4
        status, ref = cvxpy_reference(problem)
        assert status == "optimal"
        assert sol.objective == pytest.approx(ref, abs=1e-4)

    def test_infeasible_demand_reports_slack(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [50.0, 50.0])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert not sol.feasible
        assert (sol.qos_slack < 0).all()
        # the returned strategy still satisfies the equilibrium constraints
        report = verify_coarse_equilibrium(sol.strategy, problem, "worst_case")
        assert report.epsilon <= 1e-6

    def test_rows_are_distributions(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.3, 0.3])
        sol = solve_strategy_problem(problem, tol=1e-6)
        probs = sol.strategy.probs
        assert (probs >= 0).all()
        assert np.abs(probs.sum(axis=1) - 1).max() < 1e-12

    def test_feasible_solution_meets_demand(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert sol.feasible
        assert (sol.qos_slack >= -1e-6).all()

    def test_stage_objectives_non_decreasing(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        seq = sol.stage_objectives
        for a, b in zip(seq, seq[1:]):
            assert b >= a - 1e-9

    def test_warm_start_consistency(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        warm = solve_strategy_problem(
            problem, tol=1e-6, init_logits=sol.logits, num_stages=2
        )
        assert warm.objective == pytest.approx(sol.objective, abs=1e-5)
        report = verify_coarse_equilibrium(warm.strategy, problem, "worst_case")
        assert report.epsilon <= 1e-6

    def test_theta_matches_best_deviation(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        from fhsdn.game import deviation_utility

        local_dists = problem.local_dists()
        for b in range(2):
            for l in range(model.state_space.n_local[b]):
                best = max(
                    deviation_utility(
                        problem.tables, b, l, a, sol.strategy.probs, problem.state_dist
                    )
                    for a in range(model.n_actions[b])
                )
                if local_dists[b][l] > 0:
                    assert sol.theta[b][l] == pytest.approx(
                        best / local_dists[b][l], rel=1e-9
                    )


class TestVerification:
    def test_solver_output_is_exact_equilibrium(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        report = verify_coarse_equilibrium(sol.strategy, problem, "worst_case")
        assert isinstance(report, EquilibriumReport)
        assert report.epsilon <= 1e-6

    def test_single_action_game_epsilon_zero(self):
        model = build_model(
            num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,), num_levels=1
        )
        tables = model.build_utility_tables()
        problem = build_strategy_problem(tables, [1.0], [[[[1.0]]]], [0.1])
        # freeze the strategy onto the only profitable action
        strat = StrategyTable(np.array([[0.0, 1.0]]))
        report = verify_coarse_equilibrium(strat, problem, "worst_case")
        # deviating to idle gains nothing; staying is the best deviation
        assert report.epsilon == 0.0

    def test_adversarial_strategy_has_positive_gap(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [0.1, 0.1])
        n = model.state_space.n_global
        probs = np.zeros((n, model.n_joint))
        probs[:, model.joint_index([0, 0])] = 1.0  # everyone idle
        report = verify_coarse_equilibrium(StrategyTable(probs), problem, "worst_case")
        assert report.epsilon > 0.1

    def test_average_utility_consistency(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [0.4, 0.4])
        sol = solve_strategy_problem(problem, tol=1e-6)
        # the verification gap plus the average equals the commitment value
        rep = verify_coarse_equilibrium(sol.strategy, problem, "worst_case")
        for b, gap in enumerate(rep.per_bs_gaps):
            ubar = average_utility(
                sol.strategy.probs,
                problem.state_dist,
                problem.tables.global_matrix(b, "worst_case"),
            )
            assert gap == pytest.approx(-(sol.cce_slack[b]), abs=1e-9)
            assert ubar == pytest.approx(
                sol.cce_slack[b]
                + (gap + ubar),  # identity check keeps both quantities tied
                abs=1e-9,
            )


class TestGapBound:
    def test_no_interference_bound_zero(self):
        # single player: expected and pessimistic utilities coincide
        model = build_model(num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        problem = make_problem(model, [0.3])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert equilibrium_gap_bound(sol.strategy, problem) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_interference_bound_zero(self):
        model = build_model(
            num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,), cross_levels=1
        )
        problem = make_problem(model, [0.3, 0.3])
        sol = solve_strategy_problem(problem, tol=1e-6)
        assert equilibrium_gap_bound(sol.strategy, problem) == pytest.approx(0.0, abs=1e-12)

    def test_realized_gap_within_bound(self, rng):
        for _ in range(6):
            model = build_model(
                num_bs=2,
                num_mus=1,
                num_sc=1,
                tau_levels=(0.25, 0.5),
                direct_means=[[float(rng.uniform(2, 8))], [float(rng.uniform(2, 8))]],
                cross_means=float(rng.uniform(0.3, 2.0)),
            )
            problem = make_problem(model, [0.2, 0.2], rng=rng)
            sol = solve_strategy_problem(problem, tol=1e-6)
            bound = equilibrium_gap_bound(sol.strategy, problem)
            realized = verify_coarse_equilibrium(sol.strategy, problem, "expected")
            assert realized.epsilon <= bound + 1e-6

    def test_rejects_non_equilibrium_input(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [0.2, 0.2])
        n = model.state_space.n_global
        probs = np.zeros((n, model.n_joint))
        probs[:, model.joint_index([0, 0])] = 1.0
        with pytest.raises(ValueError):
            equilibrium_gap_bound(StrategyTable(probs), problem)

    def test_zero_probability_state_contributes_nothing(self):
        model = build_model(num_bs=2, num_mus=1, num_sc=1, tau_levels=(0.25, 0.5))
        tables = model.build_utility_tables()
        gm = [[[[0.5, 0.5]]], [[[0.5, 0.5]]]]
        problem = build_strategy_problem(tables, [1.0, 0.0], gm, [0.2, 0.2])
        sol = solve_strategy_problem(problem, tol=1e-6)
        rep = verify_coarse_equilibrium(sol.strategy, problem, "worst_case")
        assert rep.epsilon <= 1e-6  # zero-probability tau level adds nothing


class TestDebugDump:
    def test_dump_round_trips(self, tmp_path):
        model = build_model(num_bs=1, num_mus=1, num_sc=1, tau_levels=(0.25,))
        problem = make_problem(model, [0.3])
        sol = solve_strategy_problem(problem, tol=1e-6)
        path = tmp_path / "dump.txt"
        dump_debug(problem, sol, path)
        text = path.read_text()
        assert "strategy" in text
        assert repr(sol.objective) in text
        # probabilities recorded at full precision
        first_row = [
            line for line in text.splitlines() if line.startswith("0 ") and " " in line
        ]
        assert first_row
