import math
from dataclasses import replace

import numpy as np
import pytest

from gasflow import configs, parse_network, solve_steady
from gasflow.nlp import NlpOptions, check_derivatives
from gasflow.ogf import (
    OgfError,
    PenaltyConfig,
    assemble_chance_constrained,
    assemble_deterministic,
    initial_point_chance_constrained,
    solve_chance_constrained,
    solve_deterministic,
)
from gasflow.stochastic import UncertaintySpec, build_grid

PEN = PenaltyConfig(gamma=2500.0, delta=1e-3)


@pytest.fixture(scope="module")
def single_pipe():
    return configs.load("single_pipe")


@pytest.fixture(scope="module")
def eight_node():
    return configs.load("eight_node")


@pytest.fixture(scope="module")
def cc_single_pipe(single_pipe):
    return solve_chance_constrained(single_pipe, K=16, penalty=PEN, epsilon=0.05)


@pytest.fixture(scope="module")
def cc_eight_node_300(eight_node):
    net = eight_node.with_node(replace(eight_node.node("J3"), demand_max=300.0))
    return solve_chance_constrained(net, K=16, penalty=PEN)


def random_interior(problem, rng):
    lo, hi = problem.lower, problem.upper
    x = np.empty(problem.n)
    both = np.isfinite(lo) & np.isfinite(hi)
    x[both] = lo[both] + (0.3 + 0.4 * rng.random(both.sum())) * (hi[both] - lo[both])
    lo_only = np.isfinite(lo) & ~np.isfinite(hi)
    x[lo_only] = lo[lo_only] + 0.5 + rng.random(lo_only.sum())
    hi_only = ~np.isfinite(lo) & np.isfinite(hi)
    x[hi_only] = hi[hi_only] - 0.5 - rng.random(hi_only.sum())
    free = ~np.isfinite(lo) & ~np.isfinite(hi)
    x[free] = rng.normal(scale=0.5, size=free.sum())
    return x


class TestDeterministic:
    def test_single_pipe_min_power_hits_pressure_floor(self, single_pipe):
        # with a fixed load and pure compression cost the optimum pins the
        # delivery pressure at its floor, fixing alpha analytically
        sol = solve_deterministic(single_pipe)
        net = single_pipe
        kappa = net.kappa()[0]
        alpha_ref = (
            net.node("N3").pressure_min ** 2 + kappa * 250.0**2
        ) / net.slack_node.slack_pressure**2
        assert sol.optimal
        assert sol.alpha["C1"] == pytest.approx(alpha_ref, rel=1e-5)
        assert sol.pressure("N3")[0] == pytest.approx(net.node("N3").pressure_min, rel=1e-5)

    def test_zero_demand_zero_price_idle(self):
        doc = {
            "wave_speed": 377.0,
            "nodes": [
                {"id": "A", "kind": "slack", "slack_pressure": 5e6,
                 "pressure_min": 3e6, "pressure_max": 6e6},
                {"id": "B", "kind": "flow", "pressure_min": 3e6, "pressure_max": 6e6},
                {"id": "C", "kind": "flow", "pressure_min": 3e6, "pressure_max": 6e6},
            ],
            "pipes": [{"id": "P", "from": "B", "to": "C", "length": 2e4,
                       "diameter": 0.9144, "friction": 0.01}],
            "compressors": [{"id": "K", "from": "A", "to": "B", "alpha_max": 1.4,
                             "eta": 0.1, "m": 1.0}],
        }
        sol = solve_deterministic(parse_network(doc))
        assert sol.optimal
        # with zero flow the power term is flat to within eta*delta, so the
        # ratio is pinned at its lower bound only to that resolution
        assert sol.alpha["K"] == pytest.approx(1.0, abs=1e-3)
        assert sol.objective == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(sol.phi[0], 0.0, atol=1e-6)

    def test_interior_optimized_demand_dual_equals_price(self, eight_node):
        # no nomination bound: the balance dual at the optimized node must
        # equal the bid price exactly (first-order condition)
        net = eight_node.with_node(replace(eight_node.node("J3"), demand_max=math.inf))
        sol = solve_deterministic(net, loads={"J5": 80.0})
        assert sol.optimal
        d3 = sol.d["J3"][0]
        assert 0.0 < d3 < 1e4
        assert sol.lambda_q["J3"][0] == pytest.approx(20.0, rel=1e-5)
        # the decoded withdrawal reflects the load override
        assert sol.withdrawal("J5")[0] == pytest.approx(80.0)

    def test_infeasible_box_rejected(self):
        doc = {
            "wave_speed": 377.0,
            "nodes": [
                {"id": "A", "kind": "slack", "slack_pressure": 5e6,
                 "pressure_min": 3e6, "pressure_max": 6e6},
                {"id": "B", "kind": "flow", "pressure_min": 6e6, "pressure_max": 3e6},
            ],
            "pipes": [{"id": "P", "from": "A", "to": "B", "length": 2e4,
                       "diameter": 0.9144, "friction": 0.01}],
        }
        with pytest.raises(Exception, match="pressure_min"):
            solve_deterministic(parse_network(doc))


class TestChanceConstrainedStructure:
    def test_layout_counts(self, single_pipe):
        net = single_pipe
        unc = net.uncertain_nodes[0]
        grid = build_grid(unc.uncertainty, 8, node_id=unc.id)
        problem, layout = assemble_chance_constrained(net, {unc.id: grid}, PEN)
        K, nv, ne = 8, 3, 2
        assert layout.K == K
        # alpha + per-cell (Pi without slack, flows, slack injection) + spline + budget slack
        assert problem.n == 1 + K * ((nv - 1) + ne + 1) + (K + 3) + 1
        assert problem.m == K * (1 + 1 + nv) + (K + 3) + 1
        assert layout.chance_nodes == ["N3"]

    def test_shared_alpha_single_variable(self, cc_single_pipe):
        assert set(cc_single_pipe.alpha) == {"C1"}

    def test_balance_holds_in_every_cell(self, cc_single_pipe):
        sol = cc_single_pipe
        net = sol.layout.net
        from gasflow import incidence

        A = incidence(net).toarray()
        for k in range(sol.K):
            inflow = A @ sol.phi[k]
            q = np.array([
                -sol.slack_injection[k] if n.kind.value == "slack" else sol.withdrawal(n.id)[k]
                for n in net.nodes
            ])
            np.testing.assert_allclose(inflow, q, atol=1e-6)

    def test_expected_balance_identity(self, cc_single_pipe):
        sol = cc_single_pipe
        from gasflow import incidence

        A = incidence(sol.layout.net).toarray()
        residual = np.zeros(len(sol.layout.net.nodes))
        for k in range(sol.K):
            q = np.array([
                -sol.slack_injection[k] if n.kind.value == "slack" else sol.withdrawal(n.id)[k]
                for n in sol.layout.net.nodes
            ])
            residual += sol.cell_mass[k] * (A @ sol.phi[k] - q)
        np.testing.assert_allclose(residual, 0.0, atol=1e-8)

    def test_cells_match_steady_simulation(self, cc_single_pipe):
        # criterion: optimizer per-cell states reproduce the exact physics
        sol = cc_single_pipe
        net = sol.layout.net
        for k in range(sol.K):
            q = {"N3": 250.0 + sol.cell_omega[k]}
            st = solve_steady(net, sol.alpha, q)
            np.testing.assert_allclose(sol.Pi[k], st.Pi, rtol=1e-6)
            np.testing.assert_allclose(
                sol.phi[k], st.phi, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(st.phi).max())
            )

    def test_hard_bounds_honored(self, cc_eight_node_300):
        sol = cc_eight_node_300
        net = sol.layout.net
        for j, node in enumerate(net.nodes):
            assert np.all(sol.Pi[:, j] <= node.pressure_max**2 * (1 + 1e-9))
            if node.id not in sol.layout.chance_nodes and node.kind.value != "slack":
                assert np.all(sol.Pi[:, j] >= node.pressure_min**2 * (1 - 1e-9))
        for cid, a in sol.alpha.items():
            cmp = next(c for c in net.compressors if c.id == cid)
            assert 1.0 - 1e-9 <= a <= cmp.alpha_max + 1e-9
        d3 = sol.d["J3"]
        assert np.all(d3 >= -1e-9) and np.all(d3 <= 300.0 + 1e-6)

    def test_objective_decomposition(self, cc_single_pipe):
        sol = cc_single_pipe
        assert sol.objective == pytest.approx(
            sol.expected_compressor_power - sol.expected_economic_value,
            abs=1e-6 * max(1.0, abs(sol.objective)),
        )

    def test_objective_decomposition_with_load_override(self, eight_node):
        sol = solve_deterministic(eight_node, loads={"J5": 80.0}, penalty=PEN)
        assert sol.objective == pytest.approx(
            sol.expected_compressor_power - sol.expected_economic_value,
            abs=1e-6 * max(1.0, abs(sol.objective)),
        )

    def test_chance_budget_met(self, cc_eight_node_300):
        sol = cc_eight_node_300
        assert sol.sfv_expectation["J5"] <= 0.1 + 1e-8

    def test_epsilon_override(self, single_pipe):
        sol = solve_chance_constrained(single_pipe, K=8, penalty=PEN, epsilon=0.11)
        assert sol.epsilon["N3"] == pytest.approx(0.11)


class TestDegenerateEquivalence:
    def test_single_pipe_zero_width_shaves_alpha_by_budget(self, single_pipe):
        # point-mass uncertainty with a binding floor: the relaxed problem
        # runs the penalty budget exactly, so the optimal ratio sits below the
        # deterministic one by sqrt(epsilon/gamma) in scaled squared pressure
        net = single_pipe.with_node(
            replace(
                single_pipe.node("N3"),
                uncertainty=UncertaintySpec(dist="uniform", lo=0.0, hi=0.0),
            )
        )
        cc = solve_chance_constrained(net, K=4, penalty=PEN, epsilon=0.05)
        det = solve_deterministic(single_pipe, loads={"N3": 250.0}, penalty=PEN)
        assert cc.optimal and det.optimal
        shave = math.sqrt(0.05 / PEN.gamma)
        assert cc.alpha["C1"] == pytest.approx(det.alpha["C1"] - shave, abs=2e-5)
        assert cc.sfv_expectation["N3"] <= 0.05 + 1e-8
        assert cc.sfv_expectation["N3"] >= 0.05 - 1e-4  # budget binds
        assert cc.objective <= det.objective + 1e-9

    def test_eight_node_point_mass_matches_deterministic(self, eight_node):
        tight = NlpOptions(tol=1e-10)
        net = eight_node.with_node(
            replace(
                eight_node.node("J5"),
                uncertainty=UncertaintySpec(dist="uniform", lo=16.0, hi=16.0),
            )
        )
        cc = solve_chance_constrained(net, K=4, penalty=PEN, options=tight)
        det = solve_deterministic(eight_node, loads={"J5": 80.0}, penalty=PEN,
                                  options=tight)
        assert cc.optimal and det.optimal
        assert cc.objective == pytest.approx(det.objective, rel=1e-8)
        for cid in cc.alpha:
            assert cc.alpha[cid] == pytest.approx(det.alpha[cid], abs=1e-6)
        assert cc.d["J3"].mean() == pytest.approx(det.d["J3"][0], abs=1e-6 * 200.0)


class TestDerivatives:
    def test_deterministic_assembly_derivatives(self, eight_node):
        problem, _ = assemble_deterministic(eight_node, penalty=PEN)
        rng = np.random.default_rng(1)
        for _ in range(3):
            x = random_interior(problem, rng)
            assert check_derivatives(problem, x) <= 1e-5

    def test_chance_assembly_derivatives(self, single_pipe):
        unc = single_pipe.uncertain_nodes[0]
        grid = build_grid(unc.uncertainty, 8, node_id=unc.id)
        problem, _ = assemble_chance_constrained(single_pipe, {unc.id: grid}, PEN)
        rng = np.random.default_rng(2)
        for _ in range(3):
            x = random_interior(problem, rng)
            assert check_derivatives(problem, x) <= 1e-5


def supply_relief_net(pressure_floor=4.82e6):
    # a long feeder makes slack-only service violate the delivery floor, so
    # the optimizer must buy local injection at M (offer price 5)
    return parse_network(
        {
            "wave_speed": 377.0,
            "nodes": [
                {"id": "L", "kind": "flow", "pressure_min": pressure_floor,
                 "pressure_max": 6e6, "demand": 100.0, "demand_price": 30.0},
                {"id": "M", "kind": "flow", "pressure_min": 3e6, "pressure_max": 6e6,
                 "supply_optimized": True, "supply_price": 5.0, "supply_max": 60.0},
                {"id": "S", "kind": "slack", "slack_pressure": 5e6,
                 "pressure_min": 3e6, "pressure_max": 6e6},
            ],
            "pipes": [
                {"id": "P1", "from": "S", "to": "M", "length": 6e4,
                 "diameter": 0.9144, "friction": 0.01},
                {"id": "P2", "from": "M", "to": "L", "length": 1e4,
                 "diameter": 0.9144, "friction": 0.01},
            ],
            "compressors": [],
        }
    )


class TestOptimizedSupply:
    def test_supply_dispatched_to_relieve_pressure(self):
        net = supply_relief_net()
        sol = solve_deterministic(net, penalty=PEN)
        assert sol.optimal
        s = sol.s["M"][0]
        assert 0.0 < s < 60.0, f"expected interior supply, got {s}"
        # delivery floor binds and the feeder carries the residual demand
        assert sol.pressure("L")[0] == pytest.approx(4.82e6, rel=1e-6)
        assert sol.flow("P1")[0] == pytest.approx(100.0 - s, rel=1e-8)
        # interior supply prices gas at M exactly at the offer
        assert sol.lambda_q["M"][0] == pytest.approx(5.0, rel=1e-5)
        # delivered gas at L is worth more than at M (congested feeder adds value)
        assert sol.lambda_q["L"][0] > 5.0

    def test_supply_capped_earns_scarcity_rent(self):
        # cap the cheap injection below what full delivery needs (~19.3 kg/s)
        # and let the delivered quantity flex instead: the cap binds and the
        # balance dual exceeds the offer by the bound dual
        net = supply_relief_net()
        net = net.with_node(replace(net.node("M"), supply_max=15.0))
        net = net.with_node(
            replace(net.node("L"), demand_optimized=True, demand_max=100.0)
        )
        sol = solve_deterministic(net, penalty=PEN)
        assert sol.optimal
        assert sol.s["M"][0] == pytest.approx(15.0, abs=1e-5)
        assert sol.lambda_s["M"][0] > 1e-3
        assert sol.lambda_q["M"][0] == pytest.approx(
            5.0 + sol.lambda_s["M"][0], abs=1e-5
        )
        # the delivered quantity is interior, so its dual equals the bid
        assert 15.0 < sol.d["L"][0] < 100.0 - 1e-4
        assert sol.lambda_q["L"][0] == pytest.approx(30.0, abs=1e-4)

    def test_capped_supply_infeasibility_detected(self):
        # with a fixed load, capping the injection below the relief need
        # leaves no feasible operating point; the solver must not report
        # optimality
        net = supply_relief_net()
        capped = net.with_node(replace(net.node("M"), supply_max=5.0))
        sol = solve_deterministic(capped, penalty=PEN)
        assert not sol.optimal
        assert sol.kkt_residuals["feasibility"] > 1e-3

    def test_supply_in_stochastic_problem(self):
        net = supply_relief_net()
        net = net.with_node(
            replace(
                net.node("L"),
                uncertainty=UncertaintySpec(dist="uniform", lo=-10.0, hi=10.0),
                epsilon=0.05,
            )
        )
        sol = solve_chance_constrained(net, K=8, penalty=PEN)
        assert sol.optimal
        s = sol.s["M"]
        assert s.shape == (8,)
        assert np.all(s > 0.0)
        # per-cell identity at an interior supply: balance dual = offer * mass
        interior = (s > 1e-6) & (s < 60.0 - 1e-6)
        ident = sol.lambda_q["M"][interior] - 5.0 * sol.cell_mass[interior]
        assert np.abs(ident).max() <= 1e-5


class TestPenaltyBlend:
    def test_shape_matches_quadratic_outside_band(self):
        pen = PenaltyConfig(gamma=2500.0, blend_width=1e-3)
        z = np.array([-0.5, -2e-3, 2e-3, 0.5])
        v, dv, ddv = pen.shape(z)
        np.testing.assert_allclose(v, [0.0, 0.0, 4e-6, 0.25])
        np.testing.assert_allclose(dv, [0.0, 0.0, 4e-3, 1.0])
        np.testing.assert_allclose(ddv, [0.0, 0.0, 2.0, 2.0])

    def test_shape_continuity_at_band_edges(self):
        w = 1e-3
        pen = PenaltyConfig(blend_width=w)
        eps = 1e-9
        for edge in (-w, w):
            v_lo, dv_lo, _ = pen.shape(edge - eps)
            v_hi, dv_hi, _ = pen.shape(edge + eps)
            assert v_hi - v_lo == pytest.approx(0.0, abs=1e-11)
            assert dv_hi - dv_lo == pytest.approx(0.0, abs=1e-7)
        # maximum deviation from the bare penalty is w^2/16 at z = 0
        v0, _, _ = pen.shape(0.0)
        assert float(v0) == pytest.approx(w * w / 16.0, rel=1e-12)

    def test_blended_solve_close_to_exact(self, single_pipe):
        blend = PenaltyConfig(gamma=2500.0, delta=1e-3, blend_width=1e-4)
        sol = solve_chance_constrained(single_pipe, K=8, penalty=blend, epsilon=0.05)
        ref = solve_chance_constrained(single_pipe, K=8, penalty=PEN, epsilon=0.05)
        assert sol.optimal
        assert sol.alpha["C1"] == pytest.approx(ref.alpha["C1"], abs=1e-5)

    def test_blended_derivatives(self, single_pipe):
        blend = PenaltyConfig(gamma=2500.0, delta=1e-3, blend_width=1e-3)
        unc = single_pipe.uncertain_nodes[0]
        grid = build_grid(unc.uncertainty, 8, node_id=unc.id)
        problem, _ = assemble_chance_constrained(single_pipe, {unc.id: grid}, blend)
        rng = np.random.default_rng(9)
        for _ in range(2):
            assert check_derivatives(problem, random_interior(problem, rng)) <= 1e-5


class TestAssemblyErrors:
    def test_two_uncertain_nodes_rejected(self, single_pipe):
        net = single_pipe.with_node(
            replace(
                single_pipe.node("N2"),
                uncertainty=UncertaintySpec(dist="uniform", lo=-1.0, hi=1.0),
                epsilon=0.1,
            )
        )
        with pytest.raises(OgfError, match="exactly one uncertain node"):
            solve_chance_constrained(net, K=8, penalty=PEN)

    def test_missing_epsilon_rejected(self, single_pipe):
        net = single_pipe.with_node(replace(single_pipe.node("N3"), epsilon=None))
        unc = net.uncertain_nodes[0]
        grid = build_grid(unc.uncertainty, 8, node_id=unc.id)
        with pytest.raises(OgfError, match="epsilon"):
            assemble_chance_constrained(net, {unc.id: grid}, PEN)

    def test_grid_required(self, single_pipe):
        with pytest.raises(OgfError, match="grid"):
            assemble_chance_constrained(single_pipe, {}, PEN)

    def test_bad_penalty(self):
        with pytest.raises(OgfError, match="gamma"):
            PenaltyConfig(gamma=0.0)
        with pytest.raises(OgfError, match="delta"):
            PenaltyConfig(delta=-1.0)

    def test_unknown_load_override(self, single_pipe):
        with pytest.raises(OgfError, match="N9"):
            assemble_deterministic(single_pipe, loads={"N9": 1.0})


class TestWarmStart:
    def test_initial_point_within_bounds(self, single_pipe):
        unc = single_pipe.uncertain_nodes[0]
        grid = build_grid(unc.uncertainty, 8, node_id=unc.id)
        problem, layout = assemble_chance_constrained(single_pipe, {unc.id: grid}, PEN)
        x0 = initial_point_chance_constrained(single_pipe, layout)
        assert np.all(x0 >= problem.lower - 1e-9)
        assert np.all(np.where(np.isfinite(problem.upper), x0 <= problem.upper + 1e-6, True))

    def test_resolve_from_previous_solution(self, single_pipe, cc_single_pipe):
        again = solve_chance_constrained(
            single_pipe, K=16, penalty=PEN, epsilon=0.05, x0=cc_single_pipe
        )
        assert again.optimal
        assert again.iterations <= 3
        assert again.alpha["C1"] == pytest.approx(cc_single_pipe.alpha["C1"], abs=1e-8)
