import numpy as np
import pytest

from gasflow import (
    SteadySolveError,
    nondimensionalize,
    parse_network,
    solve_steady,
)
from gasflow import configs


def two_node_net(p_slack=5.0e6, length=2.0e4):
    return parse_network(
        {
            "wave_speed": 377.0,
            "nodes": [
                {
                    "id": "S",
                    "kind": "slack",
                    "slack_pressure": p_slack,
                    "pressure_min": 1.0e6,
                    "pressure_max": 7.0e6,
                },
                {"id": "L", "kind": "flow", "pressure_min": 1.0e6, "pressure_max": 7.0e6},
            ],
            "pipes": [
                {"id": "P", "from": "S", "to": "L", "length": length, "diameter": 0.9144,
                 "friction": 0.01}
            ],
            "compressors": [],
        }
    )


def small_tree_net():
    # slack -> A branches to B and C
    return parse_network(
        {
            "wave_speed": 377.0,
            "nodes": [
                {"id": "A", "kind": "flow", "pressure_min": 1e6, "pressure_max": 7e6},
                {"id": "B", "kind": "flow", "pressure_min": 1e6, "pressure_max": 7e6},
                {"id": "C", "kind": "flow", "pressure_min": 1e6, "pressure_max": 7e6},
                {"id": "S", "kind": "slack", "slack_pressure": 5e6, "pressure_min": 1e6,
                 "pressure_max": 7e6},
            ],
            "pipes": [
                {"id": "p0", "from": "S", "to": "A", "length": 2e4, "diameter": 0.9144,
                 "friction": 0.01},
                {"id": "p1", "from": "A", "to": "B", "length": 3e4, "diameter": 0.9144,
                 "friction": 0.01},
                {"id": "p2", "from": "A", "to": "C", "length": 1e4, "diameter": 0.9144,
                 "friction": 0.01},
            ],
            "compressors": [],
        }
    )


class TestAnalyticOracle:
    def test_two_node_pressure_drop(self):
        net = two_node_net()
        q = 120.0
        state = solve_steady(net, None, {"L": q})
        kappa = net.kappa()[0]
        expected = net.slack_node.slack_pressure**2 - kappa * q * abs(q)
        assert state.squared_pressure_at("L") == pytest.approx(expected, rel=1e-10)
        assert state.flow_at("P") == pytest.approx(q, rel=1e-12)

    def test_two_node_reverse_flow(self):
        net = two_node_net()
        q = -80.0  # injection at L pushes flow back toward the slack
        state = solve_steady(net, None, {"L": q})
        kappa = net.kappa()[0]
        expected = net.slack_node.slack_pressure**2 - kappa * q * abs(q)
        assert state.squared_pressure_at("L") == pytest.approx(expected, rel=1e-10)

    def test_zero_load_equilibrium(self):
        net = configs.load("single_pipe")
        state = solve_steady(net, {"C1": 1.0}, {"N3": 0.0})
        np.testing.assert_allclose(state.phi, 0.0, atol=1e-8)
        np.testing.assert_allclose(state.Pi, net.slack_node.slack_pressure**2, rtol=1e-10)

    def test_compressor_boost(self):
        net = configs.load("single_pipe")
        alpha = 1.21
        state = solve_steady(net, {"C1": alpha}, {"N3": 0.0})
        assert state.squared_pressure_at("N2") == pytest.approx(
            alpha * net.slack_node.slack_pressure**2, rel=1e-10
        )


class TestConservation:
    def test_slack_injection_balances_demand(self):
        net = configs.load("eight_node")
        q = {"J3": 150.0, "J5": 80.0}
        state = solve_steady(net, None, q)
        assert state.slack_injection == pytest.approx(230.0, rel=1e-10)

    def test_eight_node_loop_converges(self):
        net = configs.load("eight_node")
        state = solve_steady(net, {"C1": 1.1, "C2": 1.2, "C3": 1.05}, {"J3": 250.0, "J5": 96.0})
        assert state.residual_norm <= 1e-10
        assert np.all(state.Pi > 0)


class TestNewtonBehavior:
    def test_warm_start_is_fast(self):
        net = configs.load("eight_node")
        first = solve_steady(net, None, {"J3": 150.0, "J5": 80.0})
        warm = solve_steady(
            net, None, {"J3": 151.0, "J5": 80.0}, x0=(first.Pi, first.phi)
        )
        assert warm.iterations <= 3

    def test_quadratic_convergence_tail(self):
        net = configs.load("eight_node")
        state = solve_steady(net, {"C1": 1.1, "C2": 1.2, "C3": 1.05}, {"J3": 250.0, "J5": 96.0})
        hist = state.residual_history
        # once the residual is small the next full Newton step squares it
        pairs = [
            (a, b)
            for a, b in zip(hist, hist[1:])
            if 1e-8 < a < 1e-2
        ]
        assert pairs, f"no tail pairs observed in {hist}"
        for a, b in pairs:
            assert b <= 50.0 * a * a

    def test_nonconvergence_reports_residual(self):
        # start far from the solution so one iteration cannot finish
        net = two_node_net()
        pi0 = np.full(2, (5.0e6) ** 2)
        phi0 = np.zeros(1)
        with pytest.raises(SteadySolveError) as err:
            solve_steady(net, None, {"L": 120.0}, x0=(pi0, phi0), max_iter=1)
        assert err.value.residual is not None

    def test_negative_pressure_reports_node(self):
        net = two_node_net()
        with pytest.raises(SteadySolveError) as err:
            solve_steady(net, None, {"L": 900.0})
        assert err.value.node == "L"

    def test_alpha_out_of_bounds(self):
        net = configs.load("single_pipe")
        with pytest.raises(SteadySolveError, match="ratio"):
            solve_steady(net, {"C1": 2.0}, {"N3": 100.0})

    def test_unknown_withdrawal_node(self):
        net = configs.load("single_pipe")
        with pytest.raises(SteadySolveError, match="N9"):
            solve_steady(net, None, {"N9": 1.0})


class TestMonotonicity:
    def test_single_pipe_withdrawal_monotone(self):
        net = configs.load("single_pipe")
        prev = None
        for q in (200.0, 240.0, 280.0, 300.0):
            state = solve_steady(net, {"C1": 1.25}, {"N3": q})
            if prev is not None:
                assert np.all(state.Pi <= prev + 1e-6)
            prev = state.Pi

    def test_tree_single_withdrawal_monotone(self):
        net = small_tree_net()
        base = solve_steady(net, None, {"B": 100.0, "C": 50.0})
        bumped = solve_steady(net, None, {"B": 140.0, "C": 50.0})
        assert np.all(bumped.Pi <= base.Pi + 1e-6)

    def test_eight_node_loop_monotone_in_uncertain_load(self):
        net = configs.load("eight_node")
        alpha = {"C1": 1.1, "C2": 1.2, "C3": 1.05}
        base = solve_steady(net, alpha, {"J3": 200.0, "J5": 64.0})
        bumped = solve_steady(net, alpha, {"J3": 200.0, "J5": 96.0})
        assert np.all(bumped.Pi <= base.Pi + 1e-6)


class TestScaling:
    def test_pressure_scale_is_slack(self):
        net = configs.load("eight_node")
        s = nondimensionalize(net)
        assert s.pressure == pytest.approx(5.0e6)
        assert s.squared_pressure == pytest.approx(2.5e13)

    def test_max_scaled_resistance_is_one(self):
        net = configs.load("eight_node")
        s = nondimensionalize(net)
        kappa_nd = net.kappa() * s.flow**2 / s.squared_pressure
        assert kappa_nd.max() == pytest.approx(1.0, rel=1e-12)

    def test_round_trip_identity(self):
        net = configs.load("single_pipe")
        s = nondimensionalize(net)
        rng = np.random.default_rng(0)
        pi = rng.uniform(1e13, 3e13, 5)
        phi = rng.uniform(-400, 400, 5)
        np.testing.assert_allclose((pi / s.squared_pressure) * s.squared_pressure, pi,
                                   rtol=1e-14)
        np.testing.assert_allclose((phi / s.flow) * s.flow, phi, rtol=1e-14)

    def test_scaling_improves_jacobian_conditioning(self):
        # single-pipe square system at the solution, assembled both ways:
        # unknowns [Pi2, Pi3, phi_C, phi_P]
        net = configs.load("single_pipe")
        alpha, q = 1.2, 250.0
        state = solve_steady(net, {"C1": alpha}, {"N3": q})
        kappa = net.kappa()[0]
        phi = state.flow_at("P1")

        def jacobian(kappa_val, phi_val):
            return np.array(
                [
                    [1.0, 0.0, 0.0, 0.0],
                    [-1.0, 1.0, 0.0, 2.0 * kappa_val * abs(phi_val)],
                    [0.0, 0.0, 1.0, -1.0],
                    [0.0, 0.0, 0.0, 1.0],
                ]
            )

        s = nondimensionalize(net)
        raw = jacobian(kappa, phi)
        scaled = jacobian(kappa * s.flow**2 / s.squared_pressure, phi / s.flow)
        assert np.linalg.cond(scaled) < np.linalg.cond(raw)
