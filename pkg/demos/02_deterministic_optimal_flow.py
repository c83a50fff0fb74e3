"""Deterministic optimal gas flow on both shipped systems.

The single-pipe case has a closed-form optimum: minimum compression pins the
delivery pressure at its floor, so the ratio is (Pi_min + kappa q^2)/Pi_slack.
The 8-node case optimizes the withdrawal at J3 against its bid price; the
balance dual at an interior optimum equals the price exactly.
"""

import math
from dataclasses import replace

from gasflow import configs
from gasflow.ogf import solve_deterministic

net = configs.load("single_pipe")
sol = solve_deterministic(net)
kappa = net.kappa()[0]
alpha_ref = (net.node("N3").pressure_min ** 2 + kappa * 250.0**2) / (
    net.slack_node.slack_pressure ** 2
)
print("single pipe, fixed 250 kg/s load:")
print(f"  solver ratio    = {sol.alpha['C1']:.6f}")
print(f"  closed form     = {alpha_ref:.6f}")
print(f"  delivery p      = {sol.pressure('N3')[0] / 1e6:.4f} MPa (floor 4.0)")
print(f"  compressor power term = {sol.expected_compressor_power:.3f}")

base = configs.load("eight_node")
net8 = base.with_node(replace(base.node("J3"), demand_max=math.inf))
sol8 = solve_deterministic(net8, loads={"J5": 80.0})
print("\neight node, uncapped optimized withdrawal at J3 (bid price 20):")
print(f"  d3 = {sol8.d['J3'][0]:.2f} kg/s")
print(f"  balance dual at J3 = {sol8.lambda_q['J3'][0]:.6f}  (price = 20)")
print("  ratios:", {k: round(v, 4) for k, v in sol8.alpha.items()})
print(f"  objective = {sol8.objective:.2f}"
      f"  (power {sol8.expected_compressor_power:.1f},"
      f" economic value {sol8.expected_economic_value:.1f})")
