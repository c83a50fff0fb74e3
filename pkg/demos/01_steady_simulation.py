"""Steady-state simulation of the shipped networks.

Solves the nonlinear flow equations at fixed compressor ratios and loads,
then walks the uncertain-load range of the single-pipe system to show how
the delivery pressure responds to withdrawal.
"""

import numpy as np

from gasflow import configs, solve_steady

net = configs.load("single_pipe")
print("single pipe:", ", ".join(n.id for n in net.nodes))
print(f"pipe resistance kappa = {net.kappa()[0]:.4e} Pa^2/(kg/s)^2")

state = solve_steady(net, {"C1": 1.2}, {"N3": 250.0})
print("\nratio 1.20, load 250 kg/s:")
for i, node in enumerate(net.nodes):
    print(f"  p({node.id}) = {state.pressure[i] / 1e6:7.4f} MPa")
print(f"  slack injection = {state.slack_injection:.1f} kg/s,"
      f" Newton iterations = {state.iterations}")

print("\ndelivery pressure over the uncertain withdrawal range:")
warm = None
for q in np.linspace(200.0, 300.0, 6):
    st = solve_steady(net, {"C1": 1.2}, {"N3": q}, x0=warm)
    warm = (st.Pi, st.phi)
    flag = "  <- below 4 MPa floor" if st.pressure_at("N3") < 4.0e6 else ""
    print(f"  q = {q:5.1f} kg/s  ->  p(N3) = {st.pressure_at('N3') / 1e6:7.4f} MPa{flag}")

net8 = configs.load("eight_node")
state8 = solve_steady(net8, None, {"J3": 200.0, "J5": 96.0})
print("\neight node network, all ratios 1.0, J3 = 200, J5 = 96 kg/s:")
for i, node in enumerate(net8.nodes):
    print(f"  p({node.id}) = {state8.pressure[i] / 1e6:7.4f} MPa")
print(f"  slack injection = {state8.slack_injection:.1f} kg/s")
