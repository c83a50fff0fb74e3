"""Shipped case-study network configurations.

``single_pipe`` is a slack source, a compressor and one pipe feeding a load
of 250 kg/s with an uncertain increment on [-50, 50] kg/s (uniform by
default; ``single_pipe_truncnormal`` carries the truncated normal variant
with zero mean and a standard deviation a third of the half-width).
``eight_node`` is an 8-node system with 5 pipes, 3 compressor stations, an
optimized withdrawal and an uncertain withdrawal on separate nodes.

Slack pressures, pressure bounds, compressor ratio limits, nominal loads and
uncertainty intervals follow the case studies these configs reproduce; pipe
dimensions and compressor coefficients are representative placeholders chosen
to make all shipped scenarios feasible, so tests should rely on structural
properties rather than exact pressures.
"""

from importlib import resources

from gasflow.network import Network, parse_network

NAMES = ("single_pipe", "single_pipe_truncnormal", "eight_node")


def config_text(name: str) -> str:
    """Raw JSON text of a shipped configuration."""
    if name not in NAMES:
        raise KeyError(f"unknown config {name!r}; available: {', '.join(NAMES)}")
    return resources.files(__package__).joinpath(f"{name}.json").read_text()


def load(name: str) -> Network:
    """Parse a shipped configuration into a Network."""
    return parse_network(config_text(name))
