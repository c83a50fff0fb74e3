"""Command-line harness: simulate, optimize, validate and price in one run.

Artifacts are written to the output directory as deterministic JSON/CSV files
(fixed key order, seeded sampling), so identical invocations produce
byte-identical outputs.  Verbosity is controlled by the ``GASFLOW_LOG``
environment variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from gasflow.network import Network, NetworkError, load_network
from gasflow.nlp import SolveStatus
from gasflow.ogf import (
    CcSolution,
    OgfError,
    PenaltyConfig,
    solve_chance_constrained,
    solve_deterministic,
)
from gasflow.pricing import (
    PricingError,
    distribution_of,
    kkt_report,
    violation_probability,
)
from gasflow.steady import SteadySolveError, solve_steady
from gasflow.stochastic import build_grid

log = logging.getLogger("gasflow.cli")

_MODES = ("simulate", "opt-det", "opt-cc", "validate", "prices")


@dataclass
class RunConfig:
    """One reproducible run: every knob that affects the outputs."""

    network_path: str
    mode: str = "opt-cc"
    cells: int = 50
    epsilon: float | None = None
    gamma: float = 1.0
    delta: float = 1e-3
    mc_samples: int = 10000
    seed: int = 0
    out_dir: str = "gasflow_out"
    qmax: dict[str, float] = field(default_factory=dict)
    epsilons: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "opt-cc" and self.cells < 4:
            raise ValueError("chance-constrained mode needs at least 4 cells")


def _json_dump(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_distribution_csvs(out: Path, tag: str, dist):
    with (out / f"{tag}_discrete.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "mass", "value"])
        for k, (v, m) in enumerate(zip(dist.support, dist.mass)):
            w.writerow([k, repr(float(m)), repr(float(v))])
    if dist.density is not None:
        xs, ys = dist.density
        with (out / f"{tag}_density.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid", "density"])
            for xv, yv in zip(xs, ys):
                w.writerow([repr(float(xv)), repr(float(yv))])


def _apply_qmax(net: Network, qmax: dict[str, float]) -> Network:
    from dataclasses import replace

    for nid, value in qmax.items():
        node = net.node(nid)
        net = net.with_node(replace(node, demand_max=value))
    return net


def _mean_loads(net: Network) -> dict[str, float]:
    loads = {}
    for n in net.uncertain_nodes:
        loads[n.id] = n.base_withdrawal + n.uncertainty.measure_mean()
    return loads


def _status_exit(status: SolveStatus) -> int:
    if status is SolveStatus.OPTIMAL:
        return 0
    if status is SolveStatus.MAX_ITER:
        return 2
    return 1


def _solve_cc(net: Network, config: RunConfig) -> CcSolution:
    penalty = PenaltyConfig(gamma=config.gamma, delta=config.delta)
    return solve_chance_constrained(
        net, K=config.cells, penalty=penalty, epsilon=config.epsilon
    )


def _cc_artifacts(net: Network, config: RunConfig, solution: CcSolution, out: Path):
    unc = net.uncertain_nodes[0]
    grid = build_grid(unc.uncertainty, config.cells, node_id=unc.id)
    estimates = violation_probability(
        solution, net, grid, mc_samples=config.mc_samples, seed=config.seed
    )
    mc_payload = {e.node: e.to_json_dict() for e in estimates}
    _json_dump(out / "solution.json", solution.to_json_dict(mc_estimates=mc_payload))
    _json_dump(out / "violation.json", {"estimates": [e.to_json_dict() for e in estimates]})
    if solution.d:
        reports = kkt_report(solution, net, grid)
        _json_dump(out / "kkt_report.json", {"reports": [r.to_json_dict() for r in reports]})
    quantities = []
    for cid in solution.layout.chance_nodes:
        quantities += [f"pressure@{cid}", f"lambda_q@{cid}", f"lambda_q_per_mass@{cid}"]
    for nid in sorted(solution.d):
        quantities += [f"d@{nid}", f"lambda_q@{nid}", f"lambda_d@{nid}"]
    for qty in quantities:
        dist = distribution_of(solution, qty, grid, seed=config.seed)
        _write_distribution_csvs(out, qty.replace("@", "_"), dist)
    return estimates


def _chance_slack(solution: CcSolution) -> float:
    slacks = [
        solution.epsilon[nid] - solution.sfv_expectation[nid]
        for nid in solution.sfv_expectation
    ]
    return max(slacks) if slacks else math.nan


def run(config: RunConfig) -> int:
    """Execute one mode and write its artifacts; returns the process exit code."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        net = load_network(config.network_path)
        net = _apply_qmax(net, config.qmax)

        if config.mode == "simulate":
            loads = _mean_loads(net)
            q = {n.id: loads.get(n.id, n.base_withdrawal) for n in net.nodes}
            state = solve_steady(net, None, q)
            payload = {
                "pressures": {n.id: float(state.pressure[i]) for i, n in enumerate(net.nodes)},
                "squared_pressures": {n.id: float(state.Pi[i]) for i, n in enumerate(net.nodes)},
                "flows": {e.id: float(state.phi[i]) for i, e in enumerate(net.edges)},
                "slack_injection": state.slack_injection,
                "residual_norm": state.residual_norm,
            }
            _json_dump(out / "steady_state.json", payload)
            print(f"simulate status=converged residual={state.residual_norm:.3e}")
            return 0

        if config.mode == "opt-det":
            if net.uncertain_nodes:
                log.warning(
                    "deterministic mode ignores uncertainty; solving at the mean load"
                )
                print("warning: uncertainty ignored, deterministic solve at mean load",
                      file=sys.stderr)
            solution = solve_deterministic(
                net,
                loads=_mean_loads(net),
                penalty=PenaltyConfig(gamma=config.gamma, delta=config.delta),
            )
            _json_dump(out / "solution.json", solution.to_json_dict())
            print(
                f"opt-det status={solution.status.value} objective={solution.objective:.6f}"
            )
            return _status_exit(solution.status)

        if config.mode in ("opt-cc", "validate", "prices"):
            if config.epsilons and config.mode == "opt-cc":
                return sweep(config, config.epsilons)
            solution = _solve_cc(net, config)
            estimates = _cc_artifacts(net, config, solution, out)
            slack = _chance_slack(solution)
            print(
                f"{config.mode} status={solution.status.value} "
                f"objective={solution.objective:.6f} max_chance_slack={slack:.3e}"
            )
            return _status_exit(solution.status)

        raise ValueError(f"unknown mode {config.mode!r}")
    except (NetworkError, OgfError, PricingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SteadySolveError as exc:
        print(f"error: steady solve failed: {exc}", file=sys.stderr)
        return 1


def sweep(config: RunConfig, epsilons: list[float]) -> int:
    """Chance-constrained solves over a list of violation levels.

    Writes ``sweep.csv`` ordered by epsilon; failed rows are recorded and the
    sweep continues.  Each row revalidates by Monte Carlo with the same seed
    so estimates are comparable across rows.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = load_network(config.network_path)
    net = _apply_qmax(net, config.qmax)
    penalty = PenaltyConfig(gamma=config.gamma, delta=config.delta)
    comp_ids = [c.id for c in net.compressors]
    header = (
        ["epsilon"]
        + [f"alpha:{cid}" for cid in comp_ids]
        + ["objective", "sfv_expectation", "mc_mean_penalty", "mc_violation_probability",
           "status"]
    )
    rows = []
    x_prev = None
    for eps in sorted(epsilons):
        try:
            solution = solve_chance_constrained(
                net, K=config.cells, penalty=penalty, epsilon=eps, x0=x_prev
            )
            x_prev = solution
            unc = net.uncertain_nodes[0]
            grid = build_grid(unc.uncertainty, config.cells, node_id=unc.id)
            est = violation_probability(
                solution, net, grid, mc_samples=config.mc_samples, seed=config.seed
            )
            chance = est[0] if est else None
            rows.append(
                [repr(eps)]
                + [repr(solution.alpha[cid]) for cid in comp_ids]
                + [
                    repr(solution.objective),
                    repr(max(solution.sfv_expectation.values())) if solution.sfv_expectation else "",
                    repr(chance.mc_mean_penalty) if chance else "",
                    repr(chance.mc_violation_probability) if chance else "",
                    solution.status.value,
                ]
            )
        except (NetworkError, OgfError, PricingError, SteadySolveError, ValueError) as exc:
            rows.append([repr(eps)] + [""] * len(comp_ids) + ["", "", "", "", f"error: {exc}"])
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"sweep rows={len(rows)} -> {out / 'sweep.csv'}")
    return 0


def _parse_qmax(values: list[str]) -> dict[str, float]:
    out = {}
    for item in values:
        if "=" not in item:
            raise ValueError(f"--qmax expects NODE=VALUE, got {item!r}")
        nid, _, raw = item.partition("=")
        out[nid] = math.inf if raw.lower() in ("inf", "infinity") else float(raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasflow",
        description="Chance-constrained steady-state optimal gas flow runs",
    )
    parser.add_argument(
        "command",
        nargs="?",
        choices=["simulate", "optimize", "validate", "prices", "sweep"],
        help="shorthand for --mode (optimize uses --mode det/cc)",
    )
    parser.add_argument("--network", required=True, help="network JSON path")
    parser.add_argument(
        "--mode",
        default=None,
        choices=list(_MODES) + ["det", "cc"],
        help="run mode (det/cc are aliases of opt-det/opt-cc)",
    )
    parser.add_argument("--cells", type=int, default=50, help="stochastic cell count K")
    parser.add_argument("--epsilon", type=float, default=None, help="violation level override")
    parser.add_argument(
        "--epsilons",
        default=None,
        help="comma-separated violation levels; triggers a sweep in cc mode",
    )
    parser.add_argument("--gamma", type=float, default=1.0, help="penalty curvature")
    parser.add_argument("--delta", type=float, default=1e-3, help="flow smoothing width kg/s")
    parser.add_argument("--mc-samples", type=int, default=10000, help="Monte-Carlo samples")
    parser.add_argument("--seed", type=int, default=0, help="sampling seed")
    parser.add_argument("--out", default="gasflow_out", help="output directory")
    parser.add_argument(
        "--qmax",
        action="append",
        default=[],
        metavar="NODE=VALUE",
        help="override a node's demand_max (VALUE may be 'inf'); repeatable",
    )
    return parser


def _resolve_mode(args) -> str:
    mode = args.mode
    if mode == "det":
        mode = "opt-det"
    if mode == "cc":
        mode = "opt-cc"
    if args.command == "simulate":
        return "simulate"
    if args.command == "validate":
        return "validate"
    if args.command == "prices":
        return "prices"
    if args.command in ("optimize", "sweep"):
        return mode or "opt-cc"
    return mode or "opt-cc"


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("GASFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        epsilons = (
            [float(tok) for tok in args.epsilons.split(",") if tok.strip()]
            if args.epsilons is not None
            else []
        )
        if args.command == "sweep" and args.epsilons is None:
            raise ValueError("sweep requires --epsilons")
        config = RunConfig(
            network_path=args.network,
            mode=_resolve_mode(args),
            cells=args.cells,
            epsilon=args.epsilon,
            gamma=args.gamma,
            delta=args.delta,
            mc_samples=args.mc_samples,
            seed=args.seed,
            out_dir=args.out,
            qmax=_parse_qmax(args.qmax),
            epsilons=epsilons,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "sweep" or (config.epsilons and config.mode == "opt-cc"):
        try:
            return sweep(config, config.epsilons)
        except (NetworkError, OgfError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
