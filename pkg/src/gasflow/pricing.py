"""Distributions of solved quantities and dual-based price diagnostics.

Per-cell values of pressures, flows, withdrawals and balance duals, together
with the cell masses, form discrete distributions over the uncertainty space.
Density estimates map inverse-CDF samples of the measure through the cubic
interpolant of the per-cell values and apply a Gaussian kernel with Silverman
bandwidth.  The module also verifies the first-order pricing identity tying
the balance dual and the nomination-bound dual to the bid price, and
estimates constraint-violation probabilities by Monte Carlo resimulation at
the solved controls.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from gasflow.network import Network
from gasflow.nlp import SolveStatus
from gasflow.ogf import CcSolution
from gasflow.steady import SteadySolveError, solve_steady
from gasflow.stochastic import StochasticGrid

log = logging.getLogger("gasflow.pricing")


class PricingError(ValueError):
    """Unknown selector or a solution unusable for the requested statistic."""


@dataclass
class ValueDistribution:
    """Distribution of a scalar quantity over the stochastic cells.

    ``support``/``mass`` give the discrete (per-cell value, cell mass) pairs.
    When density estimation is requested, ``density`` holds an evaluation grid
    and kernel density values that integrate to one on that grid.
    """

    support: np.ndarray
    mass: np.ndarray
    kind: str  # "discrete" or "density"
    density: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def mean(self) -> float:
        return float(self.mass @ self.support)

    def to_rows(self) -> list[tuple[float, float, float]]:
        """(omega-index-free) rows ``(support, mass)`` for CSV export."""
        return [(float(v), float(m)) for v, m in zip(self.support, self.mass)]


def _per_cell_values(solution: CcSolution, quantity: str) -> np.ndarray:
    try:
        kind, _, name = quantity.partition("@")
    except AttributeError:
        raise PricingError(f"bad selector {quantity!r}") from None
    net = solution.layout.net
    if kind == "pressure":
        if name not in net.node_index:
            raise PricingError(f"pressure selector: unknown node {name!r}")
        return solution.pressure(name)
    if kind == "flow":
        if name not in net.edge_index:
            raise PricingError(f"flow selector: unknown edge {name!r}")
        return solution.flow(name)
    if kind == "lambda_q":
        if name not in solution.lambda_q:
            raise PricingError(f"lambda_q selector: unknown node {name!r}")
        return solution.lambda_q[name]
    if kind == "lambda_q_per_mass":
        if name not in solution.lambda_q:
            raise PricingError(f"lambda_q_per_mass selector: unknown node {name!r}")
        return solution.lambda_q_per_mass(name)
    if kind == "lambda_d":
        if name not in solution.lambda_d:
            raise PricingError(f"lambda_d selector: node {name!r} has no optimized demand")
        return solution.lambda_d[name]
    if kind == "d":
        if name in solution.d:
            return solution.d[name]
        if name in net.node_index:
            return solution.withdrawal(name)
        raise PricingError(f"withdrawal selector: unknown node {name!r}")
    raise PricingError(
        f"unknown selector kind {kind!r} (use pressure@, flow@, lambda_q@, "
        "lambda_q_per_mass@, lambda_d@ or d@)"
    )


def distribution_of(
    solution: CcSolution,
    quantity: str,
    grid: StochasticGrid,
    n_samples: int = 10000,
    seed: int = 0,
    with_density: bool = True,
) -> ValueDistribution:
    """Distribution of a solved quantity over the uncertainty space.

    ``quantity`` selects ``pressure@node``, ``flow@edge``, ``lambda_q@node``,
    ``lambda_d@node`` or ``d@node``.  The discrete part pairs per-cell values
    with cell masses; the density part is a Silverman-bandwidth Gaussian KDE
    over ``n_samples`` inverse-CDF samples mapped through the cubic
    interpolant of the per-cell values.
    """
    values = _per_cell_values(solution, quantity)
    if values.shape != (grid.K,):
        raise PricingError(
            f"selector {quantity!r} produced {values.shape}, expected ({grid.K},)"
        )
    dist = ValueDistribution(support=values.copy(), mass=grid.cell_mass.copy(), kind="discrete")
    if not with_density:
        return dist
    rng = np.random.default_rng(seed)
    omega = grid.spec.ppf(rng.random(n_samples))
    samples = grid.value_interpolator(values)(omega)
    spread = float(np.ptp(samples))
    center = float(np.mean(samples))
    if spread < 1e-12 * max(1.0, abs(center)):
        # singular sample set: report a narrow bump at the common value
        bw = max(1e-9, 1e-6 * max(1.0, abs(center)))
        xs = np.linspace(center - 6 * bw, center + 6 * bw, 257)
        ys = np.exp(-0.5 * ((xs - center) / bw) ** 2) / (bw * math.sqrt(2 * math.pi))
    else:
        kde = gaussian_kde(samples, bw_method="silverman")
        bw = float(kde.factor * samples.std(ddof=1))
        xs = np.linspace(samples.min() - 3 * bw, samples.max() + 3 * bw, 513)
        ys = kde(xs)
    dist.kind = "density"
    dist.density = (xs, ys)
    return dist


@dataclass
class KktReport:
    """Per-cell check of the first-order identity at an optimized-demand node:
    balance dual plus nomination-bound dual equals price times cell mass."""

    node: str
    price: float
    reference: np.ndarray  # c_d * mass_k per cell
    residual: np.ndarray
    max_abs_residual: float
    at_kkt_point: bool
    passed: bool
    tolerance: float

    def to_json_dict(self) -> dict:
        return {
            "node": self.node,
            "price": self.price,
            "reference_per_cell": [float(v) for v in self.reference],
            "residual_per_cell": [float(v) for v in self.residual],
            "max_abs_residual": self.max_abs_residual,
            "at_kkt_point": self.at_kkt_point,
            "passed": self.passed,
            "tolerance": self.tolerance,
        }


def kkt_report(
    solution: CcSolution, net: Network, grid: StochasticGrid, tolerance: float = 1e-5
) -> list[KktReport]:
    """Verify lambda_q + lambda_d = price * cell_mass per cell, per optimized node.

    For uniform cell masses the reference is price / K.  Solutions that did
    not reach a KKT point are flagged; their residuals are informational.
    """
    reports = []
    at_kkt = solution.status is SolveStatus.OPTIMAL
    for nid in sorted(solution.d):
        node = net.node(nid)
        reference = node.demand_price * solution.cell_mass
        residual = solution.lambda_q[nid] + solution.lambda_d[nid] - reference
        max_abs = float(np.abs(residual).max())
        reports.append(
            KktReport(
                node=nid,
                price=node.demand_price,
                reference=reference,
                residual=residual,
                max_abs_residual=max_abs,
                at_kkt_point=at_kkt,
                passed=bool(at_kkt and max_abs <= tolerance),
                tolerance=tolerance,
            )
        )
    if not reports:
        raise PricingError("kkt_report requires at least one optimized demand node")
    return reports


@dataclass
class ViolationEstimate:
    """SFV and Monte-Carlo views of the chance constraint at one node."""

    node: str
    epsilon: float
    sfv_expectation: float
    mc_mean_penalty: float
    mc_penalty_se: float
    mc_violation_probability: float
    mc_violation_se: float
    n_samples: int
    n_failed: int

    def to_json_dict(self) -> dict:
        return {
            "node": self.node,
            "epsilon": self.epsilon,
            "sfv_expectation": self.sfv_expectation,
            "mc_mean_penalty": self.mc_mean_penalty,
            "mc_penalty_se": self.mc_penalty_se,
            "mc_violation_probability": self.mc_violation_probability,
            "mc_violation_se": self.mc_violation_se,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
        }


def violation_probability(
    solution: CcSolution,
    net: Network,
    grid: StochasticGrid,
    mc_samples: int = 10000,
    seed: int = 0,
) -> list[ViolationEstimate]:
    """Monte-Carlo revalidation of the chance constraint at fixed controls.

    Samples the uncertain withdrawal by inverse CDF, re-solves the exact
    steady physics per sample (optimized nominations follow the cubic
    interpolant of their per-cell values, clipped to their bounds), and
    reports the mean quadratic penalty and the violation frequency per
    chance-relaxed node with standard errors.  Samples whose steady solve
    fails are counted separately, never silently dropped.
    """
    layout = solution.layout
    if layout.deterministic:
        raise PricingError("violation_probability needs a chance-constrained solution")
    unc_id = grid.node_id
    idx = net.node_index
    gamma = layout.penalty.gamma
    pi_sc = layout.scaling.squared_pressure
    chance_ids = layout.chance_nodes

    rng = np.random.default_rng(seed)
    omega = np.sort(grid.spec.ppf(rng.random(mc_samples)))
    alpha_vec = np.array([solution.alpha[c.id] for c in net.compressors])
    d_interp = {
        nid: grid.value_interpolator(solution.d[nid]) for nid in solution.d
    }
    s_interp = {
        nid: grid.value_interpolator(solution.s[nid]) for nid in solution.s
    }
    d_bounds = {nid: net.node(nid).demand_max for nid in solution.d}
    s_bounds = {nid: net.node(nid).supply_max for nid in solution.s}

    base_q = np.array([n.base_withdrawal for n in net.nodes], dtype=float)
    penalties = {cid: np.empty(mc_samples) for cid in chance_ids}
    violated = {cid: np.zeros(mc_samples, dtype=bool) for cid in chance_ids}
    ok = np.ones(mc_samples, dtype=bool)

    warm = None
    for i, w in enumerate(omega):
        q = base_q.copy()
        q[idx[unc_id]] += w
        for nid, f in d_interp.items():
            q[idx[nid]] += float(np.clip(f(w), 0.0, d_bounds[nid]))
        for nid, f in s_interp.items():
            q[idx[nid]] -= float(np.clip(f(w), 0.0, s_bounds[nid]))
        try:
            st = solve_steady(net, alpha_vec, q, x0=warm)
            warm = (st.Pi, st.phi)
        except SteadySolveError:
            ok[i] = False
            continue
        for cid in chance_ids:
            node = net.node(cid)
            z = (node.pressure_min**2 - st.Pi[idx[cid]]) / pi_sc
            penalties[cid][i] = gamma * max(z, 0.0) ** 2
            violated[cid][i] = st.Pi[idx[cid]] < node.pressure_min**2

    n_ok = int(ok.sum())
    n_failed = mc_samples - n_ok
    if n_failed:
        log.warning("violation_probability: %d of %d steady solves failed", n_failed, mc_samples)
    out = []
    for cid in chance_ids:
        pen = penalties[cid][ok]
        vio = violated[cid][ok]
        mean_pen = float(pen.mean()) if n_ok else math.nan
        se_pen = float(pen.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
        p_vio = float(vio.mean()) if n_ok else math.nan
        se_vio = float(math.sqrt(max(p_vio * (1 - p_vio), 0.0) / n_ok)) if n_ok else math.nan
        out.append(
            ViolationEstimate(
                node=cid,
                epsilon=layout.epsilon[cid],
                sfv_expectation=solution.sfv_expectation[cid],
                mc_mean_penalty=mean_pen,
                mc_penalty_se=se_pen,
                mc_violation_probability=p_vio,
                mc_violation_se=se_vio,
                n_samples=mc_samples,
                n_failed=n_failed,
            )
        )
    return out
