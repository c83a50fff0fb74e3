"""Assembly of the deterministic and chance-constrained optimal gas flow NLPs.

Both problems share one variable convention.  Compressor ratios are single
decisions shared across all stochastic cells.  Optimized withdrawals and
injections are per-cell (recourse) decisions priced in expectation, which is
what makes the per-cell first-order identity between the balance dual and the
nomination-bound dual hold cell by cell.  Squared pressures and edge flows are
per-cell states; the slack node's squared pressure is a constant, its
injection a free per-cell variable whose balance row therefore carries a zero
multiplier.

The minimum-pressure chance constraint at flagged nodes is expressed with a
one-sided quadratic penalty expanded in the cubic spline basis of the
stochastic grid: penalty values are collocated at the Greville points of the
basis (squared pressure between cell centers comes from the cubic interpolant
of the per-cell values) and the expectation row bounds the integral of the
expansion by the acceptable level.  Internally the expansion coefficients are
stored divided by the penalty curvature so the Jacobian stays well scaled for
any curvature; reported coefficients are rescaled back.

The friction nonlinearity ``phi * |phi|`` is smoothed to
``phi * sqrt(phi^2 + delta^2)`` so the problem is twice differentiable; the
steady simulation solver keeps the exact term, and the smoothing error is far
below the cross-check tolerances at the default delta.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from gasflow.network import Network, Node, NodeKind, incidence
from gasflow.nlp import NlpOptions, NlpProblem, NlpSolution, SolveStatus, solve
from gasflow.steady import Scaling, SteadySolveError, nondimensionalize, solve_steady
from gasflow.stochastic import StochasticGrid, build_grid

log = logging.getLogger("gasflow.ogf")


class OgfError(ValueError):
    """Problem assembly failure (unsupported structure or bad configuration)."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Chance-penalty curvature and flow-smoothing width.

    ``gamma`` is the curvature of the one-sided quadratic penalty in
    nondimensional squared-pressure units: it fixes what one unit of the
    violation budget epsilon means physically.  ``delta`` is the friction
    smoothing width in kg/s.

    The bare penalty has a curvature jump at zero shortfall.  Setting
    ``blend_width`` replaces it within ``|z| <= blend_width`` by the quartic
    ``(z + w)^4 / (16 w^2)``, which spreads the jump over the blend interval
    at the cost of a pointwise error of at most ``w^2/16``.  Off by default.
    """

    gamma: float = 1.0
    delta: float = 1e-3
    blend_width: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise OgfError("penalty curvature gamma must be positive")
        if self.delta < 0:
            raise OgfError("smoothing width delta must be nonnegative")
        if self.blend_width < 0:
            raise OgfError("blend width must be nonnegative")

    def shape(self, z):
        """Penalty shape (curvature-free): value, slope and curvature at z."""
        z = np.asarray(z, dtype=float)
        w = self.blend_width
        if w == 0.0:
            pos = np.maximum(z, 0.0)
            return pos * pos, 2.0 * pos, 2.0 * (z > 0.0)
        v = np.where(z >= w, z * z, 0.0)
        dv = np.where(z >= w, 2.0 * z, 0.0)
        ddv = np.where(z >= w, 2.0, 0.0)
        mid = (z > -w) & (z < w)
        s = z + w
        v = np.where(mid, s**4 / (16.0 * w * w), v)
        dv = np.where(mid, s**3 / (4.0 * w * w), dv)
        ddv = np.where(mid, 3.0 * s**2 / (4.0 * w * w), ddv)
        return v, dv, ddv


@dataclass
class CcLayout:
    """Index maps from network entities to NLP variables and constraint rows.

    The deterministic problem is the single-cell special case (K = 1, no
    chance machinery).  All index arrays address the flat variable vector of
    the assembled :class:`NlpProblem`; ``-1`` marks the slack node's squared
    pressure, which is a constant rather than a variable.
    """

    net: Network
    scaling: Scaling
    penalty: PenaltyConfig
    grids: dict[str, StochasticGrid]
    K: int
    cell_mass: np.ndarray
    cell_omega: np.ndarray  # uncertain-node increment per cell (kg/s)
    alpha_idx: dict[str, int]
    d_idx: dict[str, np.ndarray]
    s_idx: dict[str, np.ndarray]
    pi_idx: np.ndarray  # (K, nv), -1 at the slack column
    phi_idx: np.ndarray  # (K, ne)
    qs_idx: np.ndarray  # (K,)
    a_idx: dict[str, np.ndarray]
    t_idx: dict[str, int]
    pipe_rows: np.ndarray  # (K, n_pipes)
    comp_rows: np.ndarray  # (K, n_comps)
    bal_rows: np.ndarray  # (K, nv)
    colloc_rows: dict[str, np.ndarray]
    cc_rows: dict[str, int]
    epsilon: dict[str, float]
    f_scale: float
    n: int
    m: int
    base_withdrawal: dict[str, float]  # fixed nodal loads after any override

    @property
    def chance_nodes(self) -> list[str]:
        return sorted(self.cc_rows)

    @property
    def deterministic(self) -> bool:
        return not self.grids


def _chance_nodes(net: Network) -> list[Node]:
    out = []
    for n in net.nodes:
        if n.uncertainty is not None or n.epsilon is not None:
            if n.kind is not NodeKind.FLOW:
                raise OgfError(f"node {n.id!r}: chance relaxation requires a flow node")
            out.append(n)
    return out


def _objective_scale(net: Network, scaling: Scaling) -> float:
    cands = [1.0]
    for n in net.nodes:
        cands.append(abs(n.demand_price) * scaling.flow)
        cands.append(abs(n.supply_price) * scaling.flow)
    for c in net.compressors:
        cands.append(c.eta * scaling.flow * (c.alpha_max**c.m - 1.0))
    return max(cands)


def _assemble(
    net: Network,
    grids: dict[str, StochasticGrid] | None,
    penalty: PenaltyConfig,
    loads: dict[str, float] | None = None,
) -> tuple[NlpProblem, CcLayout]:
    """Shared assembler; ``grids`` empty/None builds the deterministic problem."""
    grids = dict(grids) if grids else {}
    scaling = nondimensionalize(net)
    nodes, edges = net.nodes, net.edges
    nv, ne = len(nodes), len(edges)
    n_pipe, n_comp = len(net.pipes), len(net.compressors)
    idx = net.node_index

    uncertain = [n for n in nodes if n.uncertainty is not None]
    if grids:
        if len(uncertain) != 1:
            raise OgfError(
                "the chance-constrained problem supports exactly one uncertain node; "
                f"found {len(uncertain)}"
            )
        unc_node = uncertain[0]
        if unc_node.id not in grids:
            raise OgfError(f"no stochastic grid supplied for uncertain node {unc_node.id!r}")
        grid = grids[unc_node.id]
        K = grid.K
        cell_mass = grid.cell_mass.copy()
        cell_omega = grid.collocation_points.copy()
        chance = _chance_nodes(net)
        for cn in chance:
            if cn.epsilon is None:
                raise OgfError(
                    f"node {cn.id!r}: chance-relaxed minimum pressure requires epsilon"
                )
    else:
        K = 1
        cell_mass = np.ones(1)
        cell_omega = np.zeros(1)
        chance = []
        grid = None
        unc_node = None

    flow_sc = scaling.flow
    pi_sc = scaling.squared_pressure
    f_scale = _objective_scale(net, scaling)
    gamma = penalty.gamma
    delta_nd = penalty.delta / flow_sc

    slack = idx[net.slack_node.id]
    pi_slack_nd = net.slack_node.slack_pressure**2 / pi_sc

    opt_d = [n for n in nodes if n.demand_optimized]
    opt_s = [n for n in nodes if n.supply_optimized]
    chance_ids = [n.id for n in chance]

    # ---- variable layout -------------------------------------------------
    pos = 0
    alpha_idx = {c.id: pos + i for i, c in enumerate(net.compressors)}
    pos += n_comp
    d_idx = {}
    for n in opt_d:
        d_idx[n.id] = np.arange(pos, pos + K)
        pos += K
    s_idx = {}
    for n in opt_s:
        s_idx[n.id] = np.arange(pos, pos + K)
        pos += K
    free_nodes = np.array([j for j in range(nv) if j != slack], dtype=int)
    free_rank = np.full(nv, -1, dtype=int)
    free_rank[free_nodes] = np.arange(nv - 1)
    stride = (nv - 1) + ne + 1
    state_base = pos
    pi_idx = np.full((K, nv), -1, dtype=int)
    for k in range(K):
        pi_idx[k, free_nodes] = state_base + k * stride + free_rank[free_nodes]
    phi_idx = state_base + (nv - 1) + np.arange(ne)[None, :] + stride * np.arange(K)[:, None]
    qs_idx = state_base + (nv - 1) + ne + stride * np.arange(K)
    pos += K * stride
    a_idx = {}
    t_idx = {}
    for cid in sorted(chance_ids):
        nb = grids[unc_node.id].n_basis if grids else 1
        a_idx[cid] = np.arange(pos, pos + nb)
        pos += nb
        t_idx[cid] = pos
        pos += 1
    n_var = pos

    # ---- constraint rows ---------------------------------------------------
    row = 0
    per_cell = n_pipe + n_comp + nv
    pipe_rows = np.arange(n_pipe)[None, :] + per_cell * np.arange(K)[:, None]
    comp_rows = n_pipe + np.arange(n_comp)[None, :] + per_cell * np.arange(K)[:, None]
    bal_rows = n_pipe + n_comp + np.arange(nv)[None, :] + per_cell * np.arange(K)[:, None]
    row += per_cell * K
    colloc_rows = {}
    cc_rows = {}
    for cid in sorted(chance_ids):
        nb = a_idx[cid].size
        colloc_rows[cid] = np.arange(row, row + nb)
        row += nb
        cc_rows[cid] = row
        row += 1
    n_con = row

    # ---- static data --------------------------------------------------------
    kappa_nd = net.kappa()[:n_pipe] * flow_sc**2 / pi_sc
    pipe_from = np.array([idx[p.from_node] for p in net.pipes], dtype=int)
    pipe_to = np.array([idx[p.to_node] for p in net.pipes], dtype=int)
    comp_from = np.array([idx[c.from_node] for c in net.compressors], dtype=int)
    comp_to = np.array([idx[c.to_node] for c in net.compressors], dtype=int)
    edge_from = np.concatenate([pipe_from, comp_from]).astype(int)
    edge_to = np.concatenate([pipe_to, comp_to]).astype(int)
    comp_m = np.array([c.m for c in net.compressors])
    comp_alpha_max = np.array([c.alpha_max for c in net.compressors])
    eta_nd = np.array([c.eta for c in net.compressors]) * flow_sc / f_scale

    loads = dict(loads or {})
    for key in loads:
        if key not in idx:
            raise OgfError(f"load override references unknown node {key!r}")
    base_q = np.array(
        [loads.get(n.id, n.base_withdrawal) for n in nodes], dtype=float
    )
    r_cells = np.zeros((K, nv))
    if grids:
        r_cells[:, idx[unc_node.id]] = cell_omega
    q_cells_nd = (base_q[None, :] + r_cells) / flow_sc
    q_cells_nd[:, slack] = 0.0  # slack withdrawal is the qs variable

    # expected economic value of fixed priced flows (constant in the objective)
    econ_const = 0.0
    for n in nodes:
        d_fixed = 0.0 if n.demand_optimized else n.demand
        s_fixed = 0.0 if n.supply_optimized else n.supply
        if n.id in loads and not n.demand_optimized:
            d_fixed = max(loads[n.id], 0.0)
            s_fixed = max(-loads[n.id], 0.0)
        r_mean = n.uncertainty.measure_mean() if (grids and n.uncertainty) else 0.0
        econ_const += n.demand_price * (d_fixed + r_mean) - n.supply_price * s_fixed
    econ_const_nd = econ_const / f_scale

    price_d_nd = {n.id: n.demand_price * flow_sc / f_scale for n in opt_d}
    price_s_nd = {n.id: n.supply_price * flow_sc / f_scale for n in opt_s}

    # chance machinery (per chance node)
    cc_static: dict[str, dict] = {}
    for cid in sorted(chance_ids):
        cn = net.node(cid)
        g = grids[unc_node.id]
        W = g.interpolation_weights(g.greville)  # (nb, K)
        B = g.collocation_matrix()  # (nb, nb)
        I_vec = g.basis_integrals  # (nb,)
        cc_static[cid] = {
            "W": W,
            "B": B,
            "I": I_vec,
            "pimin_nd": cn.pressure_min**2 / pi_sc,
            "col": idx[cid],
            "epsilon": cn.epsilon,
        }

    # ---- bounds --------------------------------------------------------------
    lower = np.full(n_var, -np.inf)
    upper = np.full(n_var, np.inf)
    for i, c in enumerate(net.compressors):
        lower[alpha_idx[c.id]] = 1.0
        upper[alpha_idx[c.id]] = c.alpha_max
    for n in opt_d:
        lower[d_idx[n.id]] = 0.0
        upper[d_idx[n.id]] = n.demand_max / flow_sc if math.isfinite(n.demand_max) else np.inf
    for n in opt_s:
        lower[s_idx[n.id]] = 0.0
        upper[s_idx[n.id]] = n.supply_max / flow_sc if math.isfinite(n.supply_max) else np.inf
    for j, n in enumerate(nodes):
        if j == slack:
            continue
        cols = pi_idx[:, j]
        relaxed = n.id in chance_ids
        lower[cols] = 0.0 if relaxed else n.pressure_min**2 / pi_sc
        upper[cols] = n.pressure_max**2 / pi_sc
    for cid in sorted(chance_ids):
        lower[t_idx[cid]] = 0.0

    # ---- evaluation helpers ---------------------------------------------------
    def gather(x):
        alpha = np.array([x[alpha_idx[c.id]] for c in net.compressors])
        Pi = x[np.maximum(pi_idx, 0)]
        Pi[:, slack] = pi_slack_nd
        phi = x[phi_idx]
        return alpha, Pi, phi

    def smooth(phi):
        return np.sqrt(phi * phi + delta_nd * delta_nd)

    def q_all(x):
        q = q_cells_nd.copy()
        for nid, cols in d_idx.items():
            q[:, idx[nid]] += x[cols]
        for nid, cols in s_idx.items():
            q[:, idx[nid]] -= x[cols]
        q[:, slack] = x[qs_idx]
        return q

    def objective(x):
        alpha, Pi, phi = gather(x)
        val = 0.0
        if n_comp:
            s_phi = smooth(phi[:, n_pipe:])
            exp_flow = cell_mass @ s_phi  # (n_comp,)
            val += float(np.sum(eta_nd * (alpha**comp_m - 1.0) * exp_flow))
        for nid, cols in d_idx.items():
            val -= price_d_nd[nid] * float(cell_mass @ x[cols])
        for nid, cols in s_idx.items():
            val += price_s_nd[nid] * float(cell_mass @ x[cols])
        return val - econ_const_nd

    def gradient(x):
        alpha, Pi, phi = gather(x)
        g = np.zeros(n_var)
        if n_comp:
            phi_c = phi[:, n_pipe:]
            s_phi = smooth(phi_c)
            exp_flow = cell_mass @ s_phi
            for i, c in enumerate(net.compressors):
                g[alpha_idx[c.id]] = (
                    eta_nd[i] * comp_m[i] * alpha[i] ** (comp_m[i] - 1.0) * exp_flow[i]
                )
            coef = eta_nd * (alpha**comp_m - 1.0)  # (n_comp,)
            g_phi = coef[None, :] * cell_mass[:, None] * (phi_c / s_phi)
            g[phi_idx[:, n_pipe:]] += g_phi
        for nid, cols in d_idx.items():
            g[cols] = -price_d_nd[nid] * cell_mass
        for nid, cols in s_idx.items():
            g[cols] = price_s_nd[nid] * cell_mass
        return g

    A_dense = incidence(net).toarray()  # (nv, ne)

    def constraints(x):
        alpha, Pi, phi = gather(x)
        c = np.empty(n_con)
        phi_p = phi[:, :n_pipe]
        c[pipe_rows] = (
            Pi[:, pipe_to] - Pi[:, pipe_from] + kappa_nd[None, :] * phi_p * smooth(phi_p)
        )
        c[comp_rows] = Pi[:, comp_to] - alpha[None, :] * Pi[:, comp_from]
        inflow = phi @ A_dense.T  # (K, nv)
        c[bal_rows] = inflow - q_all(x)
        for cid in sorted(chance_ids):
            st = cc_static[cid]
            z = st["pimin_nd"] - st["W"] @ Pi[:, st["col"]]
            v, _, _ = penalty.shape(z)
            c[colloc_rows[cid]] = v - st["B"] @ x[a_idx[cid]]
            c[cc_rows[cid]] = gamma * (st["I"] @ x[a_idx[cid]]) + x[t_idx[cid]] - st["epsilon"]
        return c

    def jacobian(x):
        alpha, Pi, phi = gather(x)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.asarray(r, dtype=int).ravel())
            cols.append(np.asarray(c, dtype=int).ravel())
            vals.append(np.asarray(v, dtype=float).ravel())

        # pipes
        if n_pipe:
            to_cols = pi_idx[:, pipe_to]
            mask = to_cols >= 0
            add(pipe_rows[mask], to_cols[mask], np.ones(mask.sum()))
            fr_cols = pi_idx[:, pipe_from]
            mask = fr_cols >= 0
            add(pipe_rows[mask], fr_cols[mask], -np.ones(mask.sum()))
            phi_p = phi[:, :n_pipe]
            s_p = smooth(phi_p)
            dphi = kappa_nd[None, :] * (s_p + phi_p**2 / s_p)
            add(pipe_rows, phi_idx[:, :n_pipe], dphi)
        # compressors
        if n_comp:
            to_cols = pi_idx[:, comp_to]
            mask = to_cols >= 0
            add(comp_rows[mask], to_cols[mask], np.ones(mask.sum()))
            fr_cols = pi_idx[:, comp_from]
            mask = fr_cols >= 0
            vals_fr = -np.broadcast_to(alpha[None, :], (K, n_comp))
            add(comp_rows[mask], fr_cols[mask], vals_fr[mask])
            a_cols = np.array([alpha_idx[c.id] for c in net.compressors])
            add(
                comp_rows,
                np.broadcast_to(a_cols[None, :], (K, n_comp)),
                -Pi[:, comp_from],
            )
        # balances
        add(bal_rows[:, edge_to], phi_idx, np.ones((K, ne)))
        add(bal_rows[:, edge_from], phi_idx, -np.ones((K, ne)))
        for nid, vcols in d_idx.items():
            add(bal_rows[:, idx[nid]], vcols, -np.ones(K))
        for nid, vcols in s_idx.items():
            add(bal_rows[:, idx[nid]], vcols, np.ones(K))
        add(bal_rows[:, slack], qs_idx, -np.ones(K))
        # chance blocks
        for cid in sorted(chance_ids):
            st = cc_static[cid]
            z = st["pimin_nd"] - st["W"] @ Pi[:, st["col"]]
            _, dv, _ = penalty.shape(z)
            nb = st["B"].shape[0]
            pi_cols = pi_idx[:, st["col"]]  # (K,)
            dpi = -dv[:, None] * st["W"]  # (nb, K)
            add(
                np.repeat(colloc_rows[cid], K),
                np.tile(pi_cols, nb),
                dpi,
            )
            add(
                np.repeat(colloc_rows[cid], nb),
                np.tile(a_idx[cid], nb),
                -st["B"],
            )
            add(np.full(nb, cc_rows[cid]), a_idx[cid], gamma * st["I"])
            add([cc_rows[cid]], [t_idx[cid]], [1.0])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        return sp.coo_matrix((v, (r, c)), shape=(n_con, n_var)).tocsr()

    def hessian(x, y, obj_factor):
        alpha, Pi, phi = gather(x)
        H = np.zeros((n_var, n_var))
        phi_c = phi[:, n_pipe:]
        s_c = smooth(phi_c) if n_comp else None
        if n_comp and obj_factor != 0.0:
            coef = eta_nd * (alpha**comp_m - 1.0)
            d2_phi = obj_factor * coef[None, :] * cell_mass[:, None] * (
                delta_nd**2 / s_c**3
            )
            cols = phi_idx[:, n_pipe:]
            H[cols.ravel(), cols.ravel()] += d2_phi.ravel()
            a_cols = np.array([alpha_idx[c.id] for c in net.compressors])
            cross = (
                obj_factor
                * (eta_nd * comp_m * alpha ** (comp_m - 1.0))[None, :]
                * cell_mass[:, None]
                * (phi_c / s_c)
            )
            np.add.at(H, (np.broadcast_to(a_cols[None, :], (K, n_comp)).ravel(), cols.ravel()), cross.ravel())
            np.add.at(H, (cols.ravel(), np.broadcast_to(a_cols[None, :], (K, n_comp)).ravel()), cross.ravel())
            exp_flow = cell_mass @ s_c
            d2_alpha = obj_factor * eta_nd * comp_m * (comp_m - 1.0) * alpha ** (comp_m - 2.0) * exp_flow
            H[a_cols, a_cols] += d2_alpha
        if n_pipe:
            phi_p = phi[:, :n_pipe]
            s_p = smooth(phi_p)
            y_pipe = y[pipe_rows]
            d2 = y_pipe * kappa_nd[None, :] * (3.0 * phi_p / s_p - phi_p**3 / s_p**3)
            cols = phi_idx[:, :n_pipe]
            np.add.at(H, (cols.ravel(), cols.ravel()), d2.ravel())
        if n_comp:
            y_comp = y[comp_rows]  # (K, n_comp)
            a_cols = np.array([alpha_idx[c.id] for c in net.compressors])
            fr_cols = pi_idx[:, comp_from]  # (K, n_comp)
            mask = fr_cols >= 0
            rr = np.broadcast_to(a_cols[None, :], (K, n_comp))[mask]
            cc = fr_cols[mask]
            vv = -y_comp[mask]
            np.add.at(H, (rr, cc), vv)
            np.add.at(H, (cc, rr), vv)
        for cid in sorted(chance_ids):
            st = cc_static[cid]
            z = st["pimin_nd"] - st["W"] @ Pi[:, st["col"]]
            _, _, ddv = penalty.shape(z)
            y_g = y[colloc_rows[cid]]
            block = st["W"].T @ ((ddv * y_g)[:, None] * st["W"])  # (K, K)
            pi_cols = pi_idx[:, st["col"]]
            H[np.ix_(pi_cols, pi_cols)] += block
        return H

    problem = NlpProblem(
        n=n_var,
        m=n_con,
        objective=objective,
        gradient=gradient,
        constraints=constraints,
        jacobian=jacobian,
        lower=lower,
        upper=upper,
        hessian=hessian,
        name="ogf-cc" if grids else "ogf-det",
    )
    layout = CcLayout(
        net=net,
        scaling=scaling,
        penalty=penalty,
        grids=grids,
        K=K,
        cell_mass=cell_mass,
        cell_omega=cell_omega,
        alpha_idx=alpha_idx,
        d_idx=d_idx,
        s_idx=s_idx,
        pi_idx=pi_idx,
        phi_idx=phi_idx,
        qs_idx=qs_idx,
        a_idx=a_idx,
        t_idx=t_idx,
        pipe_rows=pipe_rows,
        comp_rows=comp_rows,
        bal_rows=bal_rows,
        colloc_rows=colloc_rows,
        cc_rows=cc_rows,
        epsilon={cid: net.node(cid).epsilon for cid in chance_ids},
        f_scale=f_scale,
        n=n_var,
        m=n_con,
        base_withdrawal={n.id: float(base_q[j]) for j, n in enumerate(nodes)},
    )
    return problem, layout


def assemble_deterministic(
    net: Network, loads: dict[str, float] | None = None, penalty: PenaltyConfig | None = None
) -> tuple[NlpProblem, CcLayout]:
    """Deterministic optimal gas flow as an NLP with hard pressure boxes.

    ``loads`` optionally overrides fixed nodal withdrawals (kg/s), e.g. to
    solve at the mean of an uncertain load.  Uncertainty specs are ignored.
    """
    return _assemble(net, None, penalty or PenaltyConfig(), loads=loads)


def assemble_chance_constrained(
    net: Network,
    grids: dict[str, StochasticGrid],
    penalty: PenaltyConfig | None = None,
) -> tuple[NlpProblem, CcLayout]:
    """Chance-constrained optimal gas flow over the stochastic grid.

    Exactly one node may carry an uncertainty spec (1-D stochastic space).
    Nodes flagged with an epsilon keep their maximum-pressure boxes per cell
    but trade the minimum-pressure box for the expected-penalty budget; all
    other nodes keep hard boxes in every cell.
    """
    if not grids:
        raise OgfError("chance-constrained assembly requires a stochastic grid")
    return _assemble(net, grids, penalty or PenaltyConfig())


@dataclass
class CcSolution:
    """Decoded optimal gas flow solution in physical units.

    Per-cell arrays are indexed like the stochastic grid cells.  ``lambda_q``
    holds the nodal balance duals (currency per kg/s, the marginal system cost
    of one extra unit of withdrawal at that node in that cell), ``lambda_d``
    and ``lambda_s`` the nomination-bound duals per cell, ``lambda_cc`` the
    shadow price of the violation budget.
    """

    status: SolveStatus
    objective: float
    expected_compressor_power: float
    expected_economic_value: float
    alpha: dict[str, float]
    d: dict[str, np.ndarray]
    s: dict[str, np.ndarray]
    Pi: np.ndarray  # (K, nv) Pa^2
    phi: np.ndarray  # (K, ne) kg/s
    slack_injection: np.ndarray  # (K,) kg/s
    lambda_q: dict[str, np.ndarray]
    lambda_d: dict[str, np.ndarray]
    lambda_s: dict[str, np.ndarray]
    lambda_cc: dict[str, float]
    a_coeff: dict[str, np.ndarray]
    sfv_expectation: dict[str, float]
    epsilon: dict[str, float]
    cell_mass: np.ndarray
    cell_omega: np.ndarray
    kkt_residuals: dict[str, float]
    iterations: int
    layout: CcLayout
    nlp: NlpSolution

    @property
    def K(self) -> int:
        return self.cell_mass.size

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def pressure(self, node_id: str) -> np.ndarray:
        """Per-cell pressure at a node (Pa)."""
        j = self.layout.net.node_index[node_id]
        return np.sqrt(self.Pi[:, j])

    def flow(self, edge_id: str) -> np.ndarray:
        """Per-cell mass flow on an edge (kg/s)."""
        e = self.layout.net.edge_index[edge_id]
        return self.phi[:, e]

    def withdrawal(self, node_id: str) -> np.ndarray:
        """Per-cell total withdrawal at a node (kg/s)."""
        net = self.layout.net
        node = net.node(node_id)
        q = np.full(self.K, self.layout.base_withdrawal[node_id])
        if node.uncertainty is not None and not self.layout.deterministic:
            q = q + self.cell_omega
        if node_id in self.d:
            q = q + self.d[node_id]
        if node_id in self.s:
            q = q - self.s[node_id]
        return q

    def expected(self, values: np.ndarray) -> float:
        return float(self.cell_mass @ values)

    def lambda_q_per_mass(self, node_id: str) -> np.ndarray:
        """Balance dual normalized by cell mass (price per unit probability).

        The raw per-cell dual scales with the cell's probability mass; both
        views are emitted because plotted price distributions are ambiguous
        about the convention.
        """
        return self.lambda_q[node_id] / self.cell_mass

    def to_json_dict(self, mc_estimates: dict[str, dict] | None = None) -> dict:
        net = self.layout.net
        cells = []
        for k in range(self.K):
            cells.append(
                {
                    "omega": float(self.cell_omega[k]),
                    "mass": float(self.cell_mass[k]),
                    "pressures": {n.id: float(np.sqrt(self.Pi[k, j])) for j, n in enumerate(net.nodes)},
                    "flows": {e.id: float(self.phi[k, i]) for i, e in enumerate(net.edges)},
                    "lambda_q": {nid: float(v[k]) for nid, v in self.lambda_q.items()},
                    "lambda_q_per_mass": {
                        nid: float(v[k] / self.cell_mass[k])
                        for nid, v in self.lambda_q.items()
                    },
                    "lambda_d": {nid: float(v[k]) for nid, v in self.lambda_d.items()},
                    "withdrawals": {
                        nid: float(self.withdrawal(nid)[k])
                        for nid in list(self.d) + [n.id for n in net.uncertain_nodes]
                    },
                }
            )
        chance = []
        for nid in sorted(self.sfv_expectation):
            entry = {
                "node": nid,
                "epsilon": self.epsilon[nid],
                "sfv_expectation": self.sfv_expectation[nid],
                "lambda_cc": self.lambda_cc[nid],
            }
            if mc_estimates and nid in mc_estimates:
                entry["mc_estimate"] = mc_estimates[nid]
            chance.append(entry)
        return {
            "status": self.status.value,
            "objective": self.objective,
            "expected_compressor_power": self.expected_compressor_power,
            "expected_economic_value": self.expected_economic_value,
            "alpha": {cid: float(a) for cid, a in self.alpha.items()},
            "d": {nid: float(self.cell_mass @ v) for nid, v in self.d.items()},
            "s": {nid: float(self.cell_mass @ v) for nid, v in self.s.items()},
            "lambda_d": {nid: float(v.sum()) for nid, v in self.lambda_d.items()},
            "cells": cells,
            "chance": chance,
            "kkt_residuals": self.kkt_residuals,
        }


def decode(solution: NlpSolution, layout: CcLayout) -> CcSolution:
    """Map an NLP solution back to physical quantities and priced duals."""
    if solution.status is SolveStatus.INFEASIBLE:
        log.warning("decoding an infeasible NLP solution; values are indicative only")
    net = layout.net
    K, nv, ne = layout.K, len(net.nodes), len(net.edges)
    x, y = solution.x, solution.lambda_eq
    flow_sc = layout.scaling.flow
    pi_sc = layout.scaling.squared_pressure
    f_sc = layout.f_scale
    price_unit = f_sc / flow_sc  # currency per (kg/s) per unit of internal dual

    Pi = x[np.maximum(layout.pi_idx, 0)].copy()
    slack_col = net.node_index[net.slack_node.id]
    Pi[:, slack_col] = net.slack_node.slack_pressure**2 / pi_sc
    Pi = Pi * pi_sc
    phi = x[layout.phi_idx] * flow_sc
    qs = x[layout.qs_idx] * flow_sc

    alpha = {cid: float(x[i]) for cid, i in layout.alpha_idx.items()}
    d = {nid: x[cols] * flow_sc for nid, cols in layout.d_idx.items()}
    s = {nid: x[cols] * flow_sc for nid, cols in layout.s_idx.items()}

    lambda_q = {}
    for j, node in enumerate(net.nodes):
        lambda_q[node.id] = -y[layout.bal_rows[:, j]] * price_unit
    lambda_d = {nid: solution.lambda_hi[cols] * price_unit for nid, cols in layout.d_idx.items()}
    lambda_s = {nid: solution.lambda_hi[cols] * price_unit for nid, cols in layout.s_idx.items()}

    gamma = layout.penalty.gamma
    a_coeff = {}
    sfv = {}
    lambda_cc = {}
    for cid, cols in layout.a_idx.items():
        a_coeff[cid] = gamma * x[cols]
        grid = layout.grids[list(layout.grids)[0]] if layout.grids else None
        I_vec = grid.basis_integrals if grid is not None else np.ones(1)
        sfv[cid] = float(gamma * (I_vec @ x[cols]))
        lambda_cc[cid] = float(y[layout.cc_rows[cid]] * f_sc)

    # objective pieces in physical units
    mass = layout.cell_mass
    delta_nd = layout.penalty.delta / flow_sc
    n_pipe = len(net.pipes)
    wc = 0.0
    for i, c in enumerate(net.compressors):
        s_phi = np.sqrt((phi[:, n_pipe + i] / flow_sc) ** 2 + delta_nd**2) * flow_sc
        wc += c.eta * (alpha[c.id] ** c.m - 1.0) * float(mass @ s_phi)
    we = 0.0
    for node in net.nodes:
        bw = layout.base_withdrawal[node.id]  # effective fixed load after overrides
        d_val = float(mass @ d[node.id]) if node.id in d else max(bw, 0.0)
        s_val = float(mass @ s[node.id]) if node.id in s else max(-bw, 0.0)
        r_mean = (
            node.uncertainty.measure_mean()
            if (node.uncertainty is not None and not layout.deterministic)
            else 0.0
        )
        we += node.demand_price * (d_val + r_mean) - node.supply_price * s_val

    return CcSolution(
        status=solution.status,
        objective=float(solution.objective * f_sc),
        expected_compressor_power=wc,
        expected_economic_value=we,
        alpha=alpha,
        d=d,
        s=s,
        Pi=Pi,
        phi=phi,
        slack_injection=-qs,
        lambda_q=lambda_q,
        lambda_d=lambda_d,
        lambda_s=lambda_s,
        lambda_cc=lambda_cc,
        a_coeff=a_coeff,
        sfv_expectation=sfv,
        epsilon=dict(layout.epsilon),
        cell_mass=mass.copy(),
        cell_omega=layout.cell_omega.copy(),
        kkt_residuals=dict(solution.kkt_residuals),
        iterations=solution.iterations,
        layout=layout,
        nlp=solution,
    )


def _initial_point_deterministic(net: Network, layout: CcLayout) -> np.ndarray:
    """Feasible-ish start: flat pressures, spanning-tree flows at warm loads."""
    from gasflow.steady import _spanning_tree_flows

    idx = net.node_index
    flow_sc = layout.scaling.flow
    x0 = np.zeros(layout.n)
    for c in net.compressors:
        x0[layout.alpha_idx[c.id]] = min(1.0 + 0.05 * (c.alpha_max - 1.0), c.alpha_max)
    q = np.array([n.base_withdrawal for n in net.nodes], dtype=float)
    for nid, cols in layout.d_idx.items():
        node = net.node(nid)
        warm = min(node.demand, node.demand_max) if node.demand > 0 else min(
            100.0, node.demand_max
        )
        x0[cols] = warm / flow_sc
        q[idx[nid]] += warm
    for nid, cols in layout.s_idx.items():
        node = net.node(nid)
        warm = min(node.supply, node.supply_max)
        x0[cols] = warm / flow_sc
        q[idx[nid]] -= warm
    pi_slack_nd = net.slack_node.slack_pressure**2 / layout.scaling.squared_pressure
    for k in range(layout.K):
        cols = layout.pi_idx[k]
        x0[cols[cols >= 0]] = pi_slack_nd
    phi0 = _spanning_tree_flows(net, q / flow_sc)
    x0[layout.phi_idx] = phi0[None, :]
    x0[layout.qs_idx] = q.sum() / flow_sc
    return x0


def solve_deterministic(
    net: Network,
    loads: dict[str, float] | None = None,
    penalty: PenaltyConfig | None = None,
    options: NlpOptions | None = None,
) -> CcSolution:
    """Assemble and solve the deterministic optimal gas flow problem."""
    problem, layout = assemble_deterministic(net, loads=loads, penalty=penalty)
    x0 = _initial_point_deterministic(net, layout)
    sol = solve(problem, x0, options)
    return decode(sol, layout)


def initial_point_chance_constrained(
    net: Network,
    layout: CcLayout,
    det: CcSolution | None = None,
    options: NlpOptions | None = None,
) -> np.ndarray:
    """Warm start for the stochastic problem from the mean-load deterministic
    solution, refined per cell by the steady simulation where it converges."""
    grid = layout.grids[list(layout.grids)[0]]
    unc_id = grid.node_id
    mean_r = grid.spec.measure_mean()
    if det is None:
        loads = {unc_id: net.node(unc_id).base_withdrawal + mean_r}
        det = solve_deterministic(net, loads=loads, penalty=layout.penalty, options=options)

    idx = net.node_index
    flow_sc = layout.scaling.flow
    pi_sc = layout.scaling.squared_pressure
    x0 = np.zeros(layout.n)
    for cid, i in layout.alpha_idx.items():
        x0[i] = det.alpha[cid]
    for nid, cols in layout.d_idx.items():
        x0[cols] = det.d[nid][0] / flow_sc if nid in det.d else 0.0
    for nid, cols in layout.s_idx.items():
        x0[cols] = det.s[nid][0] / flow_sc if nid in det.s else 0.0

    alpha_vec = np.array([det.alpha[c.id] for c in net.compressors])
    base_q = np.array([n.base_withdrawal for n in net.nodes], dtype=float)
    for nid in layout.d_idx:
        base_q[idx[nid]] += det.d[nid][0]
    for nid in layout.s_idx:
        base_q[idx[nid]] -= det.s[nid][0]

    pi_det = det.Pi[0]
    phi_det = det.phi[0]
    for k in range(layout.K):
        q_k = base_q.copy()
        q_k[idx[unc_id]] += layout.cell_omega[k]
        try:
            st = solve_steady(net, alpha_vec, q_k, x0=(pi_det, phi_det))
            pi_k, phi_k = st.Pi, st.phi
        except SteadySolveError:
            pi_k, phi_k = pi_det, phi_det
        cols = layout.pi_idx[k]
        x0[cols[cols >= 0]] = (pi_k / pi_sc)[cols >= 0]
        x0[layout.phi_idx[k]] = phi_k / flow_sc
        x0[layout.qs_idx[k]] = q_k.sum() / flow_sc

    # consistent penalty expansion start
    for cid, cols in layout.a_idx.items():
        node = net.node(cid)
        j = idx[cid]
        grid_cc = grid
        W = grid_cc.interpolation_weights(grid_cc.greville)
        B = grid_cc.collocation_matrix()
        pi_cells = x0[np.maximum(layout.pi_idx[:, j], 0)]
        z = node.pressure_min**2 / pi_sc - W @ pi_cells
        v, _, _ = layout.penalty.shape(z)
        a0 = np.linalg.solve(B, v)
        x0[cols] = a0
        slack_t = node.epsilon - layout.penalty.gamma * float(grid_cc.basis_integrals @ a0)
        x0[layout.t_idx[cid]] = max(slack_t, 1e-3 * max(node.epsilon, 1e-8))
    return x0


def solve_chance_constrained(
    net: Network,
    K: int,
    penalty: PenaltyConfig | None = None,
    epsilon: float | None = None,
    options: NlpOptions | None = None,
    x0: "np.ndarray | NlpSolution | CcSolution | None" = None,
) -> CcSolution:
    """Build the grid for the uncertain node, assemble, warm start and solve.

    ``epsilon`` overrides the acceptable violation level on every
    chance-relaxed node.  ``x0`` may be a primal vector or a previous solution
    of a structurally identical problem (its multipliers then warm start the
    duals, e.g. along an epsilon sweep).
    """
    penalty = penalty or PenaltyConfig()
    uncertain = net.uncertain_nodes
    if len(uncertain) != 1:
        raise OgfError(
            f"chance-constrained solve needs exactly one uncertain node, found {len(uncertain)}"
        )
    if epsilon is not None:
        from dataclasses import replace as dc_replace

        for n in net.nodes:
            if n.uncertainty is not None or n.epsilon is not None:
                net = net.with_node(dc_replace(n, epsilon=float(epsilon)))
    unc = net.uncertain_nodes[0]
    if unc.epsilon is None:
        raise OgfError(f"uncertain node {unc.id!r} has no epsilon")
    grid = build_grid(unc.uncertainty, K, node_id=unc.id)
    problem, layout = assemble_chance_constrained(net, {unc.id: grid}, penalty)
    duals0 = None
    if isinstance(x0, CcSolution):
        x0 = x0.nlp
    if isinstance(x0, NlpSolution):
        if x0.x.size == problem.n and x0.lambda_eq.size == problem.m:
            duals0 = (x0.lambda_eq, x0.lambda_lo, x0.lambda_hi)
        x0 = x0.x if x0.x.size == problem.n else None
    if x0 is None:
        x0 = initial_point_chance_constrained(net, layout, options=options)
    sol = solve(problem, x0, options, duals0=duals0)
    return decode(sol, layout)
