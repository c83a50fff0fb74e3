"""Steady-state network flow solver for fixed controls.

Solves the square system of pipe friction laws, compressor ratio relations
and nodal balances for given compressor ratios and withdrawals using a damped
Newton method on the nondimensionalized residual.  The slack node holds its
pressure; its injection floats and is recovered from the solved flows.  The
solver is the physics oracle behind Monte-Carlo validation, so it keeps the
exact ``phi*|phi|`` friction term (its derivative ``2|phi|`` is continuous and
needs no smoothing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gasflow.network import Network


class SteadySolveError(RuntimeError):
    """Newton failure or a nonphysical (negative squared pressure) solution."""

    def __init__(self, message: str, residual: float | None = None, node: str | None = None):
        super().__init__(message)
        self.residual = residual
        self.node = node


@dataclass(frozen=True)
class Scaling:
    """Nondimensionalization record: pressure (Pa), flow (kg/s), length (m)."""

    pressure: float
    flow: float
    length: float

    @property
    def squared_pressure(self) -> float:
        return self.pressure**2


def nondimensionalize(net: Network) -> Scaling:
    """Choose scales so the slack squared pressure maps to one and the largest
    scaled pipe resistance is exactly one."""
    p0 = net.slack_node.slack_pressure
    kappa = net.kappa()
    kmax = float(kappa.max()) if kappa.size and kappa.max() > 0 else 0.0
    if kmax > 0:
        flow = p0 / np.sqrt(kmax)
    else:
        demands = [abs(n.base_withdrawal) for n in net.nodes]
        flow = max(max(demands, default=0.0), 1.0)
    length = max((p.length for p in net.pipes), default=1.0)
    return Scaling(pressure=p0, flow=flow, length=length)


@dataclass
class SteadyState:
    """Physical solution of the steady flow equations.

    ``Pi`` is in node order (Pa^2), ``phi`` in edge order (kg/s, pipes then
    compressors, positive from -> to).  ``slack_injection`` is the inflow at
    the slack node that balances the network (kg/s).
    """

    net: Network
    Pi: np.ndarray
    phi: np.ndarray
    residual_norm: float
    iterations: int
    slack_injection: float
    residual_history: list[float] | None = None

    @property
    def pressure(self) -> np.ndarray:
        return np.sqrt(self.Pi)

    def pressure_at(self, node_id: str) -> float:
        return float(self.pressure[self.net.node_index[node_id]])

    def squared_pressure_at(self, node_id: str) -> float:
        return float(self.Pi[self.net.node_index[node_id]])

    def flow_at(self, edge_id: str) -> float:
        return float(self.phi[self.net.edge_index[edge_id]])


def _spanning_tree_flows(net: Network, q: np.ndarray) -> np.ndarray:
    """Initial flows: route each node's withdrawal along a BFS tree from the
    slack node; loop chords start at zero."""
    idx = net.node_index
    adjacency: dict[int, list[tuple[int, int, float]]] = {i: [] for i in range(len(net.nodes))}
    for k, e in enumerate(net.edges):
        i, j = idx[e.from_node], idx[e.to_node]
        adjacency[i].append((j, k, +1.0))
        adjacency[j].append((i, k, -1.0))
    root = idx[net.slack_node.id]
    parent_edge: dict[int, tuple[int, int, float]] = {}
    order = [root]
    seen = {root}
    for node in order:
        for nb, k, sign in adjacency[node]:
            if nb not in seen:
                seen.add(nb)
                parent_edge[nb] = (node, k, sign)
                order.append(nb)
    phi = np.zeros(len(net.edges))
    subtree = q.copy()
    subtree[root] = 0.0
    for node in reversed(order):
        if node == root:
            continue
        parent, k, sign = parent_edge[node]
        # sign +1 means the edge is oriented parent -> node
        phi[k] += sign * subtree[node]
        subtree[parent] += subtree[node]
    return phi


def solve_steady(
    net: Network,
    alpha: dict[str, float] | np.ndarray | None = None,
    q: dict[str, float] | np.ndarray | None = None,
    x0: tuple[np.ndarray, np.ndarray] | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> SteadyState:
    """Solve the steady flow equations at fixed compressor ratios and loads.

    Parameters
    ----------
    alpha : mapping or array
        Compressor ratios in compressor order (default all one).  Must lie in
        [1, alpha_max].
    q : mapping or array
        Nodal withdrawals in kg/s (positive = consumption).  The slack node's
        entry is ignored; its injection absorbs the imbalance.
    x0 : optional (Pi, phi) warm start in physical units.
    tol : nondimensional residual tolerance.

    Raises
    ------
    SteadySolveError
        If Newton stalls (reports the last residual) or the converged state
        has a nonpositive squared pressure (reports the node).
    """
    nv, ne = len(net.nodes), len(net.edges)
    npipe, ncomp = len(net.pipes), len(net.compressors)
    idx = net.node_index

    if alpha is None:
        alpha_vec = np.ones(ncomp)
    elif isinstance(alpha, dict):
        alpha_vec = np.array([alpha[c.id] for c in net.compressors], dtype=float)
    else:
        alpha_vec = np.asarray(alpha, dtype=float)
    for c, a in zip(net.compressors, alpha_vec):
        if not 1.0 - 1e-9 <= a <= c.alpha_max + 1e-9:
            raise SteadySolveError(
                f"compressor {c.id!r}: ratio {a} outside [1, {c.alpha_max}]", node=c.id
            )

    if q is None:
        q_vec = np.array([n.base_withdrawal for n in net.nodes])
    elif isinstance(q, dict):
        unknown = sorted(set(q) - set(idx))
        if unknown:
            raise SteadySolveError(f"withdrawals reference unknown node {unknown[0]!r}",
                                   node=unknown[0])
        q_vec = np.array([q.get(n.id, 0.0) for n in net.nodes], dtype=float)
    else:
        q_vec = np.asarray(q, dtype=float).copy()

    scaling = nondimensionalize(net)
    pi_scale = scaling.squared_pressure
    slack = idx[net.slack_node.id]
    pi_slack = net.slack_node.slack_pressure**2 / pi_scale
    kappa_nd = net.kappa() * scaling.flow**2 / pi_scale
    q_nd = q_vec / scaling.flow
    q_nd[slack] = 0.0

    pipe_from = np.array([idx[p.from_node] for p in net.pipes], dtype=int)
    pipe_to = np.array([idx[p.to_node] for p in net.pipes], dtype=int)
    comp_from = np.array([idx[c.from_node] for c in net.compressors], dtype=int)
    comp_to = np.array([idx[c.to_node] for c in net.compressors], dtype=int)

    # unknowns: Pi at non-slack nodes, then all edge flows
    free_nodes = np.array([j for j in range(nv) if j != slack], dtype=int)
    col_of_node = np.full(nv, -1, dtype=int)
    col_of_node[free_nodes] = np.arange(nv - 1)
    n_unknown = (nv - 1) + ne

    balance_nodes = free_nodes  # slack balance row dropped; injection recovered after
    edge_from = np.concatenate([pipe_from, comp_from])
    edge_to = np.concatenate([pipe_to, comp_to])

    if x0 is not None:
        pi_full = np.asarray(x0[0], dtype=float) / pi_scale
        phi = np.asarray(x0[1], dtype=float) / scaling.flow
    else:
        pi_full = np.full(nv, pi_slack)
        phi = _spanning_tree_flows(net, q_nd)

    def residual(pi_full: np.ndarray, phi: np.ndarray) -> np.ndarray:
        r = np.empty(npipe + ncomp + len(balance_nodes))
        phi_p = phi[:npipe]
        r[:npipe] = pi_full[pipe_to] - pi_full[pipe_from] + kappa_nd[:npipe] * phi_p * np.abs(phi_p)
        r[npipe : npipe + ncomp] = pi_full[comp_to] - alpha_vec * pi_full[comp_from]
        inflow = np.zeros(nv)
        np.add.at(inflow, edge_to, phi)
        np.subtract.at(inflow, edge_from, phi)
        r[npipe + ncomp :] = inflow[balance_nodes] - q_nd[balance_nodes]
        return r

    def jacobian(pi_full: np.ndarray, phi: np.ndarray) -> np.ndarray:
        J = np.zeros((n_unknown, n_unknown))
        for p in range(npipe):
            ci, cj = col_of_node[pipe_from[p]], col_of_node[pipe_to[p]]
            if cj >= 0:
                J[p, cj] += 1.0
            if ci >= 0:
                J[p, ci] -= 1.0
            J[p, (nv - 1) + p] = 2.0 * kappa_nd[p] * abs(phi[p])
        for c in range(ncomp):
            row = npipe + c
            ci, cj = col_of_node[comp_from[c]], col_of_node[comp_to[c]]
            if cj >= 0:
                J[row, cj] += 1.0
            if ci >= 0:
                J[row, ci] -= alpha_vec[c]
        for b, node in enumerate(balance_nodes):
            row = npipe + ncomp + b
            for k in range(ne):
                if edge_to[k] == node:
                    J[row, (nv - 1) + k] += 1.0
                if edge_from[k] == node:
                    J[row, (nv - 1) + k] -= 1.0
        return J

    pi_full[slack] = pi_slack
    r = residual(pi_full, phi)
    rnorm = np.linalg.norm(r, np.inf)
    history = [float(rnorm)]
    iterations = 0
    while rnorm > tol and iterations < max_iter:
        J = jacobian(pi_full, phi)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise SteadySolveError(
                f"singular Jacobian at iteration {iterations}", residual=float(rnorm)
            ) from None
        d_pi = step[: nv - 1]
        d_phi = step[nv - 1 :]
        t = 1.0
        merit0 = float(r @ r)
        while True:
            pi_try = pi_full.copy()
            pi_try[free_nodes] += t * d_pi
            phi_try = phi + t * d_phi
            r_try = residual(pi_try, phi_try)
            if float(r_try @ r_try) <= (1.0 - 1e-4 * t) * merit0:
                break
            t *= 0.5
            if t < 1e-6:
                raise SteadySolveError(
                    "Newton line search stalled (step below 1e-6)", residual=float(rnorm)
                )
        pi_full, phi, r = pi_try, phi_try, r_try
        rnorm = np.linalg.norm(r, np.inf)
        history.append(float(rnorm))
        iterations += 1

    if rnorm > tol:
        raise SteadySolveError(
            f"Newton did not converge in {max_iter} iterations", residual=float(rnorm)
        )
    if np.any(pi_full <= 0):
        bad = int(np.argmin(pi_full))
        raise SteadySolveError(
            f"negative squared pressure at node {net.nodes[bad].id!r}: "
            "operating point is infeasible",
            node=net.nodes[bad].id,
        )

    inflow = np.zeros(nv)
    np.add.at(inflow, edge_to, phi)
    np.subtract.at(inflow, edge_from, phi)

    return SteadyState(
        net=net,
        Pi=pi_full * pi_scale,
        phi=phi * scaling.flow,
        residual_norm=float(rnorm),
        iterations=iterations,
        slack_injection=float(-inflow[slack] * scaling.flow),
        residual_history=history,
    )
