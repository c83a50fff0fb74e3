"""Embedded smooth NLP solver: min f(x) s.t. c(x) = 0 and box bounds.

A primal-dual interior-point method with a monotone barrier schedule
(mu -> mu/10 on progress), an l1 merit line search with one second-order
correction, and symmetric-indefinite (Bunch-Kaufman) factorization of the
KKT system with inertia correction.  Returns equality and bound multipliers
under the convention

    L = f + lambda_eq^T c - lambda_lo^T (x - lo) - lambda_hi^T (hi - x)

so at a solution ``grad f + J^T lambda_eq - lambda_lo + lambda_hi = 0`` with
``lambda_lo, lambda_hi >= 0``.  The Hessian of the Lagrangian may be supplied
exactly; otherwise a damped BFGS approximation is maintained.

Everything is deterministic: identical inputs and options produce identical
iterates and multipliers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger("gasflow.nlp")


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class EvaluationError(RuntimeError):
    """NaN/Inf from a callback; ``index`` is the offending constraint row."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass
class NlpProblem:
    """Smooth NLP data: callbacks plus box bounds.

    ``jacobian`` may return a scipy sparse matrix or an ndarray (m x n) with a
    fixed sparsity pattern.  ``hessian(x, y, obj_factor)`` returns the Hessian
    of ``obj_factor * f + y @ c`` (n x n, lower/upper both fine; it is
    symmetrized internally).
    """

    n: int
    m: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], object]
    lower: np.ndarray
    upper: np.ndarray
    hessian: Callable[[np.ndarray, np.ndarray, float], object] | None = None
    name: str = ""

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.n,) or self.upper.shape != (self.n,):
            raise ValueError("bounds must have shape (n,)")
        if np.any(self.lower >= self.upper):
            bad = int(np.argmax(self.lower >= self.upper))
            raise ValueError(f"bounds must satisfy lo < hi elementwise (variable {bad})")


@dataclass
class NlpOptions:
    tol: float = 1e-8
    max_iter: int = 500
    mu0: float = 0.1
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    armijo: float = 1e-4
    min_step: float = 1e-12
    verbose: bool = False


@dataclass
class NlpSolution:
    x: np.ndarray
    lambda_eq: np.ndarray
    lambda_lo: np.ndarray
    lambda_hi: np.ndarray
    status: SolveStatus
    kkt_residuals: dict[str, float]
    iterations: int
    objective: float
    mu: float

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def _as_dense(mat, shape) -> np.ndarray:
    if sp.issparse(mat):
        return mat.toarray()
    arr = np.asarray(mat, dtype=float)
    return arr.reshape(shape)


class _LdlFactor:
    """Solve with scipy's Bunch-Kaufman LDL^T factors; exposes the inertia."""

    def __init__(self, M: np.ndarray):
        self.lu, self.d, self.perm = sla.ldl(M, lower=True)
        self.n = M.shape[0]

    def inertia(self) -> tuple[int, int, int]:
        pos = neg = zero = 0
        d = self.d
        i = 0
        while i < self.n:
            off = d[i + 1, i] if i + 1 < self.n else 0.0
            if off != 0.0:
                det = d[i, i] * d[i + 1, i + 1] - off * off
                if det < 0.0:
                    pos += 1
                    neg += 1
                else:
                    # should not happen for Bunch-Kaufman 2x2 pivots
                    tr = d[i, i] + d[i + 1, i + 1]
                    if det == 0.0:
                        zero += 1
                        pos += 1 if tr > 0 else 0
                        neg += 1 if tr < 0 else 0
                    elif tr > 0:
                        pos += 2
                    else:
                        neg += 2
                i += 2
            else:
                v = d[i, i]
                if v > 0.0:
                    pos += 1
                elif v < 0.0:
                    neg += 1
                else:
                    zero += 1
                i += 1
        return pos, neg, zero

    def solve(self, b: np.ndarray) -> np.ndarray:
        perm = self.perm
        L = self.lu[perm]
        w = sla.solve_triangular(L, b[perm], lower=True, unit_diagonal=True)
        v = np.empty_like(w)
        d = self.d
        i = 0
        while i < self.n:
            off = d[i + 1, i] if i + 1 < self.n else 0.0
            if off != 0.0:
                a, bb, c = d[i, i], off, d[i + 1, i + 1]
                det = a * c - bb * bb
                v[i] = (c * w[i] - bb * w[i + 1]) / det
                v[i + 1] = (-bb * w[i] + a * w[i + 1]) / det
                i += 2
            else:
                v[i] = w[i] / d[i, i]
                i += 1
        u = sla.solve_triangular(L.T, v, lower=False, unit_diagonal=True)
        out = np.empty_like(u)
        out[perm] = u
        return out


def _project_interior(x, lo, hi, kappa=1e-2):
    """Push a start point strictly inside its bounds (Ipopt kappa_1 = 1e-2;
    warm starts use a much smaller push to preserve the active set)."""
    x = x.copy()
    both = np.isfinite(lo) & np.isfinite(hi)
    lo_only = np.isfinite(lo) & ~np.isfinite(hi)
    hi_only = np.isfinite(hi) & ~np.isfinite(lo)
    lo_b, hi_b = lo[both], hi[both]
    pl = np.minimum(kappa * np.maximum(1.0, np.abs(lo_b)), kappa * (hi_b - lo_b))
    pu = np.minimum(kappa * np.maximum(1.0, np.abs(hi_b)), kappa * (hi_b - lo_b))
    x[both] = np.clip(x[both], lo_b + pl, hi_b - pu)
    lo_o, hi_o = lo[lo_only], hi[hi_only]
    x[lo_only] = np.maximum(x[lo_only], lo_o + kappa * np.maximum(1.0, np.abs(lo_o)))
    x[hi_only] = np.minimum(x[hi_only], hi_o - kappa * np.maximum(1.0, np.abs(hi_o)))
    return x


class _Iterate:
    """Mutable solver state over (x, y, z_lo, z_hi)."""

    def __init__(self, problem: NlpProblem, x0: np.ndarray, mu0: float, push: float = 1e-2):
        self.p = problem
        self.has_lo = np.isfinite(problem.lower)
        self.has_hi = np.isfinite(problem.upper)
        self.x = _project_interior(
            np.asarray(x0, dtype=float), problem.lower, problem.upper, kappa=push
        )
        self.y = np.zeros(problem.m)
        sl_lo, sl_hi = self.slacks()
        self.z_lo = np.where(self.has_lo, np.clip(mu0 / np.where(self.has_lo, sl_lo, 1.0), 1e-8, 1e8), 0.0)
        self.z_hi = np.where(self.has_hi, np.clip(mu0 / np.where(self.has_hi, sl_hi, 1.0), 1e-8, 1e8), 0.0)

    def slacks(self):
        sl_lo = np.where(self.has_lo, self.x - self.p.lower, 1.0)
        sl_hi = np.where(self.has_hi, self.p.upper - self.x, 1.0)
        return sl_lo, sl_hi

    def barrier(self, x: np.ndarray, f: float, mu: float) -> float:
        sl_lo = (x - self.p.lower)[self.has_lo]
        sl_hi = (self.p.upper - x)[self.has_hi]
        if np.any(sl_lo <= 0) or np.any(sl_hi <= 0):
            return np.inf
        return f - mu * (np.log(sl_lo).sum() + np.log(sl_hi).sum())


def _kkt_error(problem, x, y, z_lo, z_hi, g, c, JT, mu, has_lo, has_hi):
    """Scaled KKT error in the style of Ipopt's E_mu."""
    n_b = int(has_lo.sum() + has_hi.sum())
    s_max = 100.0
    mult_sum = np.abs(y).sum() + z_lo[has_lo].sum() + z_hi[has_hi].sum()
    denom = max(1, problem.m + n_b)
    s_d = max(s_max, mult_sum / denom) / s_max
    s_c = max(s_max, (z_lo[has_lo].sum() + z_hi[has_hi].sum()) / max(1, n_b)) / s_max
    r_stat = g + JT @ y - z_lo + z_hi
    stat = np.abs(r_stat).max() / s_d if problem.n else 0.0
    feas = np.abs(c).max() if problem.m else 0.0
    comp = 0.0
    if n_b:
        sl_lo = np.where(has_lo, x - problem.lower, 1.0)
        sl_hi = np.where(has_hi, problem.upper - x, 1.0)
        comp_lo = np.abs(sl_lo * z_lo - mu)[has_lo]
        comp_hi = np.abs(sl_hi * z_hi - mu)[has_hi]
        parts = [p.max() for p in (comp_lo, comp_hi) if p.size]
        comp = max(parts) / s_c if parts else 0.0
    return max(stat, feas, comp), float(stat), float(feas), float(comp)


def solve(
    problem: NlpProblem,
    x0: np.ndarray,
    options: NlpOptions | None = None,
    duals0: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> NlpSolution:
    """Solve the NLP from ``x0`` (projected strictly inside the bounds).

    ``duals0`` optionally warm starts the multipliers as
    ``(lambda_eq, lambda_lo, lambda_hi)``; near-optimal starts then converge
    in a handful of iterations because the barrier starts near its floor.

    Returns an :class:`NlpSolution`; status ``OPTIMAL`` guarantees the scaled
    KKT residuals are below ``options.tol`` with correctly signed bound
    multipliers.  ``MAX_ITER`` returns the best iterate found;
    ``INFEASIBLE`` indicates the equality residual stalled well above
    tolerance.
    """
    opts = options or NlpOptions()
    n, m = problem.n, problem.m
    it = _Iterate(problem, x0, opts.mu0, push=1e-9 if duals0 is not None else 1e-2)
    has_lo, has_hi = it.has_lo, it.has_hi
    if duals0 is not None:
        y0, zl0, zh0 = duals0
        it.y = np.asarray(y0, dtype=float).reshape(m).copy()
        it.z_lo = np.where(has_lo, np.clip(np.asarray(zl0, dtype=float), 1e-12, 1e12), 0.0)
        it.z_hi = np.where(has_hi, np.clip(np.asarray(zh0, dtype=float), 1e-12, 1e12), 0.0)

    f = float(problem.objective(it.x))
    c = np.asarray(problem.constraints(it.x), dtype=float).reshape(m)
    if not np.isfinite(f):
        raise EvaluationError("objective is not finite at the start point")
    if m and not np.all(np.isfinite(c)):
        idx = int(np.flatnonzero(~np.isfinite(c))[0])
        raise EvaluationError(f"constraint {idx} is not finite at the start point", index=idx)
    g = np.asarray(problem.gradient(it.x), dtype=float).reshape(n)
    J = _as_dense(problem.jacobian(it.x), (m, n))

    # least-squares multiplier initialization
    if m and duals0 is None:
        rhs = -(g - it.z_lo + it.z_hi)
        y_ls, *_ = np.linalg.lstsq(J.T, rhs, rcond=None)
        it.y = y_ls if np.abs(y_ls).max() <= 1e3 else np.zeros(m)

    e0, *_ = _kkt_error(problem, it.x, it.y, it.z_lo, it.z_hi, g, c, J.T, 0.0, has_lo, has_hi)
    mu = min(opts.mu0, max(opts.tol / 11.0, e0 / 10.0))
    tau = max(opts.tau_min, 1.0 - mu)

    bfgs_B = None
    if problem.hessian is None:
        bfgs_B = np.eye(n)
    prev_for_bfgs = None

    # Waechter-Biegler filter constants; the filter is reset per barrier stage
    G_THETA = 1e-5
    G_PHI = 1e-5
    S_THETA = 1.1
    S_PHI = 2.3
    FILTER_DELTA = 1.0
    theta_init = float(np.abs(c).sum()) if m else 0.0
    theta_cap = 1e4 * max(1.0, theta_init)
    theta_floor = 1e-4 * max(1.0, theta_init)
    filter_entries: list[tuple[float, float]] = []

    delta_w_last = 0.0
    consecutive_failures = 0
    best = None
    status = SolveStatus.MAX_ITER
    iteration = 0
    _dbg = ""

    for iteration in range(1, opts.max_iter + 1):
        e_scaled, stat, feas, comp = _kkt_error(
            problem, it.x, it.y, it.z_lo, it.z_hi, g, c, J.T, 0.0, has_lo, has_hi
        )
        if best is None or e_scaled < best[0]:
            best = (e_scaled, it.x.copy(), it.y.copy(), it.z_lo.copy(), it.z_hi.copy(), f)
        if opts.verbose:
            log.info(
                "iter %3d  f=% .8e  stat=%.2e  feas=%.2e  comp=%.2e  mu=%.1e  %s",
                iteration - 1, f, stat, feas, comp, mu, _dbg,
            )
            _dbg = ""
        if e_scaled <= opts.tol:
            status = SolveStatus.OPTIMAL
            break

        e_mu, *_ = _kkt_error(
            problem, it.x, it.y, it.z_lo, it.z_hi, g, c, J.T, mu, has_lo, has_hi
        )
        while e_mu <= opts.kappa_eps * mu and mu > opts.tol / 11.0:
            mu = max(opts.tol / 11.0, mu / 10.0)
            tau = max(opts.tau_min, 1.0 - mu)
            filter_entries.clear()
            e_mu, *_ = _kkt_error(
                problem, it.x, it.y, it.z_lo, it.z_hi, g, c, J.T, mu, has_lo, has_hi
            )

        sl_lo, sl_hi = it.slacks()
        sigma = np.where(has_lo, it.z_lo / sl_lo, 0.0) + np.where(has_hi, it.z_hi / sl_hi, 0.0)
        grad_phi = g - np.where(has_lo, mu / sl_lo, 0.0) + np.where(has_hi, mu / sl_hi, 0.0)

        if problem.hessian is not None:
            W = _as_dense(problem.hessian(it.x, it.y, 1.0), (n, n))
            W = 0.5 * (W + W.T)
        else:
            W = bfgs_B

        rhs = np.concatenate([-(grad_phi + J.T @ it.y), -c])

        # inertia-corrected factorization
        delta_w = 0.0
        delta_c = 0.0
        factor = None
        for attempt in range(40):
            M = np.zeros((n + m, n + m))
            M[:n, :n] = W
            M[np.arange(n), np.arange(n)] += sigma + delta_w
            M[:n, n:] = J.T
            M[n:, :n] = J
            if delta_c or m:
                M[np.arange(n, n + m), np.arange(n, n + m)] = -delta_c
            try:
                factor = _LdlFactor(M)
                pos, neg, zero = factor.inertia()
            except Exception:
                pos, neg, zero = -1, -1, 1
            if pos == n and neg == m and zero == 0:
                break
            if zero > 0 and delta_c == 0.0:
                delta_c = 1e-8 * max(mu, 1e-8) ** 0.25
            if delta_w == 0.0:
                delta_w = 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3.0)
            else:
                delta_w *= 8.0 if delta_w_last != 0.0 else 100.0
            if delta_w > 1e40:
                raise RuntimeError("inertia correction failed: KKT matrix seems singular")
        delta_w_last = delta_w if delta_w > 0 else delta_w_last

        step = factor.solve(rhs)
        dx, dy = step[:n], step[n:]

        # fraction-to-boundary step limits
        def ftb_primal(d):
            alpha = 1.0
            neg_lo = has_lo & (d < 0)
            if np.any(neg_lo):
                alpha = min(alpha, float(np.min(-tau * sl_lo[neg_lo] / d[neg_lo])))
            pos_hi = has_hi & (d > 0)
            if np.any(pos_hi):
                alpha = min(alpha, float(np.min(tau * sl_hi[pos_hi] / d[pos_hi])))
            return alpha

        alpha_max = ftb_primal(dx)

        # filter line search with second-order corrections
        theta_k = float(np.abs(c).sum()) if m else 0.0
        phi_k = it.barrier(it.x, f, mu)
        dphi = float(grad_phi @ dx)

        def trial_values(x_try):
            f_try = float(problem.objective(x_try))
            c_try = np.asarray(problem.constraints(x_try), dtype=float).reshape(m)
            if not np.isfinite(f_try) or (m and not np.all(np.isfinite(c_try))):
                return np.inf, np.inf, f_try, c_try
            theta_t = float(np.abs(c_try).sum()) if m else 0.0
            phi_t = it.barrier(x_try, f_try, mu)
            return theta_t, phi_t, f_try, c_try

        def filter_ok(theta_t, phi_t):
            if theta_t > theta_cap:
                return False
            for th_j, ph_j in filter_entries:
                if not (theta_t <= (1 - G_THETA) * th_j or phi_t <= ph_j - G_PHI * th_j):
                    return False
            return True

        def acceptable(alpha_t, theta_t, phi_t):
            """Filter acceptance: f-type Armijo near feasibility, h-type else."""
            if not filter_ok(theta_t, phi_t) or not np.isfinite(phi_t):
                return False
            switching = (
                dphi < 0.0
                and alpha_t * (-dphi) ** S_PHI > FILTER_DELTA * theta_k**S_THETA
            )
            if theta_k <= theta_floor and switching:
                return phi_t <= phi_k + opts.armijo * alpha_t * dphi
            return (
                theta_t <= (1 - G_THETA) * theta_k or phi_t <= phi_k - G_PHI * theta_k
            )

        alpha = alpha_max
        accepted = False
        soc_count = 0
        dx_used, dy_used = dx, dy
        x_new = f_new = c_new = None
        theta_soc_last = np.inf
        while alpha >= opts.min_step:
            x_try = it.x + alpha * dx_used
            theta_t, phi_t, f_try, c_try = trial_values(x_try)
            if acceptable(alpha, theta_t, phi_t):
                x_new, f_new, c_new = x_try, f_try, c_try
                accepted = True
                break
            # second-order correction: retarget the constraint block at the
            # trial point and replace the direction (up to two rounds),
            # only while the correction keeps reducing infeasibility
            if (
                soc_count < 2
                and alpha == alpha_max
                and m
                and np.all(np.isfinite(c_try))
                and theta_t >= theta_k
                and theta_t < 0.99 * theta_soc_last
            ):
                soc_count += 1
                theta_soc_last = theta_t
                rhs_soc = np.concatenate([rhs[:n], -(c_try + alpha * c)])
                step_soc = factor.solve(rhs_soc)
                d_soc, dy_soc = step_soc[:n], step_soc[n:]
                alpha_soc = ftb_primal(d_soc)
                x_soc = it.x + alpha_soc * d_soc
                theta_s, phi_s, f_soc, c_soc = trial_values(x_soc)
                if acceptable(alpha_soc, theta_s, phi_s):
                    x_new, f_new, c_new = x_soc, f_soc, c_soc
                    dx_used, dy_used = d_soc, dy_soc
                    alpha = alpha_soc
                    theta_t, phi_t = theta_s, phi_s
                    accepted = True
                    break
                continue
            alpha *= 0.5

        if accepted:
            # steps that did not certify objective progress block this
            # (theta, phi) corner from re-entry
            switching = (
                dphi < 0.0 and alpha * (-dphi) ** S_PHI > FILTER_DELTA * theta_k**S_THETA
            )
            if not (theta_k <= theta_floor and switching):
                filter_entries.append(
                    ((1 - G_THETA) * theta_k, phi_k - G_PHI * theta_k)
                )

        dz_lo = np.where(has_lo, mu / sl_lo - it.z_lo - (it.z_lo / sl_lo) * dx_used, 0.0)
        dz_hi = np.where(has_hi, mu / sl_hi - it.z_hi + (it.z_hi / sl_hi) * dx_used, 0.0)
        alpha_z = 1.0
        for z, dz, mask in ((it.z_lo, dz_lo, has_lo), (it.z_hi, dz_hi, has_hi)):
            negd = mask & (dz < 0)
            if np.any(negd):
                alpha_z = min(alpha_z, float(np.min(-tau * z[negd] / dz[negd])))

        if opts.verbose:
            _dbg = (
                f"alpha={alpha if accepted else 0:.2e} amax={alpha_max:.2e} "
                f"az={alpha_z:.2e} nfilt={len(filter_entries)} dw={delta_w:.1e} "
                f"soc={soc_count}"
            )
        if not accepted:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                if feas > 1e3 * opts.tol:
                    status = SolveStatus.INFEASIBLE
                else:
                    status = SolveStatus.MAX_ITER
                break
            # retreat: raise the barrier and retry from the same point
            mu = min(opts.mu0, max(mu * 100.0, 1e-6))
            tau = max(opts.tau_min, 1.0 - mu)
            filter_entries.clear()
            continue
        consecutive_failures = 0

        if problem.hessian is None:
            prev_for_bfgs = (it.x.copy(), g + J.T @ (it.y + alpha * dy_used))

        it.x = x_new
        it.y = it.y + alpha * dy_used
        it.z_lo = np.where(has_lo, it.z_lo + alpha_z * dz_lo, 0.0)
        it.z_hi = np.where(has_hi, it.z_hi + alpha_z * dz_hi, 0.0)

        # keep bound multipliers compatible with the barrier (Ipopt kappa_Sigma)
        sl_lo, sl_hi = it.slacks()
        k_sig = 1e10
        it.z_lo = np.where(
            has_lo, np.clip(it.z_lo, mu / (k_sig * sl_lo), k_sig * mu / sl_lo), 0.0
        )
        it.z_hi = np.where(
            has_hi, np.clip(it.z_hi, mu / (k_sig * sl_hi), k_sig * mu / sl_hi), 0.0
        )

        f, c = f_new, c_new
        g = np.asarray(problem.gradient(it.x), dtype=float).reshape(n)
        J = _as_dense(problem.jacobian(it.x), (m, n))

        if problem.hessian is None and prev_for_bfgs is not None:
            x_old, gl_old = prev_for_bfgs
            s = it.x - x_old
            gl_new = g + J.T @ it.y
            yv = gl_new - gl_old
            ss = float(s @ s)
            if ss > 1e-16:
                Bs = bfgs_B @ s
                sBs = float(s @ Bs)
                sy = float(s @ yv)
                if sy < 0.2 * sBs:
                    theta_d = 0.8 * sBs / (sBs - sy)
                    yv = theta_d * yv + (1.0 - theta_d) * Bs
                    sy = float(s @ yv)
                if sy > 1e-12 * ss:
                    bfgs_B = bfgs_B - np.outer(Bs, Bs) / sBs + np.outer(yv, yv) / sy

    else:
        iteration = opts.max_iter

    if status is not SolveStatus.OPTIMAL and best is not None and best[0] < np.inf:
        _, bx, by, bzl, bzh, bf = best
        e_now, *_ = _kkt_error(
            problem, it.x, it.y, it.z_lo, it.z_hi, g, c, J.T, 0.0, has_lo, has_hi
        )
        if best[0] < e_now:
            it.x, it.y, it.z_lo, it.z_hi, f = bx, by, bzl, bzh, bf
            c = np.asarray(problem.constraints(it.x), dtype=float).reshape(m)
            g = np.asarray(problem.gradient(it.x), dtype=float).reshape(n)
            J = _as_dense(problem.jacobian(it.x), (m, n))

    r_stat = g + J.T @ it.y - it.z_lo + it.z_hi
    sl_lo, sl_hi = it.slacks()
    comp_terms = []
    if has_lo.any():
        comp_terms.append(np.abs(sl_lo * it.z_lo)[has_lo].max())
    if has_hi.any():
        comp_terms.append(np.abs(sl_hi * it.z_hi)[has_hi].max())
    residuals = {
        "stationarity": float(np.abs(r_stat).max()) if n else 0.0,
        "feasibility": float(np.abs(c).max()) if m else 0.0,
        "complementarity": float(max(comp_terms)) if comp_terms else 0.0,
    }
    return NlpSolution(
        x=it.x,
        lambda_eq=it.y,
        lambda_lo=np.where(has_lo, it.z_lo, 0.0),
        lambda_hi=np.where(has_hi, it.z_hi, 0.0),
        status=status,
        kkt_residuals=residuals,
        iterations=iteration,
        objective=f,
        mu=mu,
    )


def check_derivatives(problem: NlpProblem, x: np.ndarray, step: float = 1e-6) -> float:
    """Compare analytic gradient/Jacobian with central finite differences.

    Returns the worst relative discrepancy ``|analytic - fd| / max(1, |analytic|)``
    over all gradient entries and Jacobian entries.
    """
    x = np.asarray(x, dtype=float)
    n, m = problem.n, problem.m
    g = np.asarray(problem.gradient(x), dtype=float).reshape(n)
    J = _as_dense(problem.jacobian(x), (m, n))
    worst = 0.0
    for i in range(n):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fd_g = (problem.objective(xp) - problem.objective(xm)) / (2 * h)
        worst = max(worst, abs(fd_g - g[i]) / max(1.0, abs(g[i])))
        if m:
            cp = np.asarray(problem.constraints(xp), dtype=float)
            cm = np.asarray(problem.constraints(xm), dtype=float)
            fd_c = (cp - cm) / (2 * h)
            denom = np.maximum(1.0, np.abs(J[:, i]))
            worst = max(worst, float(np.max(np.abs(fd_c - J[:, i]) / denom)))
    return worst
