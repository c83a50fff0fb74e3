"""Discretization of a 1-D uncertainty interval into stochastic finite volume cells.

A random withdrawal lives on a compact interval ``[lo, hi]`` with either a
uniform or a truncated normal measure.  The interval is split into ``K``
uniform cells; the physics is collocated at the cell centers, and a clamped
cubic B-spline basis (``K + 3`` functions, partition of unity) carries the
penalty expansion used by the chance constraint.  All measure quantities
(cell masses, basis integrals, means, quantiles) are computed in closed form
or by Gauss-Legendre quadrature; no sampling enters the construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline, CubicSpline
from scipy.special import ndtr, ndtri

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class UncertaintySpec:
    """Distribution of a random withdrawal increment on [lo, hi] (kg/s).

    ``dist`` is ``"uniform"`` or ``"truncated_normal"``; the latter needs
    ``mean`` and ``std`` of the parent normal and has support exactly
    ``[lo, hi]``.  A zero-width interval (``lo == hi``) denotes a point mass
    and is accepted so that degenerate problems reduce to the deterministic
    case.
    """

    dist: str
    lo: float
    hi: float
    mean: float | None = None
    std: float | None = None

    def __post_init__(self):
        if self.dist not in ("uniform", "truncated_normal"):
            raise ValueError(f"unknown distribution {self.dist!r}")
        if not self.lo <= self.hi:
            raise ValueError(f"degenerate interval: lo={self.lo} > hi={self.hi}")
        if self.dist == "truncated_normal":
            if self.mean is None or self.std is None:
                raise ValueError("truncated_normal requires mean and std")
            if self.std <= 0:
                raise ValueError("truncated_normal requires std > 0")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    @property
    def _norm_mass(self) -> float:
        # probability the parent normal assigns to [lo, hi]
        return float(ndtr(self._z(self.hi)) - ndtr(self._z(self.lo)))

    def cdf(self, x):
        """Cumulative distribution, clipped to the support."""
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        if self.width == 0.0:
            return np.where(x >= self.lo, 1.0, 0.0)
        if self.dist == "uniform":
            return (x - self.lo) / self.width
        return (ndtr(self._z(x)) - ndtr(self._z(self.lo))) / self._norm_mass

    def pdf(self, x):
        """Density on the support (zero outside)."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        if self.width == 0.0:
            raise ValueError("point mass has no density")
        if self.dist == "uniform":
            return np.where(inside, 1.0 / self.width, 0.0)
        z = self._z(x)
        val = np.exp(-0.5 * z * z) / (self.std * _SQRT2PI * self._norm_mass)
        return np.where(inside, val, 0.0)

    def ppf(self, u):
        """Inverse CDF for u in [0, 1]."""
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile argument must lie in [0, 1]")
        if self.width == 0.0:
            return np.full_like(u, self.lo)
        if self.dist == "uniform":
            return self.lo + u * self.width
        base = ndtr(self._z(self.lo))
        x = self.mean + self.std * ndtri(base + u * self._norm_mass)
        return np.clip(x, self.lo, self.hi)

    def measure_mean(self) -> float:
        """Analytic mean of the measure."""
        if self.width == 0.0:
            return self.lo
        if self.dist == "uniform":
            return 0.5 * (self.lo + self.hi)
        za, zb = float(self._z(self.lo)), float(self._z(self.hi))
        phi_a = math.exp(-0.5 * za * za) / _SQRT2PI
        phi_b = math.exp(-0.5 * zb * zb) / _SQRT2PI
        return self.mean + self.std * (phi_a - phi_b) / self._norm_mass


def sample_value(spec: UncertaintySpec, u: float):
    """Map a uniform(0, 1) draw to a withdrawal value via the inverse CDF."""
    return spec.ppf(u)


def _gauss_legendre_panels(breaks: np.ndarray, n_points: int):
    """Gauss-Legendre nodes/weights on each interval of ``breaks``."""
    xg, wg = np.polynomial.legendre.leggauss(n_points)
    a = breaks[:-1][:, None]
    b = breaks[1:][:, None]
    nodes = 0.5 * (b - a) * xg[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * wg[None, :]
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class StochasticGrid:
    """Uniform SFV partition of an uncertainty interval with a spline basis.

    ``knots`` are the K+1 cell boundaries, ``collocation_points`` the K cell
    centers where the physics is solved, ``cell_mass`` the measure of each
    cell.  The cubic basis lives on the clamped knot vector over [lo, hi];
    ``greville`` are its K+3 canonical collocation points, and
    ``basis_integrals`` the measure integrals of each basis function.

    A degenerate grid (zero-width interval) carries a single constant basis
    function so downstream assembly needs no special cases.
    """

    node_id: str
    spec: UncertaintySpec
    K: int
    knots: np.ndarray
    collocation_points: np.ndarray
    cell_mass: np.ndarray
    spline_knots: np.ndarray
    greville: np.ndarray
    basis_integrals: np.ndarray

    @property
    def n_basis(self) -> int:
        return 1 if self.degenerate else self.K + 3

    @property
    def degenerate(self) -> bool:
        return self.spec.width == 0.0

    def basis_matrix(self, x) -> np.ndarray:
        """Dense matrix b_m(x_i) of the spline basis at the given points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.degenerate:
            return np.ones((x.size, 1))
        out = BSpline.design_matrix(x, self.spline_knots, 3).toarray()
        return out

    def collocation_matrix(self) -> np.ndarray:
        """Square basis matrix at the Greville points (unisolvent)."""
        return self.basis_matrix(self.greville)

    def interpolation_weights(self, x) -> np.ndarray:
        """Weights mapping per-cell values to interpolated values at x.

        Row i gives w such that ``f(x_i) = w @ values_at_cell_centers`` for
        the not-a-knot cubic interpolant through the cell centers (cubic
        extrapolation beyond the first/last center).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.degenerate:
            return np.full((x.size, self.K), 1.0 / self.K)
        cs = CubicSpline(self.collocation_points, np.eye(self.K), axis=0)
        return cs(x)

    def value_interpolator(self, values: np.ndarray):
        """Callable omega -> value, cubic through the per-cell values."""
        values = np.asarray(values, dtype=float)
        if self.degenerate:
            v = float(values.mean())
            return lambda x: np.full_like(np.asarray(x, dtype=float), v)
        return CubicSpline(self.collocation_points, values)


def build_grid(spec: UncertaintySpec, K: int, node_id: str = "") -> StochasticGrid:
    """Partition [lo, hi] into K uniform cells and build the spline basis.

    Requires K >= 4 (the cubic interpolation through cell centers needs at
    least four points).  Cell masses come from closed-form CDF differences;
    basis integrals from Gauss-Legendre quadrature against the density.
    """
    if K < 4:
        raise ValueError(f"need at least 4 stochastic cells, got {K}")
    if spec.width == 0.0:
        point = float(spec.lo)
        return StochasticGrid(
            node_id=node_id,
            spec=spec,
            K=K,
            knots=np.full(K + 1, point),
            collocation_points=np.full(K, point),
            cell_mass=np.full(K, 1.0 / K),
            spline_knots=np.full(8, point),
            greville=np.array([point]),
            basis_integrals=np.array([1.0]),
        )
    knots = np.linspace(spec.lo, spec.hi, K + 1)
    centers = 0.5 * (knots[:-1] + knots[1:])
    if spec.dist == "uniform":
        mass = np.full(K, 1.0 / K)
    else:
        cdf = spec.cdf(knots)
        mass = np.diff(cdf)
    t = np.concatenate([[spec.lo] * 3, knots, [spec.hi] * 3])
    greville = np.array([t[i + 1 : i + 4].mean() for i in range(K + 3)])
    grid = StochasticGrid(
        node_id=node_id,
        spec=spec,
        K=K,
        knots=knots,
        collocation_points=centers,
        cell_mass=mass,
        spline_knots=t,
        greville=greville,
        basis_integrals=np.empty(K + 3),
    )
    integrals = measure_basis_integrals(grid)
    object.__setattr__(grid, "basis_integrals", integrals)
    return grid


def measure_basis_integrals(grid: StochasticGrid, points_per_interval: int = 8) -> np.ndarray:
    """Integrals of each basis function against the measure.

    Gauss-Legendre quadrature per knot interval; the integrand is the basis
    value times the measure density, so the integrals are nonnegative and sum
    to one by the partition of unity.
    """
    if grid.degenerate:
        return np.array([1.0])
    nodes, weights = _gauss_legendre_panels(grid.knots, points_per_interval)
    basis = grid.basis_matrix(nodes)
    density = grid.spec.pdf(nodes)
    return basis.T @ (weights * density)
