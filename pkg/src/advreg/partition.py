"""Grid partition of the unit cube and the piecewise local polynomial (PP) estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import KernelSpec, MultiIndexBasis, build_basis, eval_U
from .exceptions import ResourceLimitError
from .localpoly import Dataset, LocalFit, default_tau, local_sums, solve_regularized

MAX_CELLS = 10**7


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    """Coerce to shape (n, d); report whether a single point was given."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 0 or (x.ndim == 1 and d > 1)
    return x.reshape(-1, d), single


def _check_domain(pts: np.ndarray) -> None:
    if not (np.all(pts >= 0.0) and np.all(pts <= 1.0)):
        raise ValueError("points must lie in [0, 1]^d")


@dataclass(frozen=True)
class GridPartition:
    """The ``M^d`` cell centers ``((2k_1+1)/(2M), ..., (2k_d+1)/(2M))``.

    Cell ``k`` is flattened in C order over the per-axis indices, so for
    ``d = 2`` the center ``(k_1, k_2)`` has flat index ``k_1 * M + k_2``.
    """

    M: int
    d: int

    def __post_init__(self):
        if self.M < 1 or self.d < 1:
            raise ValueError(f"need M >= 1 and d >= 1, got M={self.M}, d={self.d}")
        if self.M**self.d > MAX_CELLS:
            raise ResourceLimitError(
                f"partition with M={self.M}, d={self.d} has {self.M**self.d} cells (> {MAX_CELLS})"
            )

    @property
    def n_cells(self) -> int:
        return self.M**self.d

    @cached_property
    def axis_centers(self) -> np.ndarray:
        return (2.0 * np.arange(self.M) + 1.0) / (2.0 * self.M)

    @cached_property
    def centers(self) -> np.ndarray:
        grids = np.meshgrid(*([self.axis_centers] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def axis_index(self, x: np.ndarray) -> np.ndarray:
        """Per-axis index of the nearest center, ties going to the lower one."""
        c = self.axis_centers
        k = np.clip(np.ceil(x * self.M) - 1.0, 0, self.M - 1).astype(np.int64)
        # guard against rounding in x * M: compare true distances to neighbours
        down = np.maximum(k - 1, 0)
        k = np.where(np.abs(x - c[down]) <= np.abs(x - c[k]), down, k)
        up = np.minimum(k + 1, self.M - 1)
        k = np.where(np.abs(x - c[up]) < np.abs(x - c[k]), up, k)
        return k

    def flat_index(self, axis_idx: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(axis_idx.T), (self.M,) * self.d)

    def cell_of(self, x) -> np.ndarray:
        pts, _ = _as_points(x, self.d)
        _check_domain(pts)
        return self.flat_index(self.axis_index(pts))

    def cell_bounds(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closed boxes ``[lo, hi]`` of the given flat cell indices."""
        ax = np.stack(np.unravel_index(np.asarray(cells), (self.M,) * self.d), axis=-1)
        return ax / self.M, (ax + 1) / self.M


def nearest_center(partition: GridPartition, x) -> np.ndarray:
    """The center nearest to ``x``; ties go to the center closest to the origin."""
    pts, single = _as_points(x, partition.d)
    out = partition.centers[partition.cell_of(pts)]
    return out[0] if single else out


def tune_bandwidth(beta: float, d: int, n: int, r: float, q: float, c_h: float = 1.0) -> float:
    """Bandwidth ``c_h * max(r, n^{-1/(2 beta + d)})``, with ``n / log n`` for the sup-norm."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if d < 1 or n < 1 or r < 0 or c_h <= 0:
        raise ValueError("need d >= 1, n >= 1, r >= 0, c_h > 0")
    if math.isinf(q):
        if n < 2:
            raise ValueError("sup-norm tuning needs n >= 2")
        base = (n / math.log(n)) ** (-1.0 / (2.0 * beta + d))
    else:
        if q < 1:
            raise ValueError(f"q must be >= 1, got {q}")
        base = n ** (-1.0 / (2.0 * beta + d))
    return min(1.0, c_h * max(r, base))


@dataclass(frozen=True, eq=False)
class PiecewisePolynomial:
    """One local polynomial per grid cell, evaluated at the cell of the query.

    Shared by the PP and adaptive estimators; they differ only in how the
    per-cell bandwidths and coefficients are chosen.
    """

    partition: GridPartition
    basis: MultiIndexBasis
    bandwidths: np.ndarray  # (C,)
    coefficients: np.ndarray  # (C, N), zero rows for empty cells
    empty: np.ndarray  # (C,)
    regularized: np.ndarray  # (C,)
    n_local: np.ndarray  # (C,)
    taus: np.ndarray  # (C,)

    def __post_init__(self):
        for arr in (self.bandwidths, self.coefficients, self.empty, self.regularized,
                    self.n_local, self.taus):
            arr.setflags(write=False)

    @property
    def d(self) -> int:
        return self.partition.d

    def local_fit(self, k: int) -> LocalFit:
        return LocalFit(
            center=self.partition.centers[k].copy(),
            h=float(self.bandwidths[k]),
            basis=self.basis,
            coefficients=None if self.empty[k] else self.coefficients[k].copy(),
            n_local=int(self.n_local[k]),
            regularized=bool(self.regularized[k]),
            tau=float(self.taus[k]),
        )

    @property
    def fits(self) -> list[LocalFit]:
        return [self.local_fit(k) for k in range(self.partition.n_cells)]

    def eval_cells(self, pts: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Evaluate the polynomial of ``cells[i]`` at ``pts[i]`` (no domain check)."""
        t = (pts - self.partition.centers[cells]) / self.bandwidths[cells, None]
        return np.einsum("ij,ij->i", eval_U(self.basis, t), self.coefficients[cells])

    def __call__(self, x) -> np.ndarray | float:
        pts, single = _as_points(x, self.d)
        out = self.eval_cells(pts, self.partition.cell_of(pts))
        return float(out[0]) if single else out

    # -- exact extrema along segments -------------------------------------------------

    @cached_property
    def _profile_1d(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell power-series coefficients in ``t = (x - u) / h`` and real critical points in ``t``."""
        C = self.partition.n_cells
        deg = self.basis.degree
        coef = self.coefficients / self.basis.factorials
        crit = np.full((C, max(deg - 1, 0)), np.nan)
        if deg == 2:
            with np.errstate(divide="ignore", invalid="ignore"):
                crit[:, 0] = np.where(coef[:, 2] != 0, -coef[:, 1] / (2.0 * coef[:, 2]), np.nan)
        elif deg > 2:
            P = np.polynomial.polynomial
            for k in range(C):
                dp = np.trim_zeros(P.polyder(coef[k]), "b")
                if dp.size > 1:
                    roots = P.polyroots(dp)
                    real = roots[np.abs(roots.imag) <= 1e-12 * (1.0 + np.abs(roots.real))].real
                    crit[k, : real.size] = real
        return coef, crit

    def interval_range(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``(inf, sup)`` of the estimator over ``[lo_i, hi_i]`` (d = 1).

        Each cell's polynomial is extremized over the closure of its overlap
        with the interval, using the endpoints and interior critical points.
        """
        if self.d != 1:
            raise ValueError("interval_range needs d = 1")
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        M = self.partition.M
        u = self.partition.axis_centers
        coef, crit = self._profile_1d
        polyval = np.polynomial.polynomial.polyval
        klo = self.partition.axis_index(lo)
        khi = self.partition.axis_index(hi)
        vmin = np.full(lo.shape, np.inf)
        vmax = np.full(lo.shape, -np.inf)
        span = int((khi - klo).max()) if lo.size else -1
        for off in range(span + 1):
            k = klo + off
            act = k <= khi
            if not np.any(act):
                continue
            k = np.where(act, k, klo)
            h = self.bandwidths[k]
            a = (np.maximum(lo, k / M) - u[k]) / h
            b = (np.minimum(hi, (k + 1) / M) - u[k]) / h
            c = coef[k].T
            for pt in (a, b):
                v = polyval(pt, c, tensor=False)
                vmin = np.where(act, np.minimum(vmin, v), vmin)
                vmax = np.where(act, np.maximum(vmax, v), vmax)
            for j in range(crit.shape[1]):
                cp = crit[k, j]
                ok = act & (cp >= a) & (cp <= b)
                if np.any(ok):
                    v = polyval(np.where(ok, cp, a), c, tensor=False)
                    vmin = np.where(ok, np.minimum(vmin, v), vmin)
                    vmax = np.where(ok, np.maximum(vmax, v), vmax)
        return vmin, vmax

    def segment_range(self, x: np.ndarray, v: np.ndarray, k0: float, k1: float) -> tuple[float, float]:
        """Exact ``(inf, sup)`` along ``{x + k v : k0 <= k <= k1}`` in any dimension."""
        M = self.partition.M
        breaks = [k0, k1]
        for i in range(self.d):
            if v[i] != 0.0:
                j = np.arange(M + 1) / M
                kk = (j - x[i]) / v[i]
                breaks.extend(kk[(kk > k0) & (kk < k1)])
        breaks = np.unique(np.asarray(breaks))
        deg = self.basis.degree
        lo, hi = np.inf, -np.inf
        for a, b in zip(breaks[:-1], breaks[1:]):
            mid = x + 0.5 * (a + b) * v
            cell = self.partition.flat_index(self.partition.axis_index(np.clip(mid, 0, 1)[None]))[0]
            if deg == 0 or b - a == 0:
                ks = np.array([a, b])
            else:
                # the cell polynomial restricted to the line is a degree-<=l polynomial in k
                nodes = a + (b - a) * 0.5 * (1 - np.cos(np.pi * np.arange(deg + 1) / deg))
                vals = self.eval_cells(x + nodes[:, None] * v, np.full(deg + 1, cell))
                pk = np.polynomial.polynomial.polyfit(nodes - a, vals, deg)
                crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(pk)) \
                    if deg >= 2 else np.array([])
                crit = crit[np.abs(crit.imag) <= 1e-12].real + a if crit.size else crit
                ks = np.concatenate([[a, b], crit[(crit >= a) & (crit <= b)]])
            vals = self.eval_cells(x + ks[:, None] * v, np.full(ks.size, cell))
            lo, hi = min(lo, vals.min()), max(hi, vals.max())
        if breaks.size == 1:
            val = self.eval_cells(x[None] + k0 * v, self.partition.cell_of(np.clip(x + k0 * v, 0, 1)[None]))[0]
            lo = hi = val
        return float(lo), float(hi)


@dataclass(frozen=True)
class PPConfig:
    """Tuning of PP(M, l, h, tau); ``M`` defaults to ``ceil(1/h)`` and ``tau`` to ``1/(n h^d)``."""

    h: float
    degree: int = 1
    M: int | None = None
    tau: float | None = None
    kernel: str = "epanechnikov"

    def resolve(self, n: int, d: int) -> tuple[int, float]:
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        M = self.M if self.M is not None else max(1, math.ceil(1.0 / self.h - 1e-12))
        tau = self.tau if self.tau is not None else default_tau(n, self.h, d)
        if M < 1 or not tau > 0:
            raise ValueError(f"need M >= 1 and tau > 0, got M={M}, tau={tau}")
        return M, tau


@dataclass(frozen=True, eq=False)
class PPEstimator(PiecewisePolynomial):
    config: PPConfig = field(default=None, kw_only=True)

    @property
    def h(self) -> float:
        return float(self.bandwidths[0])


def fit_pp(data: Dataset, config: PPConfig) -> PPEstimator:
    """Fit one regularized LP per grid center, eagerly."""
    M, tau = config.resolve(data.n, data.d)
    part = GridPartition(M, data.d)
    basis = build_basis(config.degree, data.d)
    kernel = KernelSpec(config.kernel, data.d)
    sums = local_sums(data, part.centers, config.h, kernel, basis)
    fit = solve_regularized(sums.gram, sums.response, sums.n_local, tau)
    C = part.n_cells
    return PPEstimator(
        partition=part,
        basis=basis,
        bandwidths=np.full(C, float(config.h)),
        coefficients=fit.coefficients,
        empty=fit.empty,
        regularized=fit.regularized,
        n_local=sums.n_local,
        taus=np.full(C, float(tau)),
        config=config,
    )


def eval_pp(est: PiecewisePolynomial, x) -> np.ndarray | float:
    return est(x)
