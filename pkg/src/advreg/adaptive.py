"""Lepski-type bandwidth selection and the adaptive piecewise estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .basis import KernelSpec, MultiIndexBasis, build_basis
from .localpoly import Dataset, LocalSums, default_tau, local_sums, solve_regularized
from .partition import GridPartition, PiecewisePolynomial


@dataclass(frozen=True)
class BandwidthGrid:
    """Candidate smoothness levels ``(1 + 1/log n)^j`` and bandwidths ``n^{-1/(2 beta_j + d)}``."""

    n: int
    d: int
    beta_max: float
    J: int
    J_max: int

    @cached_property
    def js(self) -> np.ndarray:
        return np.arange(-self.J, self.J_max + 1)

    @cached_property
    def betas(self) -> np.ndarray:
        return (1.0 + 1.0 / math.log(self.n)) ** self.js.astype(np.float64)

    @cached_property
    def bandwidths(self) -> np.ndarray:
        return self.n ** (-1.0 / (2.0 * self.betas + self.d))

    def __len__(self) -> int:
        return self.js.size

    def oracle_bandwidth(self, beta: float) -> float:
        """Largest grid bandwidth with ``h^{2 beta} <= log n / (n h^d)``; smallest if none."""
        H = self.bandwidths
        ok = H ** (2.0 * beta) <= math.log(self.n) / (self.n * H**self.d)
        return float(H[ok].max()) if np.any(ok) else float(H.min())


def build_grid(n: int, d: int, beta_max: float) -> BandwidthGrid:
    if n < 3:
        raise ValueError(f"need n >= 3 so that log log n > 0, got {n}")
    if not beta_max > 0:
        raise ValueError(f"beta_max must be positive, got {beta_max}")
    log_n = math.log(n)
    J = 2 * math.floor(log_n * math.log(log_n))
    J_max = min(J, math.floor(log_n * math.log(beta_max)))
    if J_max < -J:
        raise ValueError(f"bandwidth grid is empty for n={n}, beta_max={beta_max}")
    return BandwidthGrid(n=n, d=d, beta_max=float(beta_max), J=J, J_max=J_max)


def tau_of(h: float, n: int, d: int) -> float:
    return default_tau(n, h, d)


def _stat_matrix(
    inner: LocalSums, outer: LocalSums, theta_outer: np.ndarray, tau_inner: float, ratio: float
) -> np.ndarray:
    """``|| D~^{-1/2} (a' - B' R theta) ||_inf`` for a batch of centers.

    ``inner`` holds the sums at the smaller bandwidth ``h'``; ``theta_outer``
    the regularized solutions at ``h``; ``ratio = h' / h``.
    """
    R = ratio ** inner.basis.orders.astype(np.float64)
    resid = inner.response - np.einsum("kij,kj->ki", inner.gram, theta_outer * R)
    diag = inner.scale_diag
    # regularize D exactly as B: shift all entries when the smallest falls below tau
    shift = np.where(diag.min(axis=1) < tau_inner, tau_inner, 0.0)
    return np.max(np.abs(resid) / np.sqrt(diag + shift[:, None]), axis=1)


def lepski_statistic(
    data: Dataset,
    u,
    h_inner: float,
    h_outer: float,
    kernel: KernelSpec,
    basis: MultiIndexBasis,
) -> float:
    """Comparison statistic between the fits at ``h_inner <= h_outer`` around ``u``.

    Infinite when the ball at the outer bandwidth holds no design point.
    """
    if h_inner > h_outer:
        raise ValueError("need h_inner <= h_outer")
    outer = local_sums(data, u, h_outer, kernel, basis)
    if outer.n_local[0] == 0:
        return math.inf
    inner = local_sums(data, u, h_inner, kernel, basis)
    fit = solve_regularized(outer.gram, outer.response, outer.n_local, tau_of(h_outer, data.n, data.d))
    stat = _stat_matrix(inner, outer, fit.coefficients, tau_of(h_inner, data.n, data.d), h_inner / h_outer)
    return float(stat[0])


@dataclass(frozen=True)
class Selection:
    """Per-center outcome of the bandwidth search."""

    index: np.ndarray  # (K,) position in the grid of the selected bandwidth
    passed: np.ndarray  # (K, |H|) bool, whether each candidate passes all comparisons
    fallback: np.ndarray  # (K,) bool, no candidate passed
    coefficients: np.ndarray  # (K, N) regularized LP solution at the selected bandwidth
    empty: np.ndarray
    regularized: np.ndarray
    n_local: np.ndarray


def select_bandwidths(
    data: Dataset,
    centers,
    grid: BandwidthGrid | np.ndarray,
    c_lep: float,
    kernel: KernelSpec,
    basis: MultiIndexBasis,
) -> Selection:
    """Run the bandwidth search at every center simultaneously.

    A candidate ``h`` passes when, for every grid bandwidth ``h' <= h``, the
    comparison statistic is at most ``c_lep * sqrt(log n / (n h'^d))``.  The
    largest passing candidate is selected; when none passes the smallest
    candidate is used.
    """
    H = np.sort(np.asarray(grid.bandwidths if isinstance(grid, BandwidthGrid) else grid, dtype=np.float64))
    if H.size == 0:
        raise ValueError("bandwidth grid is empty")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, data.d)
    n, d = data.n, data.d
    K = centers.shape[0]
    sums = [local_sums(data, centers, h, kernel, basis) for h in H]
    taus = [tau_of(h, n, d) for h in H]
    fits = [solve_regularized(s.gram, s.response, s.n_local, t) for s, t in zip(sums, taus)]
    thresh = c_lep * np.sqrt(math.log(n) / (n * H**d))

    passed = np.zeros((K, H.size), dtype=bool)
    for j, h in enumerate(H):
        ok = sums[j].n_local > 0
        for i in range(j + 1):
            if not np.any(ok):
                break
            stat = _stat_matrix(sums[i], sums[j], fits[j].coefficients, taus[i], H[i] / h)
            ok &= stat <= thresh[i]
        passed[:, j] = ok

    any_pass = passed.any(axis=1)
    last = H.size - 1 - np.argmax(passed[:, ::-1], axis=1)
    index = np.where(any_pass, last, 0)
    rows = np.arange(K)
    stack = lambda attr: np.stack([getattr(f, attr) for f in fits], axis=1)[rows, index]
    return Selection(
        index=index,
        passed=passed,
        fallback=~any_pass,
        coefficients=np.stack([f.coefficients for f in fits], axis=1)[rows, index],
        empty=stack("empty"),
        regularized=stack("regularized"),
        n_local=np.stack([s.n_local for s in sums], axis=1)[rows, index],
    )


def select_bandwidth(
    data: Dataset,
    u,
    grid: BandwidthGrid | np.ndarray,
    c_lep: float,
    kernel: KernelSpec,
    basis: MultiIndexBasis,
) -> float:
    sel = select_bandwidths(data, u, grid, c_lep, kernel, basis)
    H = np.sort(np.asarray(grid.bandwidths if isinstance(grid, BandwidthGrid) else grid))
    return float(H[sel.index[0]])


def noise_scale(data: Dataset) -> float:
    """Robust noise level from nearest-neighbour response differences (MAD based)."""
    if data.n < 2:
        return 0.0
    if data.d == 1:
        order = data._order
        diffs = np.diff(data.Y[order])
    else:
        _, nn = cKDTree(data.X).query(data.X, k=2)
        diffs = data.Y - data.Y[nn[:, 1]]
    return float(np.median(np.abs(diffs - np.median(diffs))) / (0.6744897501960817 * math.sqrt(2.0)))


def default_c_lep(data: Dataset, degree: int, kernel: KernelSpec) -> float:
    """Practical threshold constant ``2 (l + 1) sigma_hat K_max``."""
    return 2.0 * (degree + 1) * noise_scale(data) * kernel.k_max


@dataclass(frozen=True)
class AdaptiveConfig:
    beta_max: float = 2.0
    c_lep: float | None = None
    degree: int = 2
    kernel: str = "epanechnikov"
    M: int | None = None

    def __post_init__(self):
        if not self.beta_max > 0:
            raise ValueError(f"beta_max must be positive, got {self.beta_max}")
        if self.degree < math.floor(self.beta_max):
            raise ValueError(
                f"degree {self.degree} is below floor(beta_max) = {math.floor(self.beta_max)}"
            )
        if self.c_lep is not None and not self.c_lep > 0:
            raise ValueError("c_lep must be positive")


@dataclass(frozen=True, eq=False)
class AdaptiveEstimator(PiecewisePolynomial):
    grid: BandwidthGrid = field(default=None, kw_only=True)
    c_lep: float = field(default=math.nan, kw_only=True)
    fallback: np.ndarray = field(default=None, kw_only=True)

    @property
    def selected(self) -> np.ndarray:
        return self.bandwidths


def fit_adaptive(data: Dataset, config: AdaptiveConfig) -> AdaptiveEstimator:
    grid = build_grid(data.n, data.d, config.beta_max)
    M = config.M if config.M is not None else data.n
    part = GridPartition(M, data.d)
    basis = build_basis(config.degree, data.d)
    kernel = KernelSpec(config.kernel, data.d)
    c_lep = config.c_lep if config.c_lep is not None else default_c_lep(data, config.degree, kernel)
    sel = select_bandwidths(data, part.centers, grid, c_lep, kernel, basis)
    H = np.sort(grid.bandwidths)
    hs = H[sel.index]
    return AdaptiveEstimator(
        partition=part,
        basis=basis,
        bandwidths=hs,
        coefficients=sel.coefficients,
        empty=sel.empty,
        regularized=sel.regularized,
        n_local=sel.n_local,
        taus=np.array([tau_of(h, data.n, data.d) for h in hs]),
        grid=grid,
        c_lep=float(c_lep),
        fallback=sel.fallback,
    )
