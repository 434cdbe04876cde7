"""Regularized local polynomial (LP) estimation at a single center.

The local Gram matrix, response vector and diagonal scale matrix are all
built from kernel-weighted moments of the rescaled design
``t_i = (X_i - u) / h``.  Because ``U(t)_s U(t)_{s'} = t**(s+s') / (s! s'!)``,
every entry of ``B`` is a moment of total degree ``<= 2 * degree``, so the
batched path only accumulates ``binom(2l + d, d)`` sums per center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .basis import KernelSpec, MultiIndexBasis, build_basis, eval_U, monomials
from .exceptions import NumericalError

# pairs (center, point) processed per chunk when accumulating moments
_CHUNK_PAIRS = 1 << 21


@dataclass(frozen=True)
class Dataset:
    """A regression sample ``(X_i, Y_i)`` with design points in the unit cube."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has shape {X.shape}, Y has shape {Y.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one point")
        if not (np.all(X >= 0.0) and np.all(X <= 1.0)):
            raise ValueError("design points must lie in [0, 1]^d")
        if not np.all(np.isfinite(Y)):
            raise ValueError("responses must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @cached_property
    def _order(self) -> np.ndarray:
        return np.argsort(self.X[:, 0], kind="stable")

    @cached_property
    def _sorted_x(self) -> np.ndarray:
        return self.X[self._order, 0]

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.X)

    def with_responses(self, Y) -> "Dataset":
        return Dataset(self.X, Y)

    def neighbors(self, centers: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
        """All (center, point) pairs with ``||X_i - u|| <= h``.

        Returns ``(center_index, point_index)``, grouped by center in
        ascending order; within a center the point order is deterministic.
        """
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, self.d)
        if self.d == 1:
            xs = self._sorted_x
            # widened window; the exact distance test below decides membership
            slack = 4.0 * np.finfo(np.float64).eps
            lo = np.searchsorted(xs, centers[:, 0] - h - slack, side="left")
            hi = np.searchsorted(xs, centers[:, 0] + h + slack, side="right")
            counts = np.maximum(hi - lo, 0)
            cidx = np.repeat(np.arange(centers.shape[0]), counts)
            offs = np.arange(cidx.size) - np.repeat(np.cumsum(counts) - counts, counts)
            pidx = self._order[np.repeat(lo, counts) + offs]
            keep = np.abs(self.X[pidx, 0] - centers[cidx, 0]) <= h
            return cidx[keep], pidx[keep]
        lists = self._tree.query_ball_point(centers, r=h, return_sorted=True)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        cidx = np.repeat(np.arange(centers.shape[0]), counts)
        pidx = np.fromiter(
            (i for l in lists for i in l), dtype=np.int64, count=int(counts.sum())
        )
        diff = self.X[pidx] - centers[cidx]
        keep = np.sqrt(np.sum(diff * diff, axis=1)) <= h
        return cidx[keep], pidx[keep]


@dataclass(frozen=True)
class LocalSums:
    """Kernel-weighted moments for a batch of centers at one bandwidth."""

    centers: np.ndarray  # (K, d)
    h: float
    basis: MultiIndexBasis
    moments: np.ndarray  # (K, Nm) over the degree-2l basis
    response: np.ndarray  # (K, N), this is a_{uh}
    n_local: np.ndarray  # (K,)

    @cached_property
    def _moment_basis(self) -> MultiIndexBasis:
        return build_basis(2 * self.basis.degree, self.basis.dim)

    @cached_property
    def _gram_index(self) -> np.ndarray:
        mb = self._moment_basis
        exps = self.basis.indices
        return np.array(
            [[mb.position[tuple(a + b for a, b in zip(s, t))] for t in exps] for s in exps],
            dtype=np.int64,
        )

    @cached_property
    def gram(self) -> np.ndarray:
        """``B_{uh}`` for every center, shape (K, N, N)."""
        fact = self.basis.factorials
        return self.moments[:, self._gram_index] / np.outer(fact, fact)

    @cached_property
    def scale_diag(self) -> np.ndarray:
        """Diagonal of ``D_{uh}`` for every center, shape (K, N)."""
        return np.diagonal(self.gram, axis1=1, axis2=2).copy()


def local_sums(
    data: Dataset,
    centers,
    h: float,
    kernel: KernelSpec,
    basis: MultiIndexBasis,
) -> LocalSums:
    """Accumulate the LP moments at every center in one pass over the data."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if kernel.dim != data.d or basis.dim != data.d:
        raise ValueError(
            f"kernel (d={kernel.dim}) and basis (d={basis.dim}) must match the data (d={data.d})"
        )
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, data.d)
    K = centers.shape[0]
    mb = build_basis(2 * basis.degree, basis.dim)
    # position of each U-index inside the moment basis
    sub = np.array([mb.position[s] for s in basis.indices], dtype=np.int64)
    moments = np.zeros((K, mb.size))
    response = np.zeros((K, basis.size))
    n_local = np.zeros(K, dtype=np.int64)
    scale = 1.0 / (data.n * h**data.d)

    if data.d == 1:
        _local_sums_1d(data, centers[:, 0], h, kernel, basis.degree, moments, response, n_local)
        start = K
    else:
        start = 0
    # chunk centers so the pair arrays stay bounded
    while start < K:
        stop = _chunk_stop(data, centers, h, start)
        cidx, pidx = data.neighbors(centers[start:stop], h)
        if cidx.size:
            t = (data.X[pidx] - centers[start + cidx]) / h
            w = kernel(t)
            mono = monomials(mb.exponents, t) * w[:, None]
            yw = mono[:, sub] * data.Y[pidx, None]
            k = stop - start
            for j in range(mb.size):
                moments[start:stop, j] = np.bincount(cidx, weights=mono[:, j], minlength=k)
            for j in range(basis.size):
                response[start:stop, j] = np.bincount(cidx, weights=yw[:, j], minlength=k)
            n_local[start:stop] = np.bincount(cidx, minlength=k)
        start = stop
    moments *= scale
    response *= scale / basis.factorials
    return LocalSums(centers, float(h), basis, moments, response, n_local)


def _local_sums_1d(data, u, h, kernel, degree, moments, response, n_local):
    """Sorted-window accumulation for d = 1 (moment basis is 1, t, ..., t^(2l))."""
    xs = data._sorted_x
    ys = data.Y[data._order]
    slack = 4.0 * np.finfo(np.float64).eps
    lo_all = np.searchsorted(xs, u - h - slack, side="left")
    hi_all = np.searchsorted(xs, u + h + slack, side="right")
    counts_all = hi_all - lo_all
    per_center = max(1.0, float(counts_all.mean())) if u.size else 1.0
    step = max(1, int(_CHUNK_PAIRS // per_center))
    for start in range(0, u.size, step):
        stop = min(u.size, start + step)
        lo, counts = lo_all[start:stop], counts_all[start:stop]
        total = int(counts.sum())
        if total == 0:
            continue
        seg = np.cumsum(counts) - counts
        offs = np.arange(total) - np.repeat(seg, counts)
        pidx = np.repeat(lo, counts) + offs
        diff = xs[pidx] - np.repeat(u[start:stop], counts)
        # membership is decided on the unscaled distance, as in neighbors()
        member = np.abs(diff) <= h
        t = diff / h
        w = np.where(member, kernel.radial(np.minimum(t * t, 1.0)), 0.0)
        nz = counts > 0
        starts = np.minimum(seg, total - 1)
        col = w
        y = ys[pidx]
        for m in range(2 * degree + 1):
            if m:
                col = col * t
            moments[start:stop, m] = np.where(nz, np.add.reduceat(col, starts), 0.0)
            if m <= degree:
                response[start:stop, m] = np.where(nz, np.add.reduceat(col * y, starts), 0.0)
        n_local[start:stop] = np.where(nz, np.add.reduceat(member.astype(np.int64), starts), 0)


def _chunk_stop(data: Dataset, centers: np.ndarray, h: float, start: int) -> int:
    # expected pairs per center under a uniform design, floored at 1
    vol = min(1.0, (2.0 * h) ** data.d)
    per_center = max(1.0, data.n * vol)
    step = max(1, int(_CHUNK_PAIRS // per_center))
    return min(centers.shape[0], start + step)


def assemble_B(data: Dataset, u, h: float, kernel: KernelSpec, basis: MultiIndexBasis) -> np.ndarray:
    return local_sums(data, u, h, kernel, basis).gram[0]


def assemble_a(data: Dataset, u, h: float, kernel: KernelSpec, basis: MultiIndexBasis) -> np.ndarray:
    return local_sums(data, u, h, kernel, basis).response[0]


def assemble_D(data: Dataset, u, h: float, kernel: KernelSpec, basis: MultiIndexBasis) -> np.ndarray:
    return np.diag(local_sums(data, u, h, kernel, basis).scale_diag[0])


def default_tau(n: int, h: float, d: int) -> float:
    """Regularization level ``1 / (n h^d)``."""
    return 1.0 / (n * h**d)


@dataclass(frozen=True)
class BatchFit:
    """Regularized LP solutions for a batch of centers."""

    coefficients: np.ndarray  # (K, N); rows of empty fits are zero
    empty: np.ndarray  # (K,) bool
    regularized: np.ndarray  # (K,) bool
    lam_min: np.ndarray  # (K,) smallest eigenvalue of the unregularized Gram
    condition: np.ndarray  # (K,) 2-norm condition number of the solved matrix


def solve_regularized(gram: np.ndarray, response: np.ndarray, n_local: np.ndarray, tau) -> BatchFit:
    """Solve ``(B + tau I 1{lam_min(B) < tau}) theta = a`` for each center.

    ``tau`` may be a scalar or one value per center.  Centers without any
    design point in their ball are flagged empty and get zero coefficients.
    """
    K, N, _ = gram.shape
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (K,))
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    empty = n_local == 0
    lam = np.linalg.eigvalsh(gram) if K else np.zeros((0, N))
    lam_min = lam[:, 0] if K else np.zeros(0)
    regularized = (lam_min < tau) & ~empty
    mats = gram + (tau * regularized)[:, None, None] * np.eye(N)
    shift = np.where(regularized, tau, 0.0)
    lam_reg = lam + shift[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.where(empty, np.nan, lam_reg[:, -1] / lam_reg[:, 0])
    coef = np.zeros((K, N))
    live = np.flatnonzero(~empty)
    if live.size:
        coef[live] = _spd_solve(mats[live], response[live])
    return BatchFit(coef, empty, regularized, lam_min, condition)


def _spd_solve(mats: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        return np.stack([_spd_solve_one(m, b) for m, b in zip(mats, rhs)])
    y = np.linalg.solve(L, rhs[..., None])
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]


def _spd_solve_one(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(mat)
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(mat)
        if w[0] <= 0:
            raise NumericalError(
                f"regularized Gram matrix is not positive definite (lambda_min={w[0]:.3e})"
            ) from None
        return V @ ((V.T @ rhs) / w)


@dataclass(frozen=True)
class LocalFit:
    """A fitted LP(l, h, tau) polynomial around one center.

    ``coefficients`` is ``None`` when the closed ball ``B(u, h)`` holds no
    design point; the fit then evaluates to zero everywhere.
    """

    center: np.ndarray
    h: float
    basis: MultiIndexBasis
    coefficients: np.ndarray | None
    n_local: int
    regularized: bool
    tau: float
    condition: float = math.nan

    @property
    def empty(self) -> bool:
        return self.coefficients is None

    def __call__(self, x) -> np.ndarray | float:
        return eval_local(self, x)


def fit_local(
    data: Dataset,
    u,
    h: float,
    tau: float,
    kernel: KernelSpec,
    basis: MultiIndexBasis,
) -> LocalFit:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sums = local_sums(data, u, h, kernel, basis)
    fit = solve_regularized(sums.gram, sums.response, sums.n_local, tau)
    empty = bool(fit.empty[0])
    return LocalFit(
        center=sums.centers[0].copy(),
        h=float(h),
        basis=basis,
        coefficients=None if empty else fit.coefficients[0],
        n_local=int(sums.n_local[0]),
        regularized=bool(fit.regularized[0]),
        tau=float(tau),
        condition=float(fit.condition[0]),
    )


def eval_local(fit: LocalFit, x) -> np.ndarray | float:
    """Evaluate ``theta^T U((x - u) / h)``; zero for an empty fit."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0 or (x.ndim == 1 and fit.basis.dim > 1)
    pts = x.reshape(-1, fit.basis.dim)
    if fit.empty:
        out = np.zeros(pts.shape[0])
    else:
        out = eval_U(fit.basis, (pts - fit.center) / fit.h) @ fit.coefficients
    return float(out[0]) if scalar else out
