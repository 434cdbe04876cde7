"""Perturbation sets, the inner maximization over them, and attack-aware distances.

An attack maps a clean input ``x`` to a set ``A(x)`` of admissible inputs
with ``x in A(x) subset [0,1]^d`` and Euclidean radius at most ``r``.  The
supremum over ``A(x)`` is approximated on a finite candidate set, except for
piecewise polynomial estimators in the segment geometries, where the range of
each cell polynomial is computed exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .partition import PiecewisePolynomial

ATTACK_KINDS = ("identity", "lp_ball", "soda")
QUERY_MODES = ("grid_line", "grid_box", "random")

# default candidate resolution: points per segment, points per axis of a box
DEFAULT_M_SEGMENT = 65
DEFAULT_M_BOX = 17


@dataclass(frozen=True)
class AttackSpec:
    """An attack family with magnitude ``r`` in dimension ``d``.

    ``identity`` leaves the input unchanged.  ``lp_ball`` is the closed
    ``l_p`` ball of radius ``r`` intersected with the unit cube; for
    ``p > 2`` it is further intersected with the Euclidean ball of radius
    ``r``.  ``soda`` is the segment ``x + k v`` with
    ``-c_lo r <= k <= c_hi r``, clipped to the cube.
    """

    kind: str = "identity"
    r: float = 0.0
    d: int = 1
    p: float = math.inf
    direction: tuple[float, ...] | None = None
    c_lo: float = 1.0
    c_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.d < 1:
            raise ValueError("attack dimension must be >= 1")
        if not (self.r >= 0 and math.isfinite(self.r)):
            raise ValueError(f"attack magnitude must be a finite nonnegative real, got {self.r}")
        if self.kind == "identity" and self.r != 0:
            raise ValueError("the identity attack has r = 0")
        if self.kind == "lp_ball" and not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.kind == "soda":
            if self.direction is None or len(self.direction) != self.d:
                raise ValueError(f"soda needs a direction with {self.d} components")
            v = np.asarray(self.direction, dtype=np.float64)
            if not abs(np.linalg.norm(v) - 1.0) <= 1e-12:
                raise ValueError("soda direction must be a unit vector")
            for name in ("c_lo", "c_hi"):
                c = getattr(self, name)
                if not 0.0 <= c <= 1.0:
                    raise ValueError(f"{name} must lie in [0, 1], got {c}")

    @property
    def radius(self) -> float:
        """Radius in the attack's own norm (equal to ``r`` for every family)."""
        return float(self.r)

    @property
    def is_segment(self) -> bool:
        return self.kind == "soda" or (self.kind == "lp_ball" and self.d == 1)

    @property
    def v(self) -> np.ndarray:
        if self.kind == "soda":
            return np.asarray(self.direction, dtype=np.float64)
        return np.eye(self.d)[0]


def Identity(d: int = 1) -> AttackSpec:
    return AttackSpec("identity", 0.0, d)


def LpBall(r: float, p: float = math.inf, d: int = 1) -> AttackSpec:
    return AttackSpec("lp_ball", float(r), d, p=float(p))


def Soda(r: float, direction=None, c_lo: float = 1.0, c_hi: float = 1.0, d: int | None = None) -> AttackSpec:
    """Segment attack along ``direction`` (default: the first axis)."""
    if direction is None:
        d = 1 if d is None else d
        direction = tuple(np.eye(d)[0])
    direction = tuple(float(c) for c in np.ravel(direction))
    return AttackSpec("soda", float(r), len(direction), direction=direction, c_lo=c_lo, c_hi=c_hi)


@dataclass(frozen=True)
class SupQuery:
    """Candidate-set resolution for the inner supremum.

    ``m`` is the number of points per segment (``grid_line``) or per box
    axis (``grid_box``), or the number of random draws (``random``).  When
    ``m`` is ``None`` it defaults to 65 for segments and 17 for boxes.
    Choosing ``m = 2^k + 1`` makes the candidate sets of ``(r, m)`` and
    ``(2r, 2m - 1)`` nested.
    """

    m: int | None = None
    mode: str = "grid_line"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in QUERY_MODES:
            raise ValueError(f"unknown query mode {self.mode!r}; expected one of {QUERY_MODES}")
        if self.m is not None and self.m < 2:
            raise ValueError(f"resolution m must be >= 2, got {self.m}")

    def resolution(self, attack: AttackSpec) -> int:
        if self.m is not None:
            return self.m
        return DEFAULT_M_SEGMENT if attack.is_segment else DEFAULT_M_BOX


def _points(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 0 or (x.ndim == 1 and d > 1)
    pts = x.reshape(-1, d)
    if not (np.all(pts >= 0.0) and np.all(pts <= 1.0)):
        raise ValueError("points must lie in [0, 1]^d")
    return pts, single


def segment_limits(attack: AttackSpec, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Admissible step range ``[k_lo, k_hi]`` of a segment attack at each row of ``X``."""
    v = attack.v
    kmin = np.full(X.shape[0], -np.inf)
    kmax = np.full(X.shape[0], np.inf)
    for i in range(attack.d):
        if v[i] > 0:
            kmin = np.maximum(kmin, -X[:, i] / v[i])
            kmax = np.minimum(kmax, (1.0 - X[:, i]) / v[i])
        elif v[i] < 0:
            kmin = np.maximum(kmin, (1.0 - X[:, i]) / v[i])
            kmax = np.minimum(kmax, -X[:, i] / v[i])
    c_lo, c_hi = (attack.c_lo, attack.c_hi) if attack.kind == "soda" else (1.0, 1.0)
    lo = np.minimum(0.0, np.maximum(kmin, -c_lo * attack.r))
    hi = np.maximum(0.0, np.minimum(kmax, c_hi * attack.r))
    return lo, hi


def _box_offsets(attack: AttackSpec, m: int, mode: str, seed: int) -> np.ndarray:
    d, r, p = attack.d, attack.r, attack.p
    if mode == "random":
        rng = np.random.default_rng(seed)
        offs = rng.uniform(-r, r, size=(m, d))
    else:
        ax = np.linspace(-r, r, m)
        offs = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # extreme points along each axis, and the origin
    axes = np.concatenate([np.eye(d) * r, -np.eye(d) * r, np.zeros((1, d))])
    offs = np.concatenate([offs, axes])
    if math.isinf(p):
        keep = np.ones(offs.shape[0], dtype=bool)
    else:
        keep = np.sum(np.abs(offs) ** p, axis=1) <= r**p * (1.0 + 1e-12)
    if p > 2:
        keep &= np.sum(offs * offs, axis=1) <= r * r * (1.0 + 1e-12)
    return offs[keep]


def candidates(attack: AttackSpec, x, query: SupQuery = SupQuery()) -> np.ndarray:
    """Candidate points of ``A(x)`` for each query point.

    Returns an array of shape ``(n, m', d)``; every candidate lies in the
    unit cube within Euclidean distance ``r`` of its ``x``, and the first
    candidate is ``x`` itself.
    """
    X, _ = _points(x, attack.d)
    n, d = X.shape
    if attack.kind == "identity" or attack.r == 0:
        return X[:, None, :].copy()
    m = query.resolution(attack)
    if attack.is_segment:
        c_lo, c_hi = (attack.c_lo, attack.c_hi) if attack.kind == "soda" else (1.0, 1.0)
        if query.mode == "random":
            ks = np.random.default_rng(query.seed).uniform(-c_lo * attack.r, c_hi * attack.r, m)
            ks = np.concatenate([[0.0, -c_lo * attack.r, c_hi * attack.r], ks])
        else:
            # the grid is laid on the nominal segment and then clipped, which keeps
            # the sets nested under (r, m) -> (2r, 2m - 1) and hits both endpoints
            ks = np.concatenate([[0.0], np.linspace(-c_lo * attack.r, c_hi * attack.r, m)])
        lo, hi = segment_limits(attack, X)
        kk = np.clip(ks[None, :], lo[:, None], hi[:, None])
        pts = X[:, None, :] + kk[..., None] * attack.v
    else:
        offs = _box_offsets(attack, m, "random" if query.mode == "random" else "grid_box", query.seed)
        offs = np.concatenate([np.zeros((1, d)), offs])
        pts = X[:, None, :] + offs[None]
    # clipping toward the cube shrinks every coordinate offset, so points stay admissible
    pts = np.clip(pts, 0.0, 1.0)
    pts[:, 0, :] = X
    return pts


def _evaluate(g, pts: np.ndarray) -> np.ndarray:
    n, m, d = pts.shape
    vals = np.asarray(g(pts.reshape(n * m, d)), dtype=np.float64)
    return vals.reshape(n, m)


def sup_over_attack(g, x, attack: AttackSpec, query: SupQuery = SupQuery()):
    """Maximum of ``g`` over the candidate set of ``A(x)``, with its argmax.

    For a single point returns ``(value, argmax)``; for a batch of shape
    ``(n, d)`` returns arrays of shape ``(n,)`` and ``(n, d)``.
    """
    X, single = _points(x, attack.d)
    pts = candidates(attack, X, query)
    vals = _evaluate(g, pts)
    j = np.argmax(vals, axis=1)
    rows = np.arange(X.shape[0])
    value, arg = vals[rows, j], pts[rows, j]
    if single:
        return float(value[0]), (float(arg[0, 0]) if attack.d == 1 else arg[0])
    return value, arg


def attack_extrema(g, X, attack: AttackSpec, query: SupQuery = SupQuery()) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``(inf, sup)`` of ``g`` over ``A(x)`` for each row of ``X``.

    Piecewise polynomial estimators on segment attacks use the exact
    cell-by-cell range; everything else uses the candidate set.
    """
    X, _ = _points(X, attack.d)
    if attack.kind == "identity" or attack.r == 0:
        v = np.asarray(g(X), dtype=np.float64).reshape(-1)
        return v, v.copy()
    if isinstance(g, PiecewisePolynomial) and attack.is_segment:
        lo, hi = segment_limits(attack, X)
        if attack.d == 1:
            s = attack.v[0]
            a = np.clip(X[:, 0] + np.where(s > 0, lo, hi) * s, 0.0, 1.0)
            b = np.clip(X[:, 0] + np.where(s > 0, hi, lo) * s, 0.0, 1.0)
            return g.interval_range(a, b)
        out = np.array([g.segment_range(X[i], attack.v, lo[i], hi[i]) for i in range(X.shape[0])])
        return out[:, 0], out[:, 1]
    if isinstance(g, PiecewisePolynomial):
        return _pp_box_extrema(g, X, attack, query)
    vals = _evaluate(g, candidates(attack, X, query))
    return vals.min(axis=1), vals.max(axis=1)


def _pp_box_extrema(g: PiecewisePolynomial, X: np.ndarray, attack: AttackSpec, query: SupQuery):
    """Probe every cell meeting the bounding box of ``A(x)`` on its own sub-grid."""
    M, d = g.partition.M, g.d
    m = query.resolution(attack)
    base = _box_offsets(attack, m, "grid_box", query.seed)
    vmin = np.empty(X.shape[0])
    vmax = np.empty(X.shape[0])
    for i, x in enumerate(X):
        box_lo = np.clip(x - attack.r, 0.0, 1.0)
        box_hi = np.clip(x + attack.r, 0.0, 1.0)
        k_lo = g.partition.axis_index(box_lo[None])[0]
        k_hi = g.partition.axis_index(box_hi[None])[0]
        pts = [x[None], np.clip(x + base, 0.0, 1.0)]
        cells = [g.partition.cell_of(x[None]), g.partition.cell_of(pts[1])]
        ranges = [np.arange(a, b + 1) for a, b in zip(k_lo, k_hi)]
        for idx in np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d):
            lo = np.maximum(box_lo, idx / M)
            hi = np.minimum(box_hi, (idx + 1) / M)
            ax = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
            grid = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, d)
            off = grid - x
            keep = _in_ball(off, attack)
            if np.any(keep):
                pts.append(grid[keep])
                # each probe is evaluated with the polynomial of the probed cell
                cells.append(np.full(int(keep.sum()), g.partition.flat_index(idx[None])[0]))
        P = np.concatenate(pts)
        vals = g.eval_cells(P, np.concatenate(cells))
        vmin[i], vmax[i] = vals.min(), vals.max()
    return vmin, vmax


def _in_ball(off: np.ndarray, attack: AttackSpec) -> np.ndarray:
    r, p = attack.r, attack.p
    keep = np.ones(off.shape[0], dtype=bool) if math.isinf(p) else \
        np.sum(np.abs(off) ** p, axis=1) <= r**p * (1.0 + 1e-12)
    if p > 2:
        keep &= np.sum(off * off, axis=1) <= r * r * (1.0 + 1e-12)
    return keep


def max_deviation(f, x, attack: AttackSpec, query: SupQuery = SupQuery()):
    """``sup_{x' in A(x)} |f(x') - f(x)|`` over the candidate set."""
    X, single = _points(x, attack.d)
    vals = _evaluate(f, candidates(attack, X, query))
    dev = np.max(np.abs(vals - vals[:, :1]), axis=1)
    return float(dev[0]) if single else dev


def midpoint_grid(quad: int, d: int) -> np.ndarray:
    """Midpoints of the ``quad^d`` uniform cells of the unit cube."""
    if quad < 1:
        raise ValueError("quadrature resolution must be >= 1")
    ax = (np.arange(quad) + 0.5) / quad
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _mean_over_grid(values_of, grid: np.ndarray, jobs: int, chunk: int = 4096) -> float:
    """Order-independent mean of ``values_of(chunk)`` over the rows of ``grid``."""
    parts = [grid[i:i + chunk] for i in range(0, grid.shape[0], chunk)]
    if jobs > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vals = list(pool.map(values_of, parts))
    else:
        vals = [values_of(p) for p in parts]
    return math.fsum(np.concatenate(vals).tolist()) / grid.shape[0]


def adversarial_distance(f, g, attack: AttackSpec, q: float = 2.0, quad: int = 1024,
                         query: SupQuery = SupQuery(), jobs: int = 1) -> float:
    """``[ int sup_{x' in A(x)} |f(x') - g(x)|^q dx ]^{1/q}`` by midpoint quadrature."""
    if not q >= 1 or math.isinf(q):
        raise ValueError(f"q must be a finite real >= 1, got {q}")
    grid = midpoint_grid(quad, attack.d)

    def values(X):
        lo, hi = attack_extrema(f, X, attack, query)
        gx = np.asarray(g(X), dtype=np.float64).reshape(-1)
        return np.maximum(np.abs(hi - gx), np.abs(lo - gx)) ** q

    return _mean_over_grid(values, grid, jobs) ** (1.0 / q)


def deviation_functional_G(f, attack: AttackSpec, q: float = 2.0, quad: int = 1024,
                           query: SupQuery = SupQuery(), jobs: int = 1) -> float:
    """Half the ``L_q`` norm of the oscillation ``sup_{A(x)} f - inf_{A(x)} f``."""
    if not q >= 1 or math.isinf(q):
        raise ValueError(f"q must be a finite real >= 1, got {q}")
    grid = midpoint_grid(quad, attack.d)

    def values(X):
        lo, hi = attack_extrema(f, X, attack, query)
        return (hi - lo) ** q

    return 0.5 * _mean_over_grid(values, grid, jobs) ** (1.0 / q)
