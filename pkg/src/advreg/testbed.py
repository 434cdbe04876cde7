"""Ground-truth regression functions, design and noise models, and data generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import PackingError
from .localpoly import Dataset


def _points(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 0 or (x.ndim == 1 and d > 1)
    return x.reshape(-1, d), single


class TruthFunction:
    """Base class: a vectorized function on ``[0,1]^d``.

    Subclasses implement ``_eval`` on an ``(n, d)`` array; calling the
    instance accepts a single point or a batch.
    """

    d: int

    def _eval(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        X, single = _points(x, self.d)
        out = self._eval(X)
        return float(out[0]) if single else out


def eval_truth(f: TruthFunction, x):
    X, _ = _points(x, f.d)
    if not (np.all(X >= 0.0) and np.all(X <= 1.0)):
        raise ValueError("points must lie in [0, 1]^d")
    return f(x)


@dataclass(frozen=True)
class Polynomial(TruthFunction):
    """``sum_s c_s x^s`` over the given ``(multi-index, coefficient)`` terms."""

    terms: tuple[tuple[tuple[int, ...], float], ...]
    d: int = 1

    def __post_init__(self):
        for s, _ in self.terms:
            if len(s) != self.d or min(s) < 0:
                raise ValueError(f"bad multi-index {s} for dimension {self.d}")

    @classmethod
    def from_coeffs(cls, coeffs, d: int = 1) -> "Polynomial":
        """Univariate polynomial in ``x_1`` with coefficients in increasing degree."""
        return cls(tuple(((j,) + (0,) * (d - 1), float(c)) for j, c in enumerate(coeffs)), d)

    @property
    def degree(self) -> int:
        return max((sum(s) for s, c in self.terms if c != 0), default=0)

    def _eval(self, X):
        out = np.zeros(X.shape[0])
        for s, c in self.terms:
            out += c * np.prod(X ** np.asarray(s, dtype=np.float64), axis=1)
        return out


@dataclass(frozen=True)
class HolderPower(TruthFunction):
    """``A ||x - 1/2||^beta`` for ``0 < beta <= 1``.

    The amplitude ``A = C / (2 max(1, (sqrt(d)/2)^beta))`` keeps both the
    function's sup norm and its order-0 Hoelder constant below ``C``.
    """

    beta: float
    C: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"HolderPower needs 0 < beta <= 1, got {self.beta}")
        if not self.C > 0:
            raise ValueError("C must be positive")

    @property
    def amplitude(self) -> float:
        return self.C / (2.0 * max(1.0, (math.sqrt(self.d) / 2.0) ** self.beta))

    def _eval(self, X):
        return self.amplitude * np.linalg.norm(X - 0.5, axis=1) ** self.beta


def eval_phi0(x, beta: float):
    """The four-branch ramp: 0, a rising power, a flat top, a falling power."""
    if not 0 < beta <= 1:
        raise ValueError(f"phi0 is defined for 0 < beta <= 1, got {beta}")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("phi0 is defined on [0, 1]")
    out = np.select(
        [arr < 0.25, arr < 0.5, arr < 0.75],
        [np.zeros_like(arr), np.abs(arr - 0.25) ** beta, np.full_like(arr, 4.0**-beta)],
        np.abs(1.0 - arr) ** beta,
    )
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StaircaseF0(TruthFunction):
    """Periodic ramps of period ``8r`` along the first axis, zero past ``a_K = 8Kr``."""

    beta: float
    C: float
    r: float
    d: int = 1

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"StaircaseF0 needs 0 < beta <= 1, got {self.beta}")
        if not 0 < self.r < 0.125:
            raise ValueError(f"StaircaseF0 needs 0 < r < 1/8, got {self.r}")

    @property
    def K(self) -> int:
        return math.floor(1.0 / (8.0 * self.r))

    @property
    def flat_top(self) -> float:
        return 0.5 * self.C * (8.0 * self.r) ** self.beta * 4.0**-self.beta

    def _eval(self, X):
        period = 8.0 * self.r
        x1 = X[:, 0]
        k = np.floor(x1 / period)
        local = np.clip(x1 / period - k, 0.0, 1.0)
        val = 0.5 * self.C * period**self.beta * eval_phi0(local, self.beta)
        return np.where(k < self.K, val, 0.0)


def eval_psi0(x):
    """``exp(-1 / (1 - (x - 1)^2))`` on ``[0, 1]``, zero elsewhere (continuous at 0)."""
    x = np.asarray(x, dtype=np.float64)
    inside = (x > 0) & (x <= 1)
    den = np.where(inside, 1.0 - (x - 1.0) ** 2, 1.0)
    out = np.where(inside, np.exp(-1.0 / den), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BumpF0(TruthFunction):
    """Smooth step along the first axis: 0 below ``2r``, ``B exp(-1)`` above ``1 - 2r``."""

    beta: float
    r: float
    B: float | None = None
    C: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"BumpF0 is the beta > 1 construction, got beta={self.beta}")
        if not 0 < self.r < 0.125:
            raise ValueError(f"BumpF0 needs 0 < r < 1/8, got {self.r}")

    @property
    def amplitude(self) -> float:
        return self.C / 10.0 if self.B is None else float(self.B)

    def _eval(self, X):
        x1 = X[:, 0]
        r = self.r
        mid = self.amplitude * eval_psi0(np.clip((x1 - 2 * r) / (1 - 4 * r), 0.0, 1.0))
        return np.where(x1 < 2 * r, 0.0, np.where(x1 < 1 - 2 * r, mid, self.amplitude * math.exp(-1.0)))


@dataclass(frozen=True)
class Constant(TruthFunction):
    value: float = 0.0
    d: int = 1

    def _eval(self, X):
        return np.full(X.shape[0], float(self.value))


# -- packing construction ---------------------------------------------------------------


def _raw_bump(Z: np.ndarray) -> np.ndarray:
    """``exp(-1 / (1 - 4 ||z||^2))`` on the open ball of radius 1/2."""
    sq = np.sum(Z * Z, axis=-1)
    inside = sq < 0.25
    den = np.where(inside, 1.0 - 4.0 * sq, 1.0)
    return np.where(inside, np.exp(-1.0 / den), 0.0)


def bump_scale(beta: float, C: float, grid: int = 2001) -> float:
    """Factor ``c`` making ``c * raw_bump`` have order-0 Hoelder quotient ``C / 2``.

    The quotient ``|phi(x) - phi(z)| / |x - z|^(beta ^ 1)`` of the radial
    bump is maximized over all pairs of a dense grid on a diameter.
    """
    alpha = min(beta, 1.0)
    t = np.linspace(-0.5, 0.5, grid)
    v = _raw_bump(t[:, None])
    i, j = np.triu_indices(grid, k=1)
    quot = np.abs(v[i] - v[j]) / np.abs(t[i] - t[j]) ** alpha
    # the sup norm is part of the class constraint too
    return 0.5 * C / max(float(quot.max()), float(v.max()))


@dataclass(frozen=True)
class PackedTruth(TruthFunction):
    """``base + sum_l w_l phi(L (x - a_l)) / L^beta`` over the ``L^d`` subcubes."""

    base: TruthFunction
    L: int
    w: tuple[int, ...]
    beta: float
    scale: float
    d: int = 1

    def __post_init__(self):
        if len(self.w) != self.L**self.d:
            raise ValueError(f"sign vector must have L^d = {self.L**self.d} entries")
        if any(s not in (-1, 1) for s in self.w):
            raise ValueError("sign vector entries must be +1 or -1")

    @cached_property
    def _signs(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)

    def phi_l(self, l: int, x) -> np.ndarray:
        """The ``l``-th perturbation (flat C-order index) evaluated at ``x``."""
        X, _ = _points(x, self.d)
        idx = np.array(np.unravel_index(l, (self.L,) * self.d), dtype=np.float64)
        a = (idx + 0.5) / self.L
        return self.scale * _raw_bump(self.L * (X - a)) / self.L**self.beta

    def perturbation(self, X: np.ndarray) -> np.ndarray:
        cell = np.clip(np.floor(X * self.L), 0, self.L - 1)
        a = (cell + 0.5) / self.L
        flat = np.ravel_multi_index(tuple(cell.astype(np.int64).T), (self.L,) * self.d)
        return self._signs[flat] * self.scale * _raw_bump(self.L * (X - a)) / self.L**self.beta

    def _eval(self, X):
        return self.base._eval(X) + self.perturbation(X)

    @property
    def epsilon_sq(self) -> float:
        """``||f_w - base||_2^2 = int phi^2 / L^(2 beta)`` (independent of ``w``)."""
        return bump_l2_sq(self.d, self.scale) / self.L ** (2 * self.beta)


def bump_l2_sq(d: int, scale: float = 1.0, quad: int = 4001) -> float:
    """``int phi^2`` over the ball, via the radial profile and the sphere area."""
    rho = (np.arange(quad) + 0.5) / quad * 0.5
    prof = (scale * _raw_bump(rho[:, None])) ** 2
    area = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
    return float(area * np.sum(prof * rho ** (d - 1)) * 0.5 / quad)


def hamming(a, b) -> int:
    return int(np.sum(np.asarray(a) != np.asarray(b)))


def build_packing(base: TruthFunction, beta: float, C: float, L: int, count: int,
                  rng: "SeededRng", max_tries: int | None = None) -> list[PackedTruth]:
    """Sign-perturbed copies of ``base`` with pairwise Hamming distance ``>= L^d / 8``.

    Sign vectors are drawn uniformly and kept when they are far enough from
    every vector kept so far.  Raises :class:`PackingError` when the retry
    budget runs out before ``count`` vectors are found.
    """
    d = base.d
    m = L**d
    if m < 8:
        raise ValueError(f"need L^d >= 8 for the separation guarantee, got {m}")
    if count < 1:
        raise ValueError("count must be positive")
    budget = max_tries if max_tries is not None else 200 * count
    gen = rng.generator(0)
    kept: list[np.ndarray] = []
    tries = 0
    while len(kept) < count:
        if tries >= budget:
            raise PackingError(
                f"found {len(kept)} of {count} sign vectors with separation {m / 8} after {tries} draws"
            )
        tries += 1
        w = gen.choice(np.array([-1, 1], dtype=np.int8), size=m)
        if all(np.sum(w != k) >= m / 8 for k in kept):
            kept.append(w)
    scale = bump_scale(beta, C)
    return [PackedTruth(base, L, tuple(int(s) for s in w), float(beta), scale, d) for w in kept]


# -- noise, design and sampling --------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Centered noise: ``gaussian`` with std ``sigma`` or ``bounded`` uniform on ``[-s, s]``."""

    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "bounded"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise ValueError(f"noise scale must be finite and nonnegative, got {self.scale}")

    @property
    def variance(self) -> float:
        return self.scale**2 if self.kind == "gaussian" else self.scale**2 / 3.0

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            return self.scale * gen.standard_normal(n)
        return gen.uniform(-self.scale, self.scale, n)


def Gaussian(sigma: float) -> NoiseSpec:
    return NoiseSpec("gaussian", sigma)


def Bounded(scale: float) -> NoiseSpec:
    return NoiseSpec("bounded", scale)


@dataclass(frozen=True)
class DesignSpec:
    """Uniform design, or a piecewise constant density on an ``m^d`` grid of boxes.

    ``weights`` (C order, length ``m^d``) are relative box masses; the density
    on a box is its normalized mass times ``m^d``.
    """

    kind: str = "uniform"
    d: int = 1
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "piecewise"):
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.kind == "piecewise":
            if not self.weights:
                raise ValueError("piecewise design needs weights")
            w = np.asarray(self.weights, dtype=np.float64)
            m = round(w.size ** (1.0 / self.d))
            if m**self.d != w.size:
                raise ValueError(f"{w.size} weights do not form an m^d grid in d={self.d}")
            if not np.all(w > 0):
                raise ValueError("weights must be positive so the density is bounded below")

    @property
    def boxes_per_axis(self) -> int:
        return 1 if self.kind == "uniform" else round(len(self.weights) ** (1.0 / self.d))

    @property
    def densities(self) -> np.ndarray:
        if self.kind == "uniform":
            return np.ones(1)
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum() * w.size

    @property
    def mu_min(self) -> float:
        return float(self.densities.min())

    @property
    def mu_max(self) -> float:
        return float(self.densities.max())

    def density(self, x) -> np.ndarray:
        X, _ = _points(x, self.d)
        m = self.boxes_per_axis
        cell = np.clip(np.floor(X * m), 0, m - 1).astype(np.int64)
        return self.densities[np.ravel_multi_index(tuple(cell.T), (m,) * self.d)]

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return gen.random((n, self.d))
        m = self.boxes_per_axis
        p = self.densities / self.densities.sum()
        box = gen.choice(p.size, size=n, p=p)
        corner = np.stack(np.unravel_index(box, (m,) * self.d), axis=1)
        return (corner + gen.random((n, self.d))) / m


@dataclass(frozen=True)
class SeededRng:
    """A 64-bit seed split into independent substreams.

    Stream ``(i, tag)`` is ``SeedSequence(seed, spawn_key=(i,))`` for
    ``tag = 0`` and ``SeedSequence(seed, spawn_key=(i, tag))`` otherwise.
    """

    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def generator(self, index: int, tag: int = 0) -> np.random.Generator:
        key = (index,) if tag == 0 else (index, tag)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))


def sample_dataset(f: TruthFunction, design: DesignSpec, noise: NoiseSpec, n: int,
                   rng: SeededRng, index: int = 0) -> Dataset:
    """``n`` pairs ``Y = f(X) + xi`` from substream ``index`` of ``rng``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if design.d != f.d:
        raise ValueError(f"design dimension {design.d} does not match truth dimension {f.d}")
    gen = rng.generator(index)
    X = design.sample(gen, n)
    xi = noise.sample(gen, n)
    return Dataset(X, f._eval(X) + xi)


@dataclass(frozen=True)
class BatteryItem:
    name: str
    truth: TruthFunction
    beta: float
    C: float


def holder_battery(betas=(0.5, 1.0), C: float = 2.0, d: int = 1, r: float = 0.02) -> list[BatteryItem]:
    """Functions with declared order-0 Hoelder exponent ``beta`` and constant ``C``."""
    items = []
    for beta in betas:
        items.append(BatteryItem(f"power(beta={beta})", HolderPower(beta, C, d), beta, C))
        if beta <= 1:
            # rises by (C/2)(2r)^beta over 2r, so its order-0 constant is at most C
            items.append(BatteryItem(f"staircase(beta={beta})", StaircaseF0(beta, C, r, d), beta, C))
    return items
