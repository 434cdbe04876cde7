"""Multi-index polynomial bases and compactly supported radial kernels."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MAX_DEGREE = 20  # 20! < 2**63

KERNEL_KINDS = ("rectangular", "epanechnikov")


@dataclass(frozen=True)
class MultiIndexBasis:
    """Ordered multi-indices ``s`` with ``0 <= |s| <= degree``.

    Indices are sorted by total degree, ties broken lexicographically, so
    the first index is always the zero multi-index.
    """

    degree: int
    dim: int
    indices: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.indices)

    @cached_property
    def exponents(self) -> np.ndarray:
        """Integer array of shape (N, d)."""
        return np.array(self.indices, dtype=np.int64).reshape(self.size, self.dim)

    @cached_property
    def orders(self) -> np.ndarray:
        """Total degree ``|s|`` of each index."""
        return self.exponents.sum(axis=1)

    @cached_property
    def factorials(self) -> np.ndarray:
        """``s!`` for each index, as float64 (exact for degree <= 20)."""
        fact = np.array(
            [math.prod(math.factorial(k) for k in s) for s in self.indices],
            dtype=np.int64,
        )
        return fact.astype(np.float64)

    @cached_property
    def position(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.indices)}

    def __len__(self) -> int:
        return self.size


def build_basis(degree: int, dim: int) -> MultiIndexBasis:
    """Enumerate all multi-indices of total degree at most ``degree`` in ``dim`` variables."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds supported maximum {MAX_DEGREE}")
    idx = [
        s
        for s in itertools.product(range(degree + 1), repeat=dim)
        if sum(s) <= degree
    ]
    idx.sort(key=lambda s: (sum(s), s))
    basis = MultiIndexBasis(degree=degree, dim=dim, indices=tuple(idx))
    assert basis.size == math.comb(degree + dim, dim)
    return basis


def monomials(exponents: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate ``t**s`` for every row ``s`` of ``exponents``.

    ``t`` has shape (..., d); the result has shape (..., N).
    """
    t = np.asarray(t, dtype=np.float64)
    max_pow = int(exponents.max()) if exponents.size else 0
    # powers[..., j, p] = t_j ** p
    powers = np.ones(t.shape + (max_pow + 1,))
    for p in range(1, max_pow + 1):
        powers[..., p] = powers[..., p - 1] * t
    out = np.ones(t.shape[:-1] + (exponents.shape[0],))
    for j in range(exponents.shape[1]):
        out *= powers[..., j, exponents[:, j]]
    return out


def eval_U(basis: MultiIndexBasis, x) -> np.ndarray:
    """The scaled monomial vector ``(x**s / s!)_s``.

    Accepts a single point of shape (d,) or a batch of shape (n, d); a bare
    scalar is allowed when ``d == 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != basis.dim:
        raise ValueError(f"point has dimension {x.shape[-1]}, basis expects {basis.dim}")
    return monomials(basis.exponents, x) / basis.factorials


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit Euclidean ball, via ``v_d = 2 pi v_{d-2} / d``."""
    if d < 0:
        raise ValueError("dimension must be non-negative")
    v = 1.0 if d % 2 == 0 else 2.0
    for k in range(2 + d % 2, d + 1, 2):
        v *= 2.0 * math.pi / k
    return v


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel supported on the closed unit ball of R^d."""

    kind: str = "epanechnikov"
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.dim < 1:
            raise ValueError("kernel dimension must be >= 1")

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim)

    @property
    def k_max(self) -> float:
        if self.kind == "rectangular":
            return 1.0 / self.volume
        return (self.dim + 2) / (2.0 * self.volume)

    def radial(self, sq_norm: np.ndarray) -> np.ndarray:
        """Kernel value as a function of the squared Euclidean norm."""
        sq_norm = np.asarray(sq_norm, dtype=np.float64)
        inside = sq_norm <= 1.0
        if self.kind == "rectangular":
            return np.where(inside, 1.0 / self.volume, 0.0)
        return np.where(inside, self.k_max * (1.0 - sq_norm), 0.0)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 0:
            u = u.reshape(1)
        return self.radial(np.sum(u * u, axis=-1))


def eval_kernel(kernel: KernelSpec, u) -> float | np.ndarray:
    out = kernel(u)
    return float(out) if np.ndim(out) == 0 else out
