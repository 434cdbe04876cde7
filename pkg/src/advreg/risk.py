"""Monte Carlo estimation of adversarial and standard risks."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .attacks import AttackSpec, Identity, SupQuery, attack_extrema, midpoint_grid
from .exceptions import ReplicationError
from .localpoly import Dataset
from .testbed import DesignSpec, NoiseSpec, SeededRng, TruthFunction, sample_dataset

# substream tag of the test draws under a replication index
_TEST = 1


def default_probe_grid(d: int) -> int:
    """Probe points per axis for the sup-norm risk."""
    return {1: 2048, 2: 64}.get(d, 16)


@dataclass(frozen=True)
class RiskSpec:
    """What to estimate: ``E sup_{A(X)} |f_hat(X') - f(X)|^q`` (or its sup over ``x`` for ``q = inf``)."""

    q: float = 2.0
    attack: AttackSpec = field(default_factory=Identity)
    test_draws: int = 1000
    replications: int = 20
    probe_grid: int | None = None
    query: SupQuery = field(default_factory=SupQuery)

    def __post_init__(self):
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.test_draws < 1 or self.replications < 1:
            raise ValueError("test_draws and replications must be positive")
        if self.probe_grid is not None and self.probe_grid < 1:
            raise ValueError("probe_grid must be positive")

    def probe_points(self, d: int) -> np.ndarray:
        return midpoint_grid(self.probe_grid or default_probe_grid(d), d)


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    stderr: float
    values: tuple[float, ...]
    spec: RiskSpec

    @classmethod
    def from_values(cls, values: Sequence[float], spec: RiskSpec) -> "RiskEstimate":
        vals = [float(v) for v in values]
        R = len(vals)
        mean = math.fsum(vals) / R
        if R > 1:
            var = math.fsum((v - mean) ** 2 for v in vals) / (R - 1)
            stderr = math.sqrt(var / R)
        else:
            stderr = 0.0
        return cls(mean, stderr, tuple(vals), spec)


def pointwise_deviation(fhat, truth, X: np.ndarray, attack: AttackSpec,
                        query: SupQuery = SupQuery()) -> np.ndarray:
    """``sup_{x' in A(x)} |f_hat(x') - f(x)|`` at each row of ``X``."""
    lo, hi = attack_extrema(fhat, X, attack, query)
    fx = np.asarray(truth(X), dtype=np.float64).reshape(-1)
    return np.maximum(np.abs(hi - fx), np.abs(lo - fx))


def replication_value(fhat, truth, spec: RiskSpec, design: DesignSpec, gen: np.random.Generator) -> float:
    """One replication's contribution given a fitted estimator."""
    if math.isinf(spec.q):
        dev = pointwise_deviation(fhat, truth, spec.probe_points(design.d), spec.attack, spec.query)
        return float(dev.max())
    X = design.sample(gen, spec.test_draws)
    dev = pointwise_deviation(fhat, truth, X, spec.attack, spec.query)
    return math.fsum((dev**spec.q).tolist()) / X.shape[0]


def _run_replications(task: Callable[[int], object], count: int, jobs: int) -> list:
    def guarded(i):
        try:
            return task(i)
        except Exception as exc:  # abort the whole estimate, never skip
            raise ReplicationError(i, exc) from exc

    if jobs > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(guarded, range(count)))
    return [guarded(i) for i in range(count)]


def estimate_risks(
    truth: TruthFunction,
    factory: Callable[[Dataset], object],
    specs: Sequence[RiskSpec],
    design: DesignSpec,
    noise: NoiseSpec,
    n: int,
    rng: SeededRng | int = 0,
    jobs: int = 1,
) -> list[RiskEstimate]:
    """Several risks from the same fitted estimators.

    Replication ``i`` trains on substream ``(i, 0)`` and draws test points
    from substream ``(i, 1)``, so the result does not depend on ``jobs``.
    All specs must share the replication count.
    """
    rng = rng if isinstance(rng, SeededRng) else SeededRng(int(rng))
    reps = {s.replications for s in specs}
    if len(reps) != 1:
        raise ValueError("all specs must use the same number of replications")

    def task(i):
        data = sample_dataset(truth, design, noise, n, rng, index=i)
        fhat = factory(data)
        # every spec sees the same test stream
        return [replication_value(fhat, truth, s, design, rng.generator(i, _TEST)) for s in specs]

    rows = _run_replications(task, reps.pop(), jobs)
    return [RiskEstimate.from_values([row[j] for row in rows], s) for j, s in enumerate(specs)]


def estimate_risk(truth, factory, spec: RiskSpec, design: DesignSpec, noise: NoiseSpec, n: int,
                  rng: SeededRng | int = 0, jobs: int = 1) -> RiskEstimate:
    """Monte Carlo estimate of the adversarial ``L_q`` (or sup-norm) risk."""
    return estimate_risks(truth, factory, [spec], design, noise, n, rng, jobs)[0]


def standard_risk(fhat, truth, X: np.ndarray, q: float = 2.0) -> float:
    """Plain ``mean |f_hat(X) - f(X)|^q`` with no attack machinery."""
    diff = np.abs(np.asarray(fhat(X), dtype=np.float64) - np.asarray(truth(X), dtype=np.float64))
    return math.fsum((diff**q).tolist()) / X.shape[0]


@dataclass(frozen=True)
class TradesResult:
    T_minus_noise: float
    R: float
    sandwich_ok: bool
    lower_margin: float  # R - (T - E xi^2)/5, should be >= -3 SE
    upper_margin: float  # 2 (T - E xi^2) - R, should be >= -3 SE
    lower_se: float
    upper_se: float

    def __iter__(self):
        return iter((self.T_minus_noise, self.R, self.sandwich_ok))


def trades_diagnostic(fhat, truth, spec: RiskSpec, design: DesignSpec, noise: NoiseSpec,
                      draws: int | None = None, rng: SeededRng | int = 0, n_se: float = 3.0) -> TradesResult:
    """Check ``(T - E xi^2)/5 <= R_{A,2} <= 2 (T - E xi^2)`` by Monte Carlo.

    ``T = E[|f_hat(X) - Y|^2 + sup_{A(X)} |f_hat(X') - f_hat(X)|^2]``.  Both
    inequalities are tested on paired per-draw differences, allowing
    ``n_se`` standard errors of slack.
    """
    if spec.q != 2:
        raise ValueError("the sandwich is stated for q = 2")
    rng = rng if isinstance(rng, SeededRng) else SeededRng(int(rng))
    gen = rng.generator(0)
    m = draws or spec.test_draws
    X = design.sample(gen, m)
    xi = noise.sample(gen, m)
    fx = np.asarray(truth(X), dtype=np.float64).reshape(-1)
    lo, hi = attack_extrema(fhat, X, spec.attack, spec.query)
    gx = np.asarray(fhat(X), dtype=np.float64).reshape(-1)
    fit_term = (gx - fx - xi) ** 2
    reg_term = np.maximum(hi - gx, gx - lo) ** 2
    t_i = fit_term + reg_term - noise.variance
    r_i = np.maximum(np.abs(hi - fx), np.abs(lo - fx)) ** 2
    lower = r_i - t_i / 5.0
    upper = 2.0 * t_i - r_i

    def mean_se(v):
        return math.fsum(v.tolist()) / m, float(np.std(v, ddof=1) / math.sqrt(m)) if m > 1 else 0.0

    lm, lse = mean_se(lower)
    um, use = mean_se(upper)
    ok = lm >= -n_se * lse and um >= -n_se * use
    return TradesResult(math.fsum(t_i.tolist()) / m, math.fsum(r_i.tolist()) / m, bool(ok), lm, um, lse, use)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def rate_slope(points) -> SlopeFit:
    """Least squares line through ``(log n, log risk)``."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise ValueError("need at least three points")
    if any(v <= 0 or n <= 0 for n, v in pts):
        raise ValueError("sizes and risks must be positive")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    if np.ptp(y) == 0:
        return SlopeFit(0.0, float(y[0]), 1.0)
    res = stats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


def classify_phase(risks: Sequence[float], band: float = 0.5) -> str:
    """``attack-dominated`` when the last ratio of successive risks lies within ``1 +- band``."""
    if len(risks) < 2:
        return "standard"
    ratio = risks[-1] / risks[-2] if risks[-2] > 0 else math.inf
    return "attack-dominated" if abs(ratio - 1.0) <= band else "standard"
