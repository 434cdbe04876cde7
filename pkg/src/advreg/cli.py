"""Command-line driver: fit, evaluate, sweep, adapt and lower-bound demos.

Configuration is a JSON file whose sections mirror the dataclasses below;
every key is validated before any computation and unknown keys are
rejected.  Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .adaptive import AdaptiveConfig, fit_adaptive
from .attacks import AttackSpec, SupQuery, deviation_functional_G, midpoint_grid
from .exceptions import AdvRegError, ConfigError, NumericalError, ReplicationError, ResourceLimitError
from .partition import PPConfig, fit_pp, tune_bandwidth
from .risk import RiskSpec, classify_phase, estimate_risk, rate_slope
from .testbed import (BumpF0, Constant, DesignSpec, HolderPower, NoiseSpec, Polynomial, SeededRng,
                      StaircaseF0, build_packing, hamming, sample_dataset)

log = logging.getLogger("advreg")

SCHEMA = "advreg-schema v1"
CSV_COLUMNS = ("n", "r", "beta", "q", "estimator", "attack", "risk_mean", "risk_stderr",
               "slope_local", "phase", "mean_selected_h", "wall_ms")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4


# -- configuration -----------------------------------------------------------------------


@dataclass
class TruthConfig:
    kind: str = "holder_power"  # holder_power | staircase | bump | polynomial | constant
    beta: float = 1.0
    C: float = 2.0
    r: float = 0.02
    B: float | None = None
    coeffs: list[float] = field(default_factory=lambda: [0.0, 1.0])
    value: float = 0.0


@dataclass
class DesignConfig:
    kind: str = "uniform"
    weights: list[float] | None = None


@dataclass
class NoiseConfig:
    kind: str = "gaussian"
    scale: float = 1.0


@dataclass
class EstimatorConfig:
    kind: str = "pp"  # pp | adaptive
    degree: int = 1
    kernel: str = "epanechnikov"
    h: float | None = None  # PP: None tunes h = c_h max(r, n^(-1/(2 beta + d)))
    c_h: float = 1.0
    beta: float | None = None  # smoothness used for tuning; defaults to truth.beta
    M: int | None = None
    tau: float | None = None
    beta_max: float = 2.0
    c_lep: float | None = None


@dataclass
class AttackConfig:
    kind: str = "identity"
    r: float = 0.0
    p: float | str = "inf"
    direction: list[float] | None = None
    c_lo: float = 1.0
    c_hi: float = 1.0
    m: int | None = None
    mode: str = "grid_line"


@dataclass
class RiskConfig:
    q: float | str = 2.0
    test_draws: int = 1000
    replications: int = 20
    probe_grid: int | None = None


@dataclass
class SweepConfig:
    n: list[int] = field(default_factory=list)
    r: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    q: list[float | str] = field(default_factory=list)
    estimators: list[str] = field(default_factory=lambda: ["pp"])
    phase_band: float = 0.5


@dataclass
class LowerBoundConfig:
    L: int = 8
    count: int = 8
    quad: int = 4096
    estimators: list[str] = field(default_factory=lambda: ["pp"])


@dataclass
class ExperimentConfig:
    n: int = 100
    d: int = 1
    seed: int = 0
    output: str | None = None
    format: str = "csv"
    truth: TruthConfig = field(default_factory=TruthConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    lower_bound: LowerBoundConfig = field(default_factory=LowerBoundConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)
             if f.default_factory is not dataclasses.MISSING}


def _parse_q(value, path: str) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"expected a number or 'inf', got {value!r}", path)
    q = _num(value, path)
    if not q >= 1:
        raise ConfigError(f"q must be >= 1, got {q}", path)
    return q


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    if not math.isfinite(value):
        raise ConfigError("expected a finite number", path)
    return float(value)


def _int(value, path: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if lo is not None and value < lo:
        raise ConfigError(f"must be >= {lo}, got {value}", path)
    return value


def _fill(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key (allowed: {', '.join(sorted(names))})", where)
    obj = cls()
    for k, v in data.items():
        setattr(obj, k, v)
    return obj


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a configuration; raises :class:`ConfigError` naming the field."""
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    cfg = _fill(ExperimentConfig, top, "")
    for name, factory in _SECTIONS.items():
        cls = type(factory())
        setattr(cfg, name, _fill(cls, data.get(name, {}), name))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    _int(cfg.n, "n", 1)
    _int(cfg.d, "d", 1)
    _int(cfg.seed, "seed", 0)
    if cfg.seed >= 2**64:
        raise ConfigError("seed must fit in 64 bits", "seed")
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"expected 'csv' or 'json', got {cfg.format!r}", "format")
    if cfg.output is not None and not isinstance(cfg.output, str):
        raise ConfigError("expected a path string or null", "output")
    build_truth(cfg)
    build_design(cfg)
    build_noise(cfg)
    est = cfg.estimator
    if est.kind not in ("pp", "adaptive"):
        raise ConfigError(f"expected 'pp' or 'adaptive', got {est.kind!r}", "estimator.kind")
    _int(est.degree, "estimator.degree", 0)
    if est.h is not None and not _num(est.h, "estimator.h") > 0:
        raise ConfigError("bandwidth must be positive", "estimator.h")
    if not _num(est.c_h, "estimator.c_h") > 0:
        raise ConfigError("must be positive", "estimator.c_h")
    if est.beta is not None and not _num(est.beta, "estimator.beta") > 0:
        raise ConfigError("smoothness must be positive", "estimator.beta")
    if est.M is not None:
        _int(est.M, "estimator.M", 1)
    if est.tau is not None and not _num(est.tau, "estimator.tau") > 0:
        raise ConfigError("must be positive", "estimator.tau")
    if est.kernel not in ("epanechnikov", "rectangular"):
        raise ConfigError(f"unknown kernel {est.kernel!r}", "estimator.kernel")
    if not _num(est.beta_max, "estimator.beta_max") > 0:
        raise ConfigError("must be positive", "estimator.beta_max")
    if est.c_lep is not None and not _num(est.c_lep, "estimator.c_lep") > 0:
        raise ConfigError("must be positive", "estimator.c_lep")
    if est.kind == "adaptive" or "adaptive" in cfg.sweep.estimators + cfg.lower_bound.estimators:
        if est.degree < math.floor(est.beta_max):
            raise ConfigError(
                f"adaptive estimation needs degree >= floor(beta_max) = {math.floor(est.beta_max)}, "
                f"got {est.degree}", "estimator.degree")
    build_attack(cfg, cfg.attack.r)
    r = cfg.risk
    _parse_q(r.q, "risk.q")
    _int(r.test_draws, "risk.test_draws", 1)
    _int(r.replications, "risk.replications", 1)
    if r.probe_grid is not None:
        _int(r.probe_grid, "risk.probe_grid", 1)
    s = cfg.sweep
    for name, lst in (("n", s.n), ("r", s.r), ("beta", s.beta), ("q", s.q), ("estimators", s.estimators)):
        if not isinstance(lst, list):
            raise ConfigError("expected a list", f"sweep.{name}")
    for i, v in enumerate(s.n):
        _int(v, f"sweep.n[{i}]", 1)
    for i, v in enumerate(s.r):
        if _num(v, f"sweep.r[{i}]") < 0:
            raise ConfigError("must be nonnegative", f"sweep.r[{i}]")
        build_attack(cfg, v, path=f"sweep.r[{i}]")
    for i, v in enumerate(s.beta):
        if not _num(v, f"sweep.beta[{i}]") > 0:
            raise ConfigError("smoothness must be positive", f"sweep.beta[{i}]")
        build_truth(cfg, v, path=f"sweep.beta[{i}]")
    for i, v in enumerate(s.q):
        _parse_q(v, f"sweep.q[{i}]")
    for i, v in enumerate(s.estimators):
        if v not in ("pp", "adaptive"):
            raise ConfigError(f"expected 'pp' or 'adaptive', got {v!r}", f"sweep.estimators[{i}]")
    if not s.estimators:
        raise ConfigError("needs at least one estimator", "sweep.estimators")
    if not _num(s.phase_band, "sweep.phase_band") >= 0:
        raise ConfigError("must be nonnegative", "sweep.phase_band")
    lb = cfg.lower_bound
    _int(lb.L, "lower_bound.L", 1)
    _int(lb.count, "lower_bound.count", 1)
    _int(lb.quad, "lower_bound.quad", 1)


def _wrap(path: str, build, *args, **kw):
    try:
        return build(*args, **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def build_truth(cfg: ExperimentConfig, beta: float | None = None, path: str | None = None):
    t = cfg.truth
    beta = t.beta if beta is None else beta
    where = path or "truth.beta"
    if t.kind in ("holder_power", "staircase", "bump"):
        if not _num(beta, where) > 0:
            raise ConfigError(f"smoothness must be positive, got {beta}", where)
    if t.kind == "holder_power":
        if beta > 1:
            raise ConfigError("holder_power needs beta <= 1", where)
        return _wrap("truth.C", HolderPower, beta, _num(t.C, "truth.C"), cfg.d)
    if t.kind == "staircase":
        if beta > 1:
            raise ConfigError("staircase needs beta <= 1", where)
        if not 0 < _num(t.r, "truth.r") < 0.125:
            raise ConfigError("staircase needs 0 < r < 1/8", "truth.r")
        return StaircaseF0(beta, _num(t.C, "truth.C"), t.r, cfg.d)
    if t.kind == "bump":
        if beta <= 1:
            raise ConfigError("bump needs beta > 1", where)
        if not 0 < _num(t.r, "truth.r") < 0.125:
            raise ConfigError("bump needs 0 < r < 1/8", "truth.r")
        B = None if t.B is None else _num(t.B, "truth.B")
        return BumpF0(beta, t.r, B, _num(t.C, "truth.C"), cfg.d)
    if t.kind == "polynomial":
        if not isinstance(t.coeffs, list) or not t.coeffs:
            raise ConfigError("expected a nonempty list", "truth.coeffs")
        return Polynomial.from_coeffs([_num(c, "truth.coeffs") for c in t.coeffs], cfg.d)
    if t.kind == "constant":
        return Constant(_num(t.value, "truth.value"), cfg.d)
    raise ConfigError(f"unknown truth kind {t.kind!r}", "truth.kind")


def build_design(cfg: ExperimentConfig) -> DesignSpec:
    w = cfg.design.weights
    return _wrap("design", DesignSpec, cfg.design.kind, cfg.d, None if w is None else tuple(w))


def build_noise(cfg: ExperimentConfig) -> NoiseSpec:
    return _wrap("noise", NoiseSpec, cfg.noise.kind, _num(cfg.noise.scale, "noise.scale"))


def build_attack(cfg: ExperimentConfig, r: float, path: str | None = None) -> AttackSpec:
    a = cfg.attack
    where = path or "attack"
    p = a.p
    if isinstance(p, str):
        if p.lower() not in ("inf", "infinity"):
            raise ConfigError(f"expected a number or 'inf', got {p!r}", "attack.p")
        p = math.inf
    direction = tuple(a.direction) if a.direction is not None else None
    if a.kind == "soda" and direction is None:
        direction = tuple(np.eye(cfg.d)[0])
    r = 0.0 if a.kind == "identity" else _num(r, where)
    if a.kind == "identity" and path is None and a.r != 0:
        raise ConfigError("the identity attack has r = 0", "attack.r")
    spec = _wrap(where, AttackSpec, a.kind, r, cfg.d, p=float(p), direction=direction,
                 c_lo=a.c_lo, c_hi=a.c_hi)
    _wrap("attack.m", SupQuery, a.m, a.mode)
    return spec


def build_query(cfg: ExperimentConfig) -> SupQuery:
    return SupQuery(cfg.attack.m, cfg.attack.mode)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", path) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", path)
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=False) + "\n"


# -- experiment plumbing -----------------------------------------------------------------


def _tuning_beta(cfg: ExperimentConfig, beta: float) -> float:
    return cfg.estimator.beta if cfg.estimator.beta is not None else beta


def make_factory(cfg: ExperimentConfig, kind: str, n: int, r: float, beta: float, q: float):
    """Estimator factory ``Dataset -> fitted estimator`` for one sweep cell."""
    est = cfg.estimator
    if kind == "adaptive":
        config = AdaptiveConfig(beta_max=est.beta_max, c_lep=est.c_lep, degree=est.degree,
                                kernel=est.kernel, M=est.M)
        return lambda data: fit_adaptive(data, config)
    h = est.h if est.h is not None else tune_bandwidth(_tuning_beta(cfg, beta), cfg.d, n, r, q, est.c_h)
    config = PPConfig(h=h, degree=est.degree, M=est.M, tau=est.tau, kernel=est.kernel)
    return lambda data: fit_pp(data, config)


@dataclass
class ResultRow:
    n: int
    r: float
    beta: float
    q: float
    estimator: str
    attack: str
    risk_mean: float
    risk_stderr: float
    slope_local: float | None
    phase: str
    mean_selected_h: float
    wall_ms: float


class _HRecorder:
    """Wraps a factory and records the mean selected bandwidth of every fit."""

    def __init__(self, factory):
        self.factory = factory
        self.means: list[float] = []

    def __call__(self, data):
        est = self.factory(data)
        self.means.append(float(np.mean(est.bandwidths)))
        return est

    def mean(self) -> float:
        # completion order varies with threads; sorting keeps the sum bitwise stable
        return math.fsum(sorted(self.means)) / max(1, len(self.means))


def run_cell(cfg: ExperimentConfig, kind: str, n: int, r: float, beta: float, q: float,
             jobs: int) -> tuple[float, float, float, float]:
    """``(risk mean, stderr, mean selected h, wall ms)`` for one sweep cell."""
    truth = build_truth(cfg, beta)
    attack = build_attack(cfg, r)
    spec = RiskSpec(q=q, attack=attack, test_draws=cfg.risk.test_draws,
                    replications=cfg.risk.replications, probe_grid=cfg.risk.probe_grid,
                    query=build_query(cfg))
    rec = _HRecorder(make_factory(cfg, kind, n, r, beta, q))
    t0 = time.perf_counter()
    est = estimate_risk(truth, rec, spec, build_design(cfg), build_noise(cfg), n, SeededRng(cfg.seed), jobs)
    wall = 1000.0 * (time.perf_counter() - t0)
    return est.mean, est.stderr, rec.mean(), wall


def sweep_rows(cfg: ExperimentConfig, jobs: int, wall_clock: bool = True) -> tuple[list[ResultRow], list[dict]]:
    s = cfg.sweep
    ns = s.n or [cfg.n]
    rs = s.r or [cfg.attack.r]
    betas = s.beta or [cfg.truth.beta]
    qs = [_parse_q(q, "sweep.q") for q in (s.q or [cfg.risk.q])]
    kinds = s.estimators if (s.n or s.r or s.beta or s.q) else [cfg.estimator.kind]
    rows: list[ResultRow] = []
    slices = []
    for kind in kinds:
        for r in rs:
            for beta in betas:
                for q in qs:
                    risks, pts = [], []
                    for n in sorted(ns):
                        log.info("cell estimator=%s n=%d r=%g beta=%g q=%g", kind, n, r, beta, q)
                        try:
                            mean, se, hbar, wall = run_cell(cfg, kind, n, r, beta, q, jobs)
                        except ReplicationError as exc:
                            msg = f"cell (estimator={kind}, n={n}, r={r}, beta={beta}, q={q}): {exc.cause!r}"
                            # keep the failure class so the exit code still reflects it
                            cls = type(exc.cause) if isinstance(exc.cause, (NumericalError, ResourceLimitError)) else RuntimeError
                            raise ReplicationError(exc.index, cls(msg)) from exc
                        slope = None
                        if pts and mean > 0 and pts[-1][1] > 0:
                            slope = math.log(mean / pts[-1][1]) / math.log(n / pts[-1][0])
                        risks.append(mean)
                        pts.append((n, mean))
                        phase = "standard" if r == 0 or cfg.attack.kind == "identity" \
                            else classify_phase(risks, s.phase_band)
                        rows.append(ResultRow(n, float(r), float(beta), q, kind, cfg.attack.kind,
                                              mean, se, slope, phase, hbar,
                                              round(wall, 3) if wall_clock else 0.0))
                    if len(pts) >= 3 and all(v > 0 for _, v in pts):
                        fit = rate_slope(pts)
                        slices.append({"estimator": kind, "r": r, "beta": beta, "q": _fmt_q(q),
                                       "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2})
                        log.info("slice estimator=%s r=%g beta=%g q=%g slope=%.4f", kind, r, beta, q, fit.slope)
    return rows, slices


def _fmt_q(q: float):
    return "inf" if math.isinf(q) else q


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _header(timestamp: bool) -> list[str]:
    lines = [f"# {SCHEMA}"]
    if timestamp:
        lines.append(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    return lines


def render_rows(rows: list[ResultRow], slices: list[dict], fmt: str, timestamp: bool) -> str:
    if fmt == "json":
        doc = {"schema": SCHEMA, "rows": [_json_row(r) for r in rows], "slices": slices}
        if timestamp:
            doc["generated"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    buf.write("\n".join(_header(timestamp)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def _json_row(r: ResultRow) -> dict:
    d = dataclasses.asdict(r)
    d["q"] = _fmt_q(r.q)
    return d


def fit_summary(cfg: ExperimentConfig, kind: str) -> dict:
    """Fit once on replication 0 and describe every cell."""
    truth = build_truth(cfg)
    data = sample_dataset(truth, build_design(cfg), build_noise(cfg), cfg.n, SeededRng(cfg.seed))
    q = _parse_q(cfg.risk.q, "risk.q")
    est = make_factory(cfg, kind, cfg.n, cfg.attack.r, cfg.truth.beta, q)(data)
    cells = []
    for k in range(est.partition.n_cells):
        cells.append({
            "cell": k,
            "center": [float(c) for c in est.partition.centers[k]],
            "h": float(est.bandwidths[k]),
            "n_local": int(est.n_local[k]),
            "empty": bool(est.empty[k]),
            "regularized": bool(est.regularized[k]),
            "coefficients": [float(c) for c in est.coefficients[k]],
        })
    out = {"schema": SCHEMA, "estimator": kind, "n": cfg.n, "d": cfg.d, "M": est.partition.M,
           "degree": est.basis.degree, "cells": cells}
    if kind == "adaptive":
        out["c_lep"] = est.c_lep
        out["grid"] = [float(h) for h in np.sort(est.grid.bandwidths)]
        out["fallback_cells"] = int(np.sum(est.fallback))
        out["mean_selected_h"] = float(np.mean(est.bandwidths))
    return out


def render_fit(summary: dict, fmt: str, timestamp: bool) -> str:
    if fmt == "json":
        return json.dumps(summary, indent=2) + "\n"
    buf = io.StringIO()
    buf.write("\n".join(_header(timestamp)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    d = summary["d"]
    N = len(summary["cells"][0]["coefficients"]) if summary["cells"] else 0
    w.writerow(["cell"] + [f"center_{i}" for i in range(d)] + ["h", "n_local", "empty", "regularized"]
               + [f"theta_{j}" for j in range(N)])
    for c in summary["cells"]:
        w.writerow([c["cell"]] + [repr(x) for x in c["center"]]
                   + [repr(c["h"]), c["n_local"], int(c["empty"]), int(c["regularized"])]
                   + [repr(x) for x in c["coefficients"]])
    return buf.getvalue()


def lower_bound_report(cfg: ExperimentConfig, jobs: int) -> dict:
    t = cfg.truth
    if t.kind not in ("staircase", "bump"):
        raise ConfigError("demo-lower-bound needs a staircase or bump truth", "truth.kind")
    truth = build_truth(cfg)
    attack = build_attack(cfg, cfg.attack.r)
    q = _parse_q(cfg.risk.q, "risk.q")
    if math.isinf(q):
        raise ConfigError("the deviation functional needs a finite q", "risk.q")
    quad = cfg.lower_bound.quad
    query = build_query(cfg)
    G = deviation_functional_G(truth, attack, q, quad, query, jobs)
    expo = min(1.0, t.beta)
    r = attack.r
    kappa = _endpoint_oracle(truth, attack, q, quad) / r**expo if r > 0 else 0.0
    report: dict[str, Any] = {
        "schema": SCHEMA,
        "truth": t.kind, "beta": t.beta, "r": r, "q": q, "attack": attack.kind,
        "G": G,
        "kappa_oracle": kappa,
        "kappa_r_pow": kappa * r**expo,
        "G_ge_kappa_r_pow": bool(G >= kappa * r**expo * (1 - 1e-9)),
    }
    L = cfg.lower_bound.L
    if L**cfg.d >= 8:
        pack = build_packing(truth, t.beta, t.C, L, cfg.lower_bound.count, SeededRng(cfg.seed))
        dists = [hamming(a.w, b.w) for i, a in enumerate(pack) for b in pack[i + 1:]]
        report["packing"] = {
            "L": L, "count": len(pack),
            "min_hamming": min(dists) if dists else None,
            "required": L**cfg.d / 8,
            "separated": bool(not dists or min(dists) >= L**cfg.d / 8),
            "epsilon": math.sqrt(pack[0].epsilon_sq),
        }
    else:
        report["packing"] = {"L": L, "skipped": "L^d < 8"}
    spec = RiskSpec(q=q, attack=attack, test_draws=cfg.risk.test_draws,
                    replications=cfg.risk.replications, probe_grid=cfg.risk.probe_grid, query=query)
    risks = {}
    for kind in cfg.lower_bound.estimators:
        if kind not in ("pp", "adaptive"):
            raise ConfigError(f"unknown estimator {kind!r}", "lower_bound.estimators")
        est = estimate_risk(truth, make_factory(cfg, kind, cfg.n, r, t.beta, q), spec,
                            build_design(cfg), build_noise(cfg), cfg.n, SeededRng(cfg.seed), jobs)
        risks[kind] = {"risk_mean": est.mean, "risk_stderr": est.stderr}
    report["risk"] = risks
    return report


def _endpoint_oracle(f, attack: AttackSpec, q: float, quad: int) -> float:
    """Half the ``L_q`` norm of ``|f(x + k_hi v) - f(x + k_lo v)|`` over the admissible segment.

    Both endpoints lie in ``A(x)``, so this is a lower bound on the deviation
    functional that needs no inner optimization.
    """
    from .attacks import segment_limits

    if attack.kind == "identity" or attack.r == 0:
        return 0.0
    X = midpoint_grid(quad, attack.d)
    lo, hi = segment_limits(attack, X) if attack.is_segment else (
        -np.full(X.shape[0], attack.r), np.full(X.shape[0], attack.r))
    v = attack.v
    if not attack.is_segment:
        lo = np.maximum(lo, -X[:, 0])
        hi = np.minimum(hi, 1.0 - X[:, 0])
    a = np.clip(X + lo[:, None] * v, 0.0, 1.0)
    b = np.clip(X + hi[:, None] * v, 0.0, 1.0)
    diff = np.abs(np.asarray(f(b)) - np.asarray(f(a))) ** q
    return 0.5 * (math.fsum(diff.tolist()) / X.shape[0]) ** (1.0 / q)


def render_report(report: dict, fmt: str, timestamp: bool) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, default=_fmt_q) + "\n"
    buf = io.StringIO()
    buf.write("\n".join(_header(timestamp)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            w.writerow([prefix, _fmt(obj)])

    walk("", report)
    return buf.getvalue()


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="override the seed")
    common.add_argument("--out", metavar="PATH", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--jobs", type=int, metavar="N", help="parallel replications (default: all cores)")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit the timestamp header and zero the wall-time column")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    parser = argparse.ArgumentParser(prog="advreg", description="Adversarial nonparametric regression experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit once and write per-cell coefficients")
    sub.add_parser("evaluate", parents=[common], help="estimate the configured risk for one cell")
    sub.add_parser("sweep", parents=[common], help="risk table over the sweep axes")
    sub.add_parser("adapt", parents=[common], help="fit the adaptive estimator and report selected bandwidths")
    sub.add_parser("demo-lower-bound", parents=[common], help="hard-instance deviation and packing report")
    sub.add_parser("dump-config", parents=[common], help="print the resolved configuration")
    return parser


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    if args.format is not None:
        cfg.format = args.format
    validate(cfg)
    return cfg


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
        if jobs < 1:
            raise ConfigError("must be >= 1", "--jobs")
        stamp = not args.no_timestamp
        if args.command == "dump-config":
            text = dump_config(cfg)
        elif args.command in ("fit", "adapt"):
            kind = "adaptive" if args.command == "adapt" else cfg.estimator.kind
            if kind == "adaptive" and cfg.estimator.degree < math.floor(cfg.estimator.beta_max):
                raise ConfigError(
                    f"adaptive estimation needs degree >= floor(beta_max) = "
                    f"{math.floor(cfg.estimator.beta_max)}", "estimator.degree")
            text = render_fit(fit_summary(cfg, kind), cfg.format, stamp)
        elif args.command == "evaluate":
            single = dataclasses.replace(cfg, sweep=SweepConfig())
            rows, slices = sweep_rows(single, jobs, stamp)
            text = render_rows(rows, slices, cfg.format, stamp)
        elif args.command == "sweep":
            rows, slices = sweep_rows(cfg, jobs, stamp)
            text = render_rows(rows, slices, cfg.format, stamp)
        else:
            text = render_report(lower_bound_report(cfg, jobs), cfg.format, stamp)
        _emit(text, cfg.output)
        return EXIT_OK
    except ConfigError as exc:
        print(f"advreg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"advreg: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ReplicationError as exc:
        if isinstance(exc.cause, ResourceLimitError) or isinstance(exc.__cause__, ResourceLimitError):
            print(f"advreg: resource limit: {exc}", file=sys.stderr)
            return EXIT_RESOURCE
        print(f"advreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        print(f"advreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AdvRegError as exc:
        print(f"advreg: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
