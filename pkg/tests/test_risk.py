import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advreg.attacks import Identity, LpBall, Soda, SupQuery
from advreg.exceptions import ReplicationError
from advreg.partition import PPConfig, fit_pp
from advreg.risk import (RiskEstimate, RiskSpec, classify_phase, estimate_risk, estimate_risks, rate_slope,
                         standard_risk, trades_diagnostic)
from advreg.testbed import (Constant, DesignSpec, Gaussian, HolderPower, SeededRng, StaircaseF0, sample_dataset)

TRUTH = HolderPower(1.0, 2.0)
DESIGN = DesignSpec()
NOISE = Gaussian(1.0)


def pp_factory(h=0.1):
    return lambda data: fit_pp(data, PPConfig(h=h, degree=1))


def test_spec_validation():
    with pytest.raises(ValueError):
        RiskSpec(q=0.5)
    with pytest.raises(ValueError):
        RiskSpec(replications=0)
    with pytest.raises(ValueError):
        RiskSpec(probe_grid=0)
    assert RiskSpec(q=math.inf).probe_points(1).shape == (2048, 1)
    assert RiskSpec(q=math.inf).probe_points(2).shape == (64 * 64, 2)


def test_estimate_aggregation():
    est = RiskEstimate.from_values([1.0, 2.0, 3.0, 6.0], RiskSpec())
    assert est.mean == 3.0
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 6], ddof=1) / 2, rel=1e-14)
    single = RiskEstimate.from_values([5.0], RiskSpec())
    assert single.stderr == 0.0


def test_oracle_estimator_has_zero_risk():
    spec = RiskSpec(q=2, replications=3, test_draws=200)
    est = estimate_risk(TRUTH, lambda data: TRUTH, spec, DESIGN, NOISE, 100, SeededRng(0))
    assert est.mean == 0.0


@pytest.mark.parametrize("attack", [Identity(), LpBall(0.1), Soda(0.2)])
@pytest.mark.parametrize("q", [1.0, 2.0, math.inf])
def test_constant_truth_and_estimate(attack, q):
    c = Constant(1.7)
    spec = RiskSpec(q=q, attack=attack, replications=2, test_draws=100, probe_grid=64)
    assert estimate_risk(c, lambda data: c, spec, DESIGN, NOISE, 50, 1).mean == 0.0


def test_identity_matches_standard_path():
    spec = RiskSpec(q=2, replications=5, test_draws=500)
    rng = SeededRng(11)
    est = estimate_risk(TRUTH, pp_factory(), spec, DESIGN, NOISE, 400, rng)
    direct = []
    for i in range(5):
        fhat = pp_factory()(sample_dataset(TRUTH, DESIGN, NOISE, 400, rng, index=i))
        X = DESIGN.sample(rng.generator(i, 1), 500)
        direct.append(standard_risk(fhat, TRUTH, X, 2))
    assert est.mean == pytest.approx(math.fsum(direct) / 5, rel=1e-12, abs=0)


def test_attack_monotonicity_on_common_seeds():
    specs = [RiskSpec(q=2, attack=a, replications=4, test_draws=300)
             for a in (Identity(), LpBall(0.02), LpBall(0.05), LpBall(0.1))]
    ests = estimate_risks(TRUTH, pp_factory(), specs, DESIGN, NOISE, 500, SeededRng(2))
    for a, b in zip(ests, ests[1:]):
        assert np.all(np.array(b.values) >= np.array(a.values) - 1e-12)


def test_q_ordering_by_jensen():
    specs = [RiskSpec(q=q, attack=LpBall(0.05), replications=3, test_draws=400) for q in (1, 2, 4)]
    ests = estimate_risks(TRUTH, pp_factory(), specs, DESIGN, NOISE, 300, SeededRng(3))
    for i in range(3):
        roots = [e.values[i] ** (1 / q) for e, q in zip(ests, (1, 2, 4))]
        assert roots[0] <= roots[1] * (1 + 1e-12) and roots[1] <= roots[2] * (1 + 1e-12)


def test_sup_norm_dominates_lq():
    specs = [RiskSpec(q=2, attack=LpBall(0.05), replications=3, test_draws=400),
             RiskSpec(q=math.inf, attack=LpBall(0.05), replications=3)]
    l2, sup = estimate_risks(TRUTH, pp_factory(), specs, DESIGN, NOISE, 300, SeededRng(4))
    for a, b in zip(l2.values, sup.values):
        assert b >= math.sqrt(a) * 0.95


def test_sup_norm_probe_refinement():
    rng = SeededRng(5)
    fhat = pp_factory()(sample_dataset(TRUTH, DESIGN, NOISE, 1000, rng))
    from advreg.risk import replication_value
    coarse = replication_value(fhat, TRUTH, RiskSpec(q=math.inf, attack=LpBall(0.05), probe_grid=1024), DESIGN, None)
    fine = replication_value(fhat, TRUTH, RiskSpec(q=math.inf, attack=LpBall(0.05), probe_grid=2048), DESIGN, None)
    assert abs(fine - coarse) / fine < 0.02


def test_determinism_and_jobs_independence():
    spec = RiskSpec(q=2, attack=LpBall(0.05), replications=6, test_draws=200)
    a = estimate_risk(TRUTH, pp_factory(), spec, DESIGN, NOISE, 300, SeededRng(6), jobs=1)
    b = estimate_risk(TRUTH, pp_factory(), spec, DESIGN, NOISE, 300, SeededRng(6), jobs=4)
    assert a.values == b.values and a.mean == b.mean and a.stderr == b.stderr


def test_replication_failure_aborts():
    calls = []

    def factory(data):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return TRUTH

    with pytest.raises(ReplicationError):
        estimate_risk(TRUTH, factory, RiskSpec(replications=4, test_draws=10), DESIGN, NOISE, 20, 0)


def test_mismatched_replications_rejected():
    with pytest.raises(ValueError):
        estimate_risks(TRUTH, pp_factory(), [RiskSpec(replications=2), RiskSpec(replications=3)],
                       DESIGN, NOISE, 50, 0)


def test_trades_trivial_case():
    res = trades_diagnostic(TRUTH, TRUTH, RiskSpec(q=2), DESIGN, Gaussian(0.5), draws=20_000, rng=SeededRng(0))
    T, R, ok = res
    # T reduces to mean(xi^2) - sigma^2, whose standard error is about 0.0025 here
    assert R == 0.0 and abs(T) < 0.01 and ok


def test_trades_sandwich_and_superset():
    truth = StaircaseF0(0.5, 2.0, 0.02)
    spec = RiskSpec(q=2, attack=LpBall(0.05), test_draws=4000)
    rng = SeededRng(7)
    fhat = fit_pp(sample_dataset(truth, DESIGN, NOISE, 2000, rng), PPConfig(h=0.05, degree=1))
    res = trades_diagnostic(fhat, truth, spec, DESIGN, NOISE, rng=rng)
    assert res.sandwich_ok
    X = DESIGN.sample(rng.generator(0), 4000)
    assert res.R >= standard_risk(fhat, truth, X, 2) * 0.9


def test_trades_requires_q2():
    with pytest.raises(ValueError):
        trades_diagnostic(TRUTH, TRUTH, RiskSpec(q=1), DESIGN, NOISE)


@pytest.mark.parametrize(
    "values, slope, intercept",
    [
        ([n ** (-2 / 3) for n in (2**8, 2**10, 2**12)], -2 / 3, 0.0),
        ([4 * n ** -0.5 for n in (2**8, 2**10, 2**12, 2**14)], -0.5, math.log(4)),
        ([0.3] * 4, 0.0, math.log(0.3)),
    ],
)
def test_rate_slope(values, slope, intercept):
    ns = [2**8, 2**10, 2**12, 2**14][: len(values)]
    fit = rate_slope(list(zip(ns, values)))
    assert fit.slope == pytest.approx(slope, abs=1e-12)
    assert fit.intercept == pytest.approx(intercept, abs=1e-10)


def test_rate_slope_rejects():
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (2, 0.0), (4, 0.2)])


def test_classify_phase():
    assert classify_phase([1.0]) == "standard"
    assert classify_phase([1.0, 0.3]) == "standard"
    assert classify_phase([0.2, 0.19]) == "attack-dominated"


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3))
def test_rate_slope_recovers_power_law(b, loga):
    ns = [2**8, 2**10, 2**12, 2**14]
    fit = rate_slope([(n, math.exp(loga) * n**b) for n in ns])
    assert fit.slope == pytest.approx(b, abs=1e-9)
