"""
When the attacker stops the learning
====================================

Under an input attack of radius ``r`` the error cannot fall below roughly
``r^{2 min(1, beta)}`` however many samples we collect.  Here ``r = 0.2`` and
we compare two sample sizes, sixteen times apart.  The standard risk drops by
a large factor while the adversarial risk hardly moves.
"""

from advreg import DesignSpec, HolderPower, Identity, LpBall, PPConfig, RiskSpec, SeededRng, estimate_risks, fit_pp
from advreg.risk import classify_phase
from advreg.testbed import Gaussian

truth = HolderPower(1.0, 2.0)
r = 0.2

rows = []
for n in (2**10, 2**14):
    # the bandwidth is never allowed below the attack radius
    h = max(r, n ** (-1 / 3))
    specs = [RiskSpec(q=2, attack=LpBall(r), test_draws=1000, replications=100),
             RiskSpec(q=2, attack=Identity(), test_draws=1000, replications=100)]
    config = PPConfig(h=h, degree=1)
    adv, std = estimate_risks(truth, lambda data: fit_pp(data, config), specs, DesignSpec(), Gaussian(1.0), n,
                              SeededRng(2), jobs=4)
    rows.append((n, adv.mean, std.mean))
    print(f"n = {n:6d}   adversarial = {adv.mean:.4f}   standard = {std.mean:.4f}")

###############################################################################
# Ratios between the two sizes, and the phase label the sweep would assign.

(_, a0, s0), (_, a1, s1) = rows
print(f"\nadversarial ratio {a1 / a0:.3f}, standard ratio {s1 / s0:.3f}")
print("phase:", classify_phase([a0, a1], band=0.5))
