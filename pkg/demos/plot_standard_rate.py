"""
How fast does the piecewise estimator learn?
============================================

We fit the piecewise local polynomial estimator to samples of the kink
function ``|x - 1/2|`` and watch its mean squared error fall as the sample
size grows.  With bandwidth ``n^{-1/3}`` the error should shrink roughly like
``n^{-2/3}``, so on a log-log scale the points sit on a line of slope -2/3.
"""

import numpy as np

from advreg import HolderPower, DesignSpec, PPConfig, RiskSpec, SeededRng, estimate_risk, fit_pp, rate_slope
from advreg.testbed import Gaussian

truth = HolderPower(1.0, 2.0)
noise = Gaussian(1.0)
sizes = [2**8, 2**10, 2**12, 2**14]

###############################################################################
# Each size gets 100 replications.  Replication ``i`` trains on the same
# seeded stream no matter how many threads are used, so reruns are identical.

risks = []
for n in sizes:
    config = PPConfig(h=n ** (-1 / 3), degree=1)
    spec = RiskSpec(q=2, test_draws=1000, replications=100)
    est = estimate_risk(truth, lambda data: fit_pp(data, config), spec, DesignSpec(), noise, n, SeededRng(1), jobs=4)
    risks.append(est.mean)
    print(f"n = {n:6d}   risk = {est.mean:.5f} +- {est.stderr:.5f}")

###############################################################################
# Fit a line through the log-log points.

fit = rate_slope(list(zip(sizes, risks)))
print(f"\nfitted slope {fit.slope:.3f}   (theory: {-2 / 3:.3f})")
print("risk * n^(2/3):", np.round(np.array(risks) * np.array(sizes) ** (2 / 3), 3))
