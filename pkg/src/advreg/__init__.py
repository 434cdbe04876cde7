"""Local polynomial regression under adversarial input perturbations.

The package provides the piecewise local polynomial estimator and its
Lepski-type adaptive variant, attack models with their inner maximization,
ground-truth test functions, and Monte Carlo risk estimation.
"""

from .adaptive import AdaptiveConfig, AdaptiveEstimator, BandwidthGrid, build_grid, fit_adaptive, select_bandwidth
from .attacks import (AttackSpec, Identity, LpBall, Soda, SupQuery, adversarial_distance, attack_extrema,
                      deviation_functional_G, max_deviation, sup_over_attack)
from .basis import KernelSpec, MultiIndexBasis, build_basis, eval_kernel, eval_U
from .exceptions import (AdvRegError, ConfigError, NumericalError, PackingError, ReplicationError,
                         ResourceLimitError)
from .localpoly import Dataset, LocalFit, assemble_a, assemble_B, assemble_D, eval_local, fit_local
from .partition import GridPartition, PiecewisePolynomial, PPConfig, PPEstimator, eval_pp, fit_pp, tune_bandwidth
from .risk import RiskEstimate, RiskSpec, estimate_risk, estimate_risks, rate_slope, trades_diagnostic
from .testbed import (BumpF0, Constant, DesignSpec, HolderPower, NoiseSpec, PackedTruth, Polynomial, SeededRng,
                      StaircaseF0, build_packing, eval_phi0, eval_truth, sample_dataset)

__version__ = "0.1.0"
