"""Sparse estimation and simulation of high-dimensional VAR(p) models.

The package provides:

* ``varcore``   -- model types, companion/moving-average structure, stability
  and weak-sparsity diagnostics;
* ``dgp``       -- panel simulators, including a stochastic-covariance
  innovation process and the block-diagonal benchmark design;
* ``lasso``     -- equation-wise l1-penalized least squares with BIC and
  rate-based penalty selection, restricted OLS, and one-step forecasts;
* ``bounds``    -- finite-sample bound calculators and empirical checkers
  (deviation bound, Gram concentration, restricted strong convexity,
  martingale and tail-sum inequalities);
* ``experiment`` -- a seeded, parallel Monte Carlo harness with two-panel
  reports (estimation error and forecast-error ratios);
* ``cli``       -- the ``sparsevar`` command-line front end.
"""

from __future__ import annotations

__version__ = "0.1.0"

from . import bounds, dgp, experiment, lasso, varcore  # noqa: F401
from .dgp import GaussianIID, StochasticCovariance, TimeSeriesPanel, simulate  # noqa: F401
from .lasso import DesignMatrices, LassoFit, build_design, fit_all_equations  # noqa: F401
from .varcore import VarSpec, build_companion, is_stable, vma_coefficients  # noqa: F401
