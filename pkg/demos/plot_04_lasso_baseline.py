"""
LASSO baseline
==============

Coordinate descent with soft-thresholding.  Large penalties zero out every
coefficient; cross-validation picks the penalty when none is given.
"""

import numpy as np

from geowalk import lasso_fit
from geowalk.lasso import lambda_max

r = np.random.default_rng(0)
X = r.normal(size=(300, 12))
y = 4.0 * X[:, 0] - 2.0 * X[:, 5] + 50.0 + r.normal(size=300)

###############################################################################
# Walk down the penalty path.

lmax = lambda_max(X, y)
for frac in (1.0, 0.5, 0.1, 0.01):
    fit = lasso_fit(X, y, lam=frac * lmax)
    print(f"lam = {frac:5.2f} * lam_max: {int((fit.coef != 0).sum()):2d} nonzero, sweeps {fit.sweeps}")

###############################################################################
# Five-fold cross-validation keeps the two real signals.

fit = lasso_fit(X, y, seed=0)
print("chosen lambda", round(fit.lam, 4))
print("coefficients", fit.coef.round(2))
print("intercept", round(fit.intercept, 2))
