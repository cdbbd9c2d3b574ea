"""
Calibration metrics on a known predictor
========================================

The heteroscedastic toy problem stores its true mean and variance, so the
metric stack can be checked against a predictor that is calibrated by
construction, then against one that is not.
"""

import numpy as np

from cluelab.datasets import gen_heteroscedastic
from cluelab.metrics import ause, ence, regression_ece

data = gen_heteroscedastic(5000, seed=0)
mean, var = data.meta["true_mean"], data.meta["true_var"]
sq = (data.targets - mean) ** 2

# the ground-truth predictor: coverage and variance bins line up
print("true      ECE %.4f  ENCE %.4f  AUSE %.4f" % (regression_ece(mean, var, data.targets), ence(var, sq), ause(var, sq)))

# one constant variance for everything: the average is right, the shape is not
flat = np.full_like(var, var.mean())
print("constant  ECE %.4f  ENCE %.4f" % (regression_ece(mean, flat, data.targets), ence(flat, sq)))

# a predictor that is four times too sure of itself
print("overconf  ECE %.4f  ENCE %.4f" % (regression_ece(mean, var / 4, data.targets), ence(var / 4, sq)))

# AUSE stays well above zero even for the true variance: the oracle ranks by
# realised error, which single noisy draws make far more extreme than sigma
print("oracle-ranked AUSE %.4f" % ause(sq, sq))
