"""Calibration-aware training of small neural networks.

Trains MLPs whose predicted uncertainty is pushed toward their per-sample
loss, estimates uncertainty with MC dropout, and scores models with a suite
of calibration metrics alongside post-hoc calibration baselines.
"""

__version__ = "0.1.0"
