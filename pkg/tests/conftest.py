"""Shared frozen oracle values.

Computed once at build time from the Monte Carlo truth and efficiency-bound
oracles with 2e6 draws (seed 0); regeneration is itself under test.
"""

# Single-time-point DGP, average treatment effect.
ATE_TRUTH = 0.19585056564300013
ATE_TRUTH_SE = 0.00015548915150139124
ATE_BOUND = 1.2040918523921347
ATE_BOUND_SE = 0.0093395903675584

# Single-time-point DGP, treated-arm mean.
TSM1_TRUTH = 0.5220116106807517
TSM1_TRUTH_SE = 0.00012078752817857296
TSM1_BOUND = 0.7618716805107059

# Two-period DGP, static regime (1, 1).
T2_TRUTH = 0.6526342840216357
T2_TRUTH_SE = 6.896474529170404e-05
T2_BOUND = 1.0023978342120439

# Two-phase design, average treatment effect (same truth, coarsened bound).
TWO_PHASE_BOUND = 3.3637278643752735
