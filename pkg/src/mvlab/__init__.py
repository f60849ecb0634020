"""mvlab: a desk-scale laboratory for mean-field SDEs and SPDEs.

Mean-field laws are built by measure-Picard iteration with exact Girsanov
path-entropy diagnostics, under Brownian and fractional Brownian drivers,
plus spectral stochastic heat/wave equations and quantitative propagation
of chaos experiments.
"""

__version__ = "0.1.0"
