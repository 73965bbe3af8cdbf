"""Proxy-based temperature reconstruction methods and their stress tests.

Subpackages cover the data model (annual series, proxy matrices, holdout
schemes), pseudoproxy generators, reconstruction methods (Lasso, elastic
net, principal-component OLS, composite-plus-scale, ARMA baselines),
principal-component retention criteria, the holdout cross-validation and
null-benchmark harness, a Bayesian autoregressive backcasting model with
uncertainty decomposition, real-vs-simulated diagnostics, and packaged
experiment recipes.
"""

__version__ = "0.1.0"
