"""Attention over item sets for implicit-feedback recommendation.

Modules: ``corpus`` (logs, vocabulary, splits), ``sampler`` (smoothed item
distributions, alias tables), ``numkit`` (dense kernels, Adam, gradient
checks), ``embed`` (skip-gram item vectors), ``attncf`` (the attention
model), ``baselines``, ``evalkit`` (pools, metrics, reports) and ``cli``.
"""

__version__ = "0.1.0"
