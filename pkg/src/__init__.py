"""
Indefinite Causal Toolkit - causal structure discovery and deconfounding on
indefinite data (multi-structure, multi-value, confounded samples)
"""

__version__ = "1.0.0"
__description__ = "Variational causal-strength model, confounding estimation and pairwise direction tests"
