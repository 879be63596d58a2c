"""Equilibrium market impact of metaorders under martingale and fair pricing."""
__version__ = "0.1.0"
