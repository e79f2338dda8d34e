"""Malliavin-Stein numerics for densities of Wiener-chaos variables."""

__version__ = "0.1.0"
