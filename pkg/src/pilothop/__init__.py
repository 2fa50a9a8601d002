"""Parametric uplink OFDMA channel estimation with hopping pilots."""

__version__ = "0.1.0"
