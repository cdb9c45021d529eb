# MIMO Duality Package
"""Robust sum-AMSE transceiver design for multiuser MIMO downlinks with imperfect CSI."""

__version__ = "0.1.0"
