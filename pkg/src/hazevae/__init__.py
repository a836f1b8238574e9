"""Desk-scale joint haze synthesis and dehazing with two MMD-coupled VAE-GANs."""

__version__ = "0.1.0"
