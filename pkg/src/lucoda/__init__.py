"""Latent Gaussian models for compositional data with zeros, spatial
downscaling and sequential consensus fitting."""
__version__ = "0.1.0"
