"""Gridded epidemic count modeling with an advection-diffusion-reaction latent field."""

__version__ = "0.1.0"
