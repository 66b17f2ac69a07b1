"""Lesion point clouds to somatic mutation profiles via paired VAEs and a shared invertible latent map."""

__version__ = "0.1.0"
