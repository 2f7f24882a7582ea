"""Sparse-view novel view synthesis at desk scale.

Pipeline: encode reference views, extrapolate latent+texture features to
virtual viewpoints, decode pixel-aligned 3D Gaussians, rasterize novel
views with a differentiable tile-based splatter.
"""

__version__ = "0.1.0"
