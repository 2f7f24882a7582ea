"""Differentiable tile-based Gaussian rasterizer."""

from .backend import COMPILED
from .projection import RasterSettings, project_gaussians, projection_backward
from .render import (
    RenderContext,
    RenderOutput,
    eval_density,
    render,
    render_backward,
    render_bruteforce,
    render_forward,
    render_tensor,
)
from .sh import eval_basis, eval_sh_color, num_coeffs

__all__ = [
    "COMPILED",
    "RasterSettings",
    "RenderOutput",
    "RenderContext",
    "render",
    "render_forward",
    "render_backward",
    "render_tensor",
    "render_bruteforce",
    "eval_density",
    "eval_basis",
    "eval_sh_color",
    "num_coeffs",
    "project_gaussians",
    "projection_backward",
]
