"""Differentiable Gaussian rasterizer."""

from .kernels import BACKENDS, DEFAULT_BACKEND
from .render import (
    MID_GRAY,
    Rasterization,
    RenderGradients,
    RenderOutput,
    render,
    render_backward,
    render_depth_mean,
)

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKEND",
    "MID_GRAY",
    "Rasterization",
    "RenderGradients",
    "RenderOutput",
    "render",
    "render_backward",
    "render_depth_mean",
]
