"""Images as clouds of continuous 2D Gaussians, rendered at arbitrary scale."""
from .core import (Gaussian2D, GaussianCloud, RawGaussianParams, activate, eval_contribution,
                   eval_density, reference_grid)
from .fit import FitConfig, FitReport, fit, init_cloud
from .grad import backward_render, finite_diff_check
from .raster import RenderConfig, bin_gaussians, render, render_reference

__all__ = [
    "Gaussian2D", "GaussianCloud", "RawGaussianParams", "activate", "eval_contribution",
    "eval_density", "reference_grid", "FitConfig", "FitReport", "fit", "init_cloud",
    "backward_render", "finite_diff_check", "RenderConfig", "bin_gaussians", "render",
    "render_reference",
]
