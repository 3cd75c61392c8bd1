"""Total alpha-order variation image denoising."""

from __future__ import annotations

__version__ = "0.1.0"

from .boundary_reg import BoundaryLift, estimate_corners, estimate_corners_quadratic, lift, restore
from .config import ProxConfig, RunReport, SolverConfig
from .frac_ops import (
    ConvergenceError,
    DomainError,
    FracOperator,
    ShapeError,
    build_operator,
    frac_div_adjoint,
    frac_grad,
    gl_coefficients,
    left_gl_apply_1d,
)
from .image_pipeline import (
    NoiseSpec,
    add_noise,
    generate_parabolic,
    generate_saddle,
    load_pgm,
    psnr,
    save_pgm,
    snr,
)
from .solver_opt import fb_denoise, fista_denoise, nesterov_denoise
from .solver_sb import split_bregman_denoise

__all__ = [
    "BoundaryLift", "ConvergenceError", "DomainError", "FracOperator", "NoiseSpec", "ProxConfig",
    "RunReport", "ShapeError", "SolverConfig", "add_noise", "build_operator", "estimate_corners",
    "estimate_corners_quadratic", "fb_denoise", "fista_denoise", "frac_div_adjoint", "frac_grad",
    "generate_parabolic", "generate_saddle", "gl_coefficients", "left_gl_apply_1d", "lift",
    "load_pgm", "nesterov_denoise", "psnr", "restore", "save_pgm", "snr", "split_bregman_denoise",
]
