"""Simulation and TV reconstruction for variable-resolution computational ghost imaging."""
__version__ = "0.1.0"

from .core import Image, ImageError, RoiSpec, load_image, mse, psnr, save_image  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .patterns import build_schedule, generate_sequence, read_pattern_stack, write_pattern_stack  # noqa: E402
from .forward import MeasurementSet, NoiseModel, measure  # noqa: E402
from .recon import TvProblem, TvSolution, solve_correlation, solve_tv  # noqa: E402

__all__ = [
    "BACKEND", "Image", "ImageError", "MeasurementSet", "NoiseModel", "RoiSpec", "TvProblem",
    "TvSolution", "build_schedule", "generate_sequence", "load_image", "measure", "mse", "psnr",
    "read_pattern_stack", "save_image", "solve_correlation", "solve_tv", "write_pattern_stack",
]
