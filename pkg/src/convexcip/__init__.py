"""Reconstruction of the potential ``a(x)`` in ``u_t = Laplace u + a(x) u`` from
lateral boundary data by minimising a Carleman-weighted functional."""

from .carleman import (BackgroundTerms, CarlemanParams, carleman_weight, convexity_probe,
                       functional, gradient, residuals)
from .config import InverseConfig, load_config
from .data import DiscreteBoundaryData, add_noise, discretize_boundary
from .forward import (AuxiliaryDomain, BoundaryDataset, SourceMollifier, calibrate_radius,
                      extract_boundary_data, heat_kernel, laplace_bridge, solve_parabolic)
from .geometry import (BoundaryFace, Domain, SpatialGrid, TimeGrid, build_grid,
                       build_time_grid, classify_boundary)
from .optimize import OptimOptions, Problem, enforce_neumann, initial_guess, minimize
from .phantom import Phantom, letter_phantom, mask_from_image
from .reconstruct import ReconstructionResult, accumulate_w, metrics, recover_coefficient

__version__ = "0.1.0"
