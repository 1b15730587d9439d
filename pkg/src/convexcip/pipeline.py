"""End-to-end runs: simulate data, invert it, score the result."""

from __future__ import annotations

import dataclasses
import time
from typing import Optional

import numpy as np

from .carleman import BackgroundTerms, CarlemanParams, reference_stack
from .config import InverseConfig
from .data import add_noise, discretize_boundary
from .fieldio import read_pgm
from .forward import (AuxiliaryDomain, BoundaryDataset, SourceMollifier,
                      extract_boundary_data, solve_parabolic)
from .geometry import Domain, SpatialGrid, build_grid, build_time_grid
from .optimize import OptimOptions, Problem, initial_guess, minimize
from .phantom import Phantom, letter_phantom, mask_from_image, zero_phantom
from .reconstruct import ReconstructionResult, accumulate_w, metrics, recover_coefficient


def make_grid(cfg: InverseConfig) -> SpatialGrid:
    return build_grid(Domain(cfg.n, (cfg.lo,) * cfg.n, (cfg.hi,) * cfg.n), cfg.N)


def make_phantom(cfg: InverseConfig, grid: Optional[SpatialGrid] = None) -> Phantom:
    grid = grid or make_grid(cfg)
    if cfg.phantom_image:
        img, maxval = read_pgm(cfg.phantom_image)
        return mask_from_image(grid, img, cfg.amplitude, maxval)
    if cfg.phantom.lower() in ("zero", "none") or cfg.amplitude == 0:
        return zero_phantom(grid)
    return letter_phantom(grid, cfg.phantom, cfg.amplitude)


def simulate(cfg: InverseConfig, noisy: bool = True) -> BoundaryDataset:
    """Forward solve, boundary extraction and (optionally) noise."""
    grid = make_grid(cfg)
    ph = make_phantom(cfg, grid)
    aux = AuxiliaryDomain(cfg.aux_shape, (), cfg.forward_radius, cfg.forward_mesh,
                          cfg.forward_steps)
    sol = solve_parabolic(aux, ph, SourceMollifier(cfg.xi), cfg.T, cfg.forward_steps,
                          grid=grid, method=cfg.time_scheme, solver=cfg.linear_solver,
                          fine_until=cfg.fine_until, substeps=cfg.substeps,
                          formulation=cfg.forward_formulation)
    ds = extract_boundary_data(sol, grid, cfg.g1_stencil)
    ds.provenance.update(phantom=ph.name, amplitude=cfg.amplitude, mesh=cfg.forward_mesh,
                         steps=cfg.forward_steps, radius=cfg.forward_radius,
                         formulation=cfg.forward_formulation)
    if noisy and cfg.sigma > 0:
        ds = add_noise(ds, cfg.sigma, cfg.seed, cfg.noise_mode)
    return ds


def carleman_params(cfg: InverseConfig) -> CarlemanParams:
    return CarlemanParams(cfg.lam, cfg.alpha, cfg.c, cfg.reg_order, cfg.reference)


def optim_options(cfg: InverseConfig) -> OptimOptions:
    return OptimOptions(cfg.method, cfg.grad_tol, cfg.max_iters, cfg.lbfgs_mem, cfg.armijo,
                        cfg.gamma)


def invert(ds: BoundaryDataset, cfg: InverseConfig, phantom: Optional[Phantom] = None,
           callback=None) -> ReconstructionResult:
    """discretize -> initial guess -> minimise -> recover -> metrics."""
    grid = make_grid(cfg)
    if not grid.same_as(ds.grid):
        raise ValueError(f"dataset grid {ds.grid.N} on {ds.grid.domain} does not match "
                         f"config grid {grid.N} on {grid.domain}")
    tg = build_time_grid(cfg.epsilon, cfg.T, cfg.Nt)
    bg = BackgroundTerms(grid, cfg.epsilon)
    dbd = discretize_boundary(ds, tg, anchor=bg if cfg.anchor else None)
    params = carleman_params(cfg)
    problem = Problem(bg, tg, params, dbd)
    V0 = initial_guess(dbd, bg, tg)
    t0 = time.perf_counter()
    state = minimize(V0, problem, optim_options(cfg), callback)
    wall = time.perf_counter() - t0
    W = accumulate_w(state.V, bg, tg)
    a = recover_coefficient(W, bg, tg, form=cfg.recovery_form, V=state.V)
    if cfg.reference == "background":
        ref = reference_stack(grid, tg)
        a = a - recover_coefficient(accumulate_w(ref, bg, tg), bg, tg,
                                    form=cfg.recovery_form, V=ref)
    met = metrics(a, phantom, clip=cfg.clip) if phantom is not None else None
    diag = {
        "iterations": state.iterations,
        "converged": state.converged,
        "message": state.message,
        "grad_norm_initial": state.grad_history[0],
        "grad_norm_final": state.grad_history[-1],
        "J_initial": state.J_history[0],
        "J_final": state.J_history[-1],
        "V_norm_final": state.norm_history[-1],
        "wall_s": wall,
    }
    res = ReconstructionResult(a, W, state.V, met, dataclasses.asdict(cfg), diag)
    res.state = state
    return res
