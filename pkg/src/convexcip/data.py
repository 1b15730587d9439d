"""Measurement noise and the discrete boundary conditions for the ``v`` stack."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .carleman import BackgroundTerms, log_stencils
from .forward import BoundaryDataset
from .geometry import SpatialGrid, TimeGrid


@dataclass(frozen=True)
class DiscreteBoundaryData:
    """``dirichlet[i]`` on all boundary nodes (full-grid arrays, NaN inside)
    and ``neumann[i]`` on the Gamma0 face, for ``i = 0..k``.

    Layers ``i < k`` use the forward difference in time, layer ``k`` the
    four-point endpoint stencil.
    """

    grid: SpatialGrid
    tg: TimeGrid
    dirichlet: np.ndarray
    neumann: np.ndarray
    source: dict = field(default_factory=dict)


def add_noise(data: BoundaryDataset, sigma: float, seed: int,
              mode: str = "sample") -> BoundaryDataset:
    """Multiply the data by ``1 + sigma * zeta``, ``zeta ~ U[-1, 1]``.

    ``mode="sample"`` draws ``zeta`` i.i.d. per space-time sample;
    ``mode="function"`` draws one ``zeta`` for all of ``g0`` and one for all
    of ``g1``.  ``g0`` and ``g1`` use independent child streams of ``seed``.
    """
    if not 0.0 <= sigma < 1.0:
        raise ValueError(f"noise level must lie in [0, 1), got {sigma}")
    if mode not in ("sample", "function"):
        raise ValueError("mode must be 'sample' or 'function'")
    if sigma == 0.0:
        return replace(data, g0=data.g0.copy(), g1=data.g1.copy())
    s0, s1 = np.random.SeedSequence(seed).spawn(2)
    draw = lambda ss, shape: np.random.default_rng(ss).uniform(
        -1.0, 1.0, shape if mode == "sample" else ())
    z0 = draw(s0, data.g0.shape)
    z1 = draw(s1, data.g1.shape)
    g0 = data.g0 * (1.0 + sigma * z0)
    if np.any(g0 <= 0):
        raise ValueError(f"noise level {sigma} drives g0 non-positive; use a smaller sigma")
    g1 = data.g1 * (1.0 + sigma * z1)
    prov = dict(data.provenance, kind="noisy", sigma=sigma, seed=seed, noise_mode=mode)
    return BoundaryDataset(data.grid, data.times.copy(), g0, g1, prov)


def _sample_times(values: np.ndarray, times: np.ndarray, targets: np.ndarray,
                  kind: str = "cubic") -> np.ndarray:
    """Exact samples where a target coincides with a data time; otherwise a
    cubic spline in time (``kind="linear"`` for piecewise-linear)."""
    out = np.empty((len(targets),) + values.shape[1:])
    scale = max(abs(times[-1]), 1.0)
    spline = None
    for m, t in enumerate(targets):
        j = int(np.argmin(np.abs(times - t)))
        if abs(times[j] - t) <= 1e-9 * scale:
            out[m] = values[j]
            continue
        if not times[0] < t < times[-1]:
            raise ValueError(
                f"time {t:.6g} lies outside the data range [{times[0]:.6g}, {times[-1]:.6g}]"
            )
        if kind == "linear" or len(times) < 4:
            j = int(np.searchsorted(times, t))
            w = (t - times[j - 1]) / (times[j] - times[j - 1])
            out[m] = (1 - w) * values[j - 1] + w * values[j]
        else:
            if spline is None:
                spline = CubicSpline(times, values, axis=0)
            out[m] = spline(t)
    return out


def log_data(data: BoundaryDataset, tg: TimeGrid,
             anchor: Optional[BackgroundTerms] = None):
    """``s0 = ln g0`` on the boundary and ``s1 = g1 / g0`` on Gamma0 at every t_i.

    With ``anchor`` the first time layer is replaced by the asymptotic values
    ``w(x, eps)`` and ``dw/dx1(x, eps)``: at ``t = eps`` the source is still
    nearly a point and simulated data carry no usable information there.
    """
    grid = data.grid
    if np.any(data.g0 <= 0):
        raise ValueError("g0 must be positive everywhere for the log transform")
    t = tg.nodes
    # interpolate the smooth log quantities, not g0 itself (it spans many decades)
    log_g0 = np.log(data.g0)
    ratio = data.g1 / data.g0[:, grid.gamma0_mask[grid.boundary_mask]]
    s0 = np.full((len(t),) + grid.N, np.nan)
    s0[:, grid.boundary_mask] = _sample_times(log_g0, data.times, t)
    s1 = _sample_times(ratio, data.times, t).reshape((len(t),) + grid.N[1:])
    if anchor is not None:
        s0[0, grid.boundary_mask] = anchor.w_eps[grid.boundary_mask]
        s1[0] = anchor.grad_w_eps[0][-1]
    return s0, s1


def discretize_boundary(data: BoundaryDataset, tg: TimeGrid,
                        anchor: Optional[BackgroundTerms] = None) -> DiscreteBoundaryData:
    """Time stencils of ``s0 = ln g0`` and ``s1 = g1/g0`` at the nodes of ``tg``."""
    if tg.k + 1 < 5:
        raise ValueError("need at least 5 time nodes (k >= 4)")
    s0, s1 = log_data(data, tg, anchor)
    dirichlet = log_stencils(s0, tg.h)
    neumann = log_stencils(s1, tg.h)
    src = dict(data.provenance, anchored=anchor is not None)
    return DiscreteBoundaryData(data.grid, tg, dirichlet, neumann, src)
