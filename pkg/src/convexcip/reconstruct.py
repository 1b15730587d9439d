"""From the minimising stack to the coefficient, and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .carleman import BackgroundTerms, gradient_central, laplacian
from .geometry import SpatialGrid, TimeGrid
from .phantom import Phantom


def accumulate_w(V: np.ndarray, bg: BackgroundTerms, tg: TimeGrid) -> np.ndarray:
    """``w_i = h * sum_{j <= i} v_j + w(., eps)``."""
    return tg.h * np.cumsum(np.asarray(V, dtype=float), axis=0) + bg.w_eps


def recover_coefficient(W: np.ndarray, bg: BackgroundTerms, tg: TimeGrid,
                        grid: Optional[SpatialGrid] = None, form: str = "w",
                        V: Optional[np.ndarray] = None) -> np.ndarray:
    """``a = [(w_k - w_eps) - h sum_i (Lap w_i + |grad w_i|^2)] / (T - eps)``.

    Interior nodes only; boundary nodes are zero.  ``form="v"`` replaces the
    first numerator by ``v_k - v_0`` (needs ``V``), for comparison studies.
    """
    grid = grid or bg.grid
    W = np.asarray(W, dtype=float)
    span = tg.T - tg.epsilon
    inner = (Ellipsis,) + (slice(1, -1),) * grid.n
    quad = laplacian(W, grid) + sum(g * g for g in gradient_central(W, grid))
    if form == "w":
        first = (W[-1] - bg.w_eps)[inner]
    elif form == "v":
        if V is None:
            raise ValueError("form='v' needs the v stack")
        first = (V[-1] - V[0])[inner]
    else:
        raise ValueError("form must be 'w' or 'v'")
    a = np.zeros(grid.N)
    a[inner] = (first - tg.h * quad.sum(axis=0)) / span
    return a


@dataclass
class Metrics:
    rel_L2_err: float
    max_value: float
    max_value_rel_err: float
    iou_at_half_max: float
    centroid_offset: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _centroid(mask, grid):
    if not mask.any():
        return None
    return np.array([c[mask].mean() for c in grid.coords])


def metrics(a_comp: np.ndarray, phantom: Phantom, clip: bool = False) -> Metrics:
    """Error metrics of ``a_comp`` against the phantom (interior maxima)."""
    grid = phantom.grid
    a = np.asarray(a_comp, dtype=float)
    if a.shape != grid.N:
        raise ValueError(f"field shape {a.shape} does not match phantom grid {grid.N}")
    if clip:
        a = np.maximum(a, 0.0)
    truth = phantom.values
    rel = float(np.linalg.norm(a - truth) / max(np.linalg.norm(truth), 1e-300))
    interior = grid.interior_mask
    mx = float(a[interior].max())
    amp = float(truth.max())
    mre = abs(mx - amp) / amp if amp > 0 else abs(mx)
    rec = interior & (a >= mx / 2) if mx > 0 else np.zeros(grid.N, dtype=bool)
    union = (rec | phantom.mask).sum()
    iou = float((rec & phantom.mask).sum() / union) if union else float("nan")
    c1, c2 = _centroid(rec, grid), _centroid(phantom.mask, grid)
    off = float(np.linalg.norm(c1 - c2)) if c1 is not None and c2 is not None else float("nan")
    return Metrics(rel, mx, float(mre), iou, off)


@dataclass
class ReconstructionResult:
    a_comp: np.ndarray
    w_layers: np.ndarray
    V: np.ndarray
    metrics: Optional[Metrics] = None
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
