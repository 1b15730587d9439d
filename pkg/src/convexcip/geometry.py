"""Rectangular domains, uniform grids, time partitions and boundary faces.

Grid arrays use ``indexing='ij'``: axis 0 is x1, so a C-order flatten
enumerates nodes row-major with x1 slowest.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class BoundaryFace(enum.Enum):
    GAMMA0 = "Gamma0"  # measurement face x1 = hi[0]
    GAMMA1 = "Gamma1"  # rest of the boundary


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_i (lo[i], hi[i])`` in 2 or 3 dimensions."""

    n: int = 2
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        lo = tuple(float(v) for v in self.lo) or (1.0,) * self.n
        hi = tuple(float(v) for v in self.hi) or (2.0,) * self.n
        if len(lo) != self.n or len(hi) != self.n:
            raise ValueError("lo and hi must have one entry per axis")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"need lo < hi on every axis, got lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))


@dataclass(frozen=True)
class SpatialGrid:
    domain: Domain
    N: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        N = tuple(int(v) for v in self.N)
        if len(N) != self.domain.n:
            raise ValueError(f"need {self.domain.n} node counts, got {len(N)}")
        if min(N) < 4:
            raise ValueError(
                f"every axis needs at least 4 nodes (got N={N}): the second-order "
                "one-sided Neumann stencil and the third-order difference norm "
                "reach three nodes deep"
            )
        object.__setattr__(self, "N", N)
        sp = tuple((b - a) / (m - 1) for a, b, m in zip(self.domain.lo, self.domain.hi, N))
        object.__setattr__(self, "spacing", sp)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def shape(self) -> tuple[int, ...]:
        return self.N

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along axis ``i``, computed from integer indices."""
        return self.domain.lo[i] + np.arange(self.N[i]) * self.spacing[i]

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.axis(i) for i in range(self.n)], indexing="ij"))

    @cached_property
    def r2(self) -> np.ndarray:
        return sum(c * c for c in self.coords)

    def node(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.asarray(self.domain.lo) + idx * np.asarray(self.spacing)

    def nearest_index(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        rel = (x - np.asarray(self.domain.lo)) / np.asarray(self.spacing)
        return tuple(int(v) for v in np.clip(np.rint(rel), 0, np.asarray(self.N) - 1))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        for ax in range(self.n):
            sl = [slice(None)] * self.n
            sl[ax] = 0
            m[tuple(sl)] = True
            sl[ax] = -1
            m[tuple(sl)] = True
        return m

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def gamma0_mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[-1] = True
        return m

    def interior(self, arr: np.ndarray) -> np.ndarray:
        """View of the interior nodes of the trailing ``n`` axes of ``arr``."""
        return arr[(Ellipsis,) + (slice(1, -1),) * self.n]

    def gamma0(self, arr: np.ndarray) -> np.ndarray:
        """Values of ``arr`` on the Gamma0 face (trailing ``n`` axes)."""
        return arr[(Ellipsis, -1) + (slice(None),) * (self.n - 1)]

    def same_as(self, other: "SpatialGrid") -> bool:
        return (
            self.N == other.N
            and np.allclose(self.domain.lo, other.domain.lo)
            and np.allclose(self.domain.hi, other.domain.hi)
        )


@dataclass(frozen=True)
class TimeGrid:
    epsilon: float
    T: float
    k: int
    h0: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.T:
            raise ValueError(f"need 0 < epsilon < T, got epsilon={self.epsilon}, T={self.T}")
        if self.k < 4:
            raise ValueError(
                f"k={self.k}: the endpoint time stencil for L_k uses t_(k-3), so k >= 4"
            )
        if self.h < self.h0:
            raise ValueError(f"time step h={self.h} is below the floor h0={self.h0}")

    @property
    def h(self) -> float:
        return (self.T - self.epsilon) / self.k

    @property
    def nodes(self) -> np.ndarray:
        t = self.epsilon + np.arange(self.k + 1) * ((self.T - self.epsilon) / self.k)
        t[-1] = self.T
        return t


def build_grid(domain: Domain, N) -> SpatialGrid:
    if np.isscalar(N):
        N = (int(N),) * domain.n
    return SpatialGrid(domain, tuple(N))


def build_time_grid(epsilon: float, T: float, k: int, h0: float = 0.0) -> TimeGrid:
    return TimeGrid(float(epsilon), float(T), int(k), float(h0))


def classify_boundary(grid: SpatialGrid, node) -> set[BoundaryFace]:
    """Faces containing ``node`` (an integer index tuple).

    Nodes on x1 = hi[0] are Gamma0; any node that also lies on another face
    (edges and corners) additionally reports Gamma1.
    """
    idx = tuple(int(i) for i in node)
    if len(idx) != grid.n or any(not 0 <= i < m for i, m in zip(idx, grid.N)):
        raise IndexError(f"node {idx} outside grid of shape {grid.N}")
    x = grid.node(idx)
    half = 0.5 * np.asarray(grid.spacing)
    lo, hi = np.asarray(grid.domain.lo), np.asarray(grid.domain.hi)
    on_lo = np.abs(x - lo) < half
    on_hi = np.abs(x - hi) < half
    if not (on_lo.any() or on_hi.any()):
        raise ValueError(f"node {idx} is an interior node")
    faces = set()
    if on_hi[0]:
        faces.add(BoundaryFace.GAMMA0)
    if on_lo.any() or on_hi[1:].any():
        faces.add(BoundaryFace.GAMMA1)
    return faces
