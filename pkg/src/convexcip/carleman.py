"""Discrete elliptic residuals, the Carleman weighted functional and its gradient.

A field stack ``V`` is an array of shape ``(k + 1, *grid.N)``; layer ``i`` holds
``v(., t_i)``.  Residuals live on interior nodes only.

Two formulations are supported:

* ``reference="none"``: the operators exactly as displayed, penalty on ``V``.
* ``reference="background"``: residuals and penalty are taken relative to the
  analytic zero-potential stack ``V_ref`` (time stencils of ``ln u0``).  The
  residual becomes ``L_i(V) - L_i(V_ref)`` and the penalty acts on
  ``V - V_ref``.  This removes the large, potential-independent truncation
  error of the time stencils near ``t = epsilon``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .geometry import SpatialGrid, TimeGrid

OVERFLOW_EXPONENT = 300.0


@dataclass(frozen=True)
class BackgroundTerms:
    """``w(x, eps) = -|x|^2/(4 eps) - n ln(2 sqrt(pi eps))`` and its gradient."""

    grid: SpatialGrid
    epsilon: float

    @cached_property
    def w_eps(self) -> np.ndarray:
        n, eps = self.grid.n, self.epsilon
        return -self.grid.r2 / (4 * eps) - n * np.log(2 * np.sqrt(np.pi * eps))

    @cached_property
    def grad_w_eps(self) -> tuple[np.ndarray, ...]:
        return tuple(-c / (2 * self.epsilon) for c in self.grid.coords)


@dataclass(frozen=True)
class CarlemanParams:
    lam: float = 3.0
    alpha: float = 3e-5
    c: float = 5.0
    reg_order: int = 3
    reference: str = "background"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.reg_order not in (2, 3):
            raise ValueError("reg_order must be 2 or 3")
        if self.reference not in ("none", "background"):
            raise ValueError("reference must be 'none' or 'background'")


def carleman_weight(x1, lam: float):
    """``exp(2 lam x1^2)``."""
    return np.exp(2.0 * lam * np.asarray(x1, dtype=float) ** 2)


def log_stencils(s: np.ndarray, h: float) -> np.ndarray:
    """Time stencils along axis 0: forward differences, four-point endpoint."""
    if s.shape[0] < 5:
        raise ValueError("the endpoint stencil needs at least 5 time nodes (k >= 4)")
    d = np.empty_like(s, dtype=float)
    d[:-1] = (s[1:] - s[:-1]) / h
    d[-1] = (3 * s[-1] - s[-2] - s[-3] - s[-4]) / (6 * h)
    return d


def log_heat_kernel(r2, t, n: int):
    return -np.asarray(r2) / (4 * t) - n * np.log(2 * np.sqrt(np.pi * t))


@lru_cache(maxsize=32)
def reference_stack(grid: SpatialGrid, tg: TimeGrid) -> np.ndarray:
    """Stencil stack of the zero-potential solution ``ln u0`` on every node."""
    s = np.stack([log_heat_kernel(grid.r2, t, grid.n) for t in tg.nodes])
    out = log_stencils(s, tg.h)
    out.setflags(write=False)
    return out


def analytic_stack(grid: SpatialGrid, tg: TimeGrid) -> np.ndarray:
    """Pointwise ``v = d/dt ln u0 = |x|^2/(4t^2) - n/(2t)`` at every ``t_i``."""
    return np.stack([grid.r2 / (4 * t * t) - grid.n / (2 * t) for t in tg.nodes])


# ---------------------------------------------------------------- stencils

def _shift(n: int, ax: int, off: int):
    """Slice of the trailing ``n`` axes selecting interior nodes shifted by ``off``."""
    sl = [slice(1, -1)] * n
    sl[ax] = {-1: slice(0, -2), 0: slice(1, -1), 1: slice(2, None)}[off]
    return (Ellipsis,) + tuple(sl)


def laplacian(V: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    n = grid.n
    out = 0.0
    for ax, dx in enumerate(grid.spacing):
        out = out + (V[_shift(n, ax, 1)] + V[_shift(n, ax, -1)] - 2 * V[_shift(n, ax, 0)]) / dx**2
    return out


def laplacian_T(r: np.ndarray, grid: SpatialGrid, shape) -> np.ndarray:
    n = grid.n
    out = np.zeros(shape)
    for ax, dx in enumerate(grid.spacing):
        q = r / dx**2
        out[_shift(n, ax, 1)] += q
        out[_shift(n, ax, -1)] += q
        out[_shift(n, ax, 0)] -= 2 * q
    return out


def gradient_central(V: np.ndarray, grid: SpatialGrid) -> list[np.ndarray]:
    n = grid.n
    return [
        (V[_shift(n, ax, 1)] - V[_shift(n, ax, -1)]) / (2 * dx)
        for ax, dx in enumerate(grid.spacing)
    ]


def gradient_central_T(rs, grid: SpatialGrid, shape) -> np.ndarray:
    n = grid.n
    out = np.zeros(shape)
    for ax, (dx, r) in enumerate(zip(grid.spacing, rs)):
        q = r / (2 * dx)
        out[_shift(n, ax, 1)] += q
        out[_shift(n, ax, -1)] -= q
    return out


def _inner(V: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    return V[(Ellipsis,) + (slice(1, -1),) * grid.n]


# ---------------------------------------------------------------- residuals

def _raw_residuals(V: np.ndarray, bg: BackgroundTerms, tg: TimeGrid):
    grid, h, k = bg.grid, tg.h, tg.k
    if V.shape != (k + 1,) + grid.N:
        raise ValueError(f"stack shape {V.shape} does not match (k+1, *N) = {(k + 1,) + grid.N}")
    gv = gradient_central(V, grid)
    gw = [_inner(g, grid) for g in bg.grad_w_eps]
    G = []
    for gvc, gwc in zip(gv, gw):
        S = h * np.cumsum(gvc, axis=0)
        S[0] = 0.0  # the i = 0 equation carries no Volterra sum
        G.append(gwc + S)
    L = laplacian(V, grid)
    L = L + 2 * sum(a * b for a, b in zip(gv, G))
    Vi = _inner(V, grid)
    L[:-1] += (Vi[:-1] - Vi[1:]) / h
    L[-1] += (Vi[-2] + Vi[-3] + Vi[-4] - 3 * Vi[-1]) / (6 * h)
    return L, gv, G


def residuals(V: np.ndarray, bg: BackgroundTerms, tg: TimeGrid) -> np.ndarray:
    """``L_0 .. L_k`` on interior nodes, shape ``(k + 1, *(N - 2))``."""
    return _raw_residuals(np.asarray(V, dtype=float), bg, tg)[0]


# ---------------------------------------------------------------- functional

def log_weight(bg: BackgroundTerms, params: CarlemanParams) -> np.ndarray:
    """``log(exp(-2 lam c) phi_lam(x1))`` on interior nodes."""
    x1 = _inner(bg.grid.coords[0], bg.grid)
    worst = float(params.lam * np.max(x1**2))
    if worst > OVERFLOW_EXPONENT:
        raise OverflowError(
            f"lambda * x1^2 = {worst:.1f} exceeds {OVERFLOW_EXPONENT}: rescale the domain "
            "or lower lambda"
        )
    return 2 * params.lam * (x1**2 - params.c)


def _weight(bg, params):
    return np.exp(log_weight(bg, params)) * bg.grid.cellvol


def sobolev_indices(n: int, order: int):
    """All multi-indices ``beta`` with ``|beta| <= order``."""
    return [b for b in itertools.product(range(order + 1), repeat=n) if sum(b) <= order]


def _diffs(U: np.ndarray, beta, grid: SpatialGrid) -> np.ndarray:
    n = grid.n
    d = U
    for ax, m in enumerate(beta):
        for _ in range(m):
            d = np.diff(d, axis=d.ndim - n + ax) / grid.spacing[ax]
    return d


def _diffs_T(d: np.ndarray, beta, grid: SpatialGrid) -> np.ndarray:
    n = grid.n
    for ax in reversed(range(n)):
        axis = d.ndim - n + ax
        for _ in range(beta[ax]):
            pad = [(0, 0)] * d.ndim
            pad[axis] = (1, 1)
            d = -np.diff(np.pad(d, pad), axis=axis) / grid.spacing[ax]
    return d


def sobolev_norm2(U: np.ndarray, grid: SpatialGrid, order: int) -> float:
    """Sum over layers and ``|beta| <= order`` of squared forward differences."""
    return sum(
        float(np.sum(_diffs(U, b, grid) ** 2)) for b in sobolev_indices(grid.n, order)
    ) * grid.cellvol


def sobolev_apply(U: np.ndarray, grid: SpatialGrid, order: int) -> np.ndarray:
    """Symmetric stencil ``S`` with ``sobolev_norm2(U) = <U, S U>``."""
    out = np.zeros_like(U, dtype=float)
    for b in sobolev_indices(grid.n, order):
        out += _diffs_T(_diffs(U, b, grid), b, grid)
    return out * grid.cellvol


def _reference(bg, tg, params):
    if params.reference == "background":
        return reference_stack(bg.grid, tg)
    return None


def functional_parts(V, bg: BackgroundTerms, tg: TimeGrid, params: CarlemanParams):
    """``(residual term, penalty term without alpha)`` of the functional."""
    V = np.asarray(V, dtype=float)
    L = residuals(V, bg, tg)
    ref = _reference(bg, tg, params)
    U = V
    if ref is not None:
        L = L - residuals(ref, bg, tg)
        U = V - ref
    res = float(np.sum(L * L * _weight(bg, params)))
    return res, sobolev_norm2(U, bg.grid, params.reg_order)


def functional(V, bg: BackgroundTerms, tg: TimeGrid, params: CarlemanParams) -> float:
    res, reg = functional_parts(V, bg, tg, params)
    return res + params.alpha * reg


def full_gradient(V, bg: BackgroundTerms, tg: TimeGrid, params: CarlemanParams):
    """``(J, dJ/dV)`` with respect to every node value, constraints ignored."""
    V = np.asarray(V, dtype=float)
    grid, h = bg.grid, tg.h
    L, gv, G = _raw_residuals(V, bg, tg)
    ref = _reference(bg, tg, params)
    U = V
    if ref is not None:
        L = L - residuals(ref, bg, tg)
        U = V - ref
    wt = _weight(bg, params)
    wl = wt * L
    reg_grad = sobolev_apply(U, grid, params.reg_order)
    J = float(np.sum(wl * L)) + params.alpha * float(np.sum(U * reg_grad))

    r = 2 * wl
    g = laplacian_T(r, grid, V.shape)
    # coupling through grad v_i itself
    g += gradient_central_T([2 * r * Gc for Gc in G], grid, V.shape)
    # coupling through the Volterra sums: v_j enters G_i for every i >= max(j, 1)
    acc = []
    for gvc in gv:
        Q = 2 * h * r * gvc
        Q[0] = 0.0
        acc.append(np.cumsum(Q[::-1], axis=0)[::-1])
    g += gradient_central_T(acc, grid, V.shape)
    # time stencils
    inner = (Ellipsis,) + (slice(1, -1),) * grid.n
    gi = g[inner]
    gi[:-1] += r[:-1] / h
    gi[1:] -= r[:-1] / h
    e = r[-1] / (6 * h)
    gi[-1] -= 3 * e
    gi[-2] += e
    gi[-3] += e
    gi[-4] += e
    g += 2 * params.alpha * reg_grad
    return J, g


# ---------------------------------------------------------------- constraints

def free_mask(grid: SpatialGrid, neumann: bool = True) -> np.ndarray:
    """Optimisation variables: interior nodes minus the Neumann-derived layer."""
    m = grid.interior_mask.copy()
    if neumann:
        m[-2] = False
    return m


def reduce_gradient(g: np.ndarray, grid: SpatialGrid, neumann: bool = True) -> np.ndarray:
    """Fold the derived layer's sensitivity into free nodes, zero elsewhere.

    The derived layer satisfies ``v[-2] = 3/4 d + 1/4 v[-3] - (dx/2) q`` on
    interior lines, so its gradient contributes with weight 1/4 to ``v[-3]``.
    """
    out = np.array(g, dtype=float, copy=True)
    if neumann:
        lines = (Ellipsis,) + (slice(1, -1),) * (grid.n - 1)
        inner_last = out[:, -2][lines]
        out[:, -3][lines] += 0.25 * inner_last
    out[:, ~free_mask(grid, neumann)] = 0.0
    return out


def gradient(V, bg: BackgroundTerms, tg: TimeGrid, params: CarlemanParams,
             neumann: bool = True) -> np.ndarray:
    """Gradient of ``J`` with respect to the free node values.

    Zero on Dirichlet nodes and on the Neumann-derived layer; the derived
    layer's sensitivity is folded into its free neighbour.
    """
    return reduce_gradient(full_gradient(V, bg, tg, params)[1], bg.grid, neumann)


def convexity_probe(V1, V2, bg: BackgroundTerms, tg: TimeGrid, params: CarlemanParams,
                    neumann: bool = True, atol: float = 1e-12) -> float:
    """Bregman gap ``J(V2) - J(V1) - <J'(V1), V2 - V1>``."""
    V1 = np.asarray(V1, dtype=float)
    V2 = np.asarray(V2, dtype=float)
    fixed = ~free_mask(bg.grid, neumann)
    D = V2 - V1
    if neumann:
        # derived layer must differ exactly as its free neighbour dictates
        lines = (Ellipsis,) + (slice(1, -1),) * (bg.grid.n - 1)
        expect = 0.25 * D[:, -3][lines]
        if not np.allclose(D[:, -2][lines], expect, atol=atol, rtol=0):
            raise ValueError("stacks disagree on the Neumann-constrained layer")
        fixed = fixed & ~_derived_mask(bg.grid)
    if np.max(np.abs(D[:, fixed]), initial=0.0) > atol:
        raise ValueError("stacks must share their Dirichlet boundary values")
    J1, g1 = full_gradient(V1, bg, tg, params)
    g1 = reduce_gradient(g1, bg.grid, neumann)
    J2 = functional(V2, bg, tg, params)
    return J2 - J1 - float(np.sum(g1 * D))


def _derived_mask(grid: SpatialGrid) -> np.ndarray:
    m = np.zeros(grid.N, dtype=bool)
    lines = (slice(1, -1),) * (grid.n - 1)
    m[(-2,) + lines] = True
    return m
