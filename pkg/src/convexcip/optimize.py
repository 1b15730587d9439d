"""Initial guess, boundary constraints and minimisation of the functional."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .carleman import (BackgroundTerms, CarlemanParams, free_mask, full_gradient,
                       reduce_gradient)
from .data import DiscreteBoundaryData
from .geometry import SpatialGrid, TimeGrid


class LineSearchError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def transfinite_lift(g: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Coons patch of the boundary values of ``g`` (Boolean sum of the
    per-axis linear blends).  Reproduces the boundary data exactly and any
    multilinear-plus-separable field such as ``|x|^2``."""
    gb = np.where(grid.boundary_mask, g, 0.0)
    r = gb
    for ax in range(grid.n):
        s = (grid.axis(ax) - grid.domain.lo[ax]) / (grid.domain.hi[ax] - grid.domain.lo[ax])
        shape = [1] * grid.n
        shape[ax] = -1
        s = s.reshape(shape)
        lo = np.take(r, [0], axis=ax)
        hi = np.take(r, [-1], axis=ax)
        r = r - ((1 - s) * lo + s * hi)
    # P = I - prod(I - P_a); only boundary values of g enter
    return gb - r


def background_v(grid: SpatialGrid, epsilon: float) -> np.ndarray:
    """``d/dt ln u0`` at ``t = eps``: ``|x|^2/(4 eps^2) - n/(2 eps)``."""
    return grid.r2 / (4 * epsilon**2) - grid.n / (2 * epsilon)


def initial_guess(dbd: DiscreteBoundaryData, bg: BackgroundTerms, tg: TimeGrid,
                  grid: Optional[SpatialGrid] = None) -> np.ndarray:
    """Layer ``j``: ``gamma_j v_bg`` plus the lift of ``dirichlet_j - gamma_j v_bg``
    with ``gamma_j = (T - t_j)/(T - eps)``."""
    grid = grid or dbd.grid
    vbg = background_v(grid, tg.epsilon)
    gam = (tg.T - tg.nodes) / (tg.T - tg.epsilon)
    V = np.empty((tg.k + 1,) + grid.N)
    for j in range(tg.k + 1):
        V[j] = gam[j] * vbg + transfinite_lift(dbd.dirichlet[j] - gam[j] * vbg, grid)
        V[j][grid.boundary_mask] = dbd.dirichlet[j][grid.boundary_mask]
    return V


def enforce_neumann(V: np.ndarray, dbd: DiscreteBoundaryData,
                    grid: Optional[SpatialGrid] = None) -> np.ndarray:
    """Set the layer next to Gamma0 so that the one-sided stencil
    ``(3 v_I - 4 v_(I-1) + v_(I-2)) / (2 dx) = neumann`` holds with
    ``v_I = dirichlet``.  Edge lines of the face keep Dirichlet data only."""
    grid = grid or dbd.grid
    dx = grid.spacing[0]
    out = np.array(V, dtype=float, copy=True)
    lines = (slice(None),) + (slice(1, -1),) * (grid.n - 1)
    d = dbd.dirichlet[:, -1][lines]
    q = dbd.neumann[lines]
    out[:, -2][lines] = 0.75 * d + 0.25 * out[:, -3][lines] - 0.5 * dx * q
    return out


def neumann_residual(V: np.ndarray, dbd: DiscreteBoundaryData) -> float:
    grid = dbd.grid
    dx = grid.spacing[0]
    lines = (slice(None),) + (slice(1, -1),) * (grid.n - 1)
    st = (3 * V[:, -1] - 4 * V[:, -2] + V[:, -3]) / (2 * dx)
    return float(np.max(np.abs(st[lines] - dbd.neumann[lines])))


@dataclass
class Problem:
    """Functional, gradient and constraints for one inversion."""

    bg: BackgroundTerms
    tg: TimeGrid
    params: CarlemanParams
    dbd: Optional[DiscreteBoundaryData] = None
    neumann: bool = True

    @property
    def grid(self) -> SpatialGrid:
        return self.bg.grid

    @property
    def free(self) -> np.ndarray:
        return free_mask(self.grid, self.neumann)

    def constrain(self, V):
        if self.neumann and self.dbd is not None:
            return enforce_neumann(V, self.dbd, self.grid)
        return V

    def value_and_grad(self, V):
        J, g = full_gradient(V, self.bg, self.tg, self.params)
        return J, reduce_gradient(g, self.grid, self.neumann)

    def to_vector(self, V) -> np.ndarray:
        return V[:, self.free].ravel()

    def from_vector(self, z, template) -> np.ndarray:
        V = np.array(template, dtype=float, copy=True)
        V[:, self.free] = z.reshape(V.shape[0], -1)
        return self.constrain(V)


@dataclass
class OptimState:
    V: np.ndarray
    iterations: int = 0
    J_history: list = field(default_factory=list)
    grad_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    norm_history: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "grad_norm", "step_size", "wall_ms"])
            for i, row in enumerate(zip(self.J_history, self.grad_history,
                                        self.step_history, self.wall_ms)):
                w.writerow([i, repr(row[0]), repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])


@dataclass(frozen=True)
class OptimOptions:
    method: str = "lbfgs"
    grad_tol: float = 0.01
    max_iters: int = 5000
    lbfgs_mem: int = 10
    armijo: float = 1e-4
    gamma: float = 1e-3
    halve_on_increase: bool = True
    max_backtracks: int = 60

    def __post_init__(self):
        if self.method not in ("lbfgs", "gd"):
            raise ValueError("method must be 'lbfgs' or 'gd'")


def minimize(V0: np.ndarray, problem: Problem, options: OptimOptions = OptimOptions(),
             callback: Optional[Callable[[OptimState], None]] = None) -> OptimState:
    """Minimise over the free nodes; constraints are re-applied after every step.

    Stops when the Euclidean norm of the (reduced) nodal gradient field drops
    to ``grad_tol``.
    """
    t0 = time.perf_counter()
    V = problem.constrain(np.asarray(V0, dtype=float))
    z = problem.to_vector(V)
    J, G = problem.value_and_grad(V)
    g = problem.to_vector(G)
    state = OptimState(V=V)

    def log(J, gnorm, step):
        if not np.isfinite(J):
            state.message = "non-finite functional value"
            raise FloatingPointError(state.message)
        state.J_history.append(float(J))
        state.grad_history.append(float(gnorm))
        state.step_history.append(float(step))
        state.wall_ms.append(1e3 * (time.perf_counter() - t0))
        state.norm_history.append(float(np.sqrt(np.sum(state.V**2) * problem.grid.cellvol)))
        if callback:
            callback(state)

    log(J, np.linalg.norm(g), 0.0)
    S, Y = [], []
    step_gd = options.gamma
    while True:
        gnorm = np.linalg.norm(g)
        if gnorm <= options.grad_tol:
            state.converged = True
            state.message = "gradient tolerance reached"
            break
        if state.iterations >= options.max_iters:
            state.message = "iteration limit reached"
            break
        if options.method == "lbfgs":
            d = -_two_loop(g, S, Y)
            slope = float(g @ d)
            if slope >= 0:  # lost descent: restart from steepest descent
                S.clear()
                Y.clear()
                d = -g
                slope = -float(g @ g)
            step = 1.0 if S else min(1.0, 1.0 / max(gnorm, 1e-300))
            for _ in range(options.max_backtracks):
                z_new = z + step * d
                V_new = problem.from_vector(z_new, state.V)
                J_new, G_new = problem.value_and_grad(V_new)
                if np.isfinite(J_new) and J_new <= J + options.armijo * step * slope:
                    break
                step *= 0.5
            else:
                raise LineSearchError(
                    f"Armijo backtracking failed at iteration {state.iterations}", state
                )
            g_new = problem.to_vector(G_new)
            s_vec, y_vec = z_new - z, g_new - g
            if float(s_vec @ y_vec) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                S.append(s_vec)
                Y.append(y_vec)
                if len(S) > options.lbfgs_mem:
                    S.pop(0)
                    Y.pop(0)
        else:
            step = step_gd
            z_new = z - step * g
            V_new = problem.from_vector(z_new, state.V)
            J_new, G_new = problem.value_and_grad(V_new)
            if options.halve_on_increase:
                tries = 0
                while not (J_new <= J) and tries < options.max_backtracks:
                    step *= 0.5
                    z_new = z - step * g
                    V_new = problem.from_vector(z_new, state.V)
                    J_new, G_new = problem.value_and_grad(V_new)
                    tries += 1
                step_gd = step
            g_new = problem.to_vector(G_new)
        z, J, g = z_new, J_new, g_new
        state.V = V_new
        state.iterations += 1
        log(J, np.linalg.norm(g), step)
    return state


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
