"""Forward simulation of ``u_t = Laplace u + a u`` from a mollified point source.

The solve runs on an auxiliary box (or ball) around Omega with zero Dirichlet
data on its far boundary, then samples the solution on the grid of Omega.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate, ndimage

from .geometry import SpatialGrid
from .phantom import Phantom


class SolverError(RuntimeError):
    """Linear solve failed; carries the iteration count and residual."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


def heat_kernel(x, t, n: int):
    """Fundamental solution ``(2 sqrt(pi t))^-n exp(-|x|^2/(4t))``.

    ``x`` may be a single point (last axis of length ``n``) or a stack of them.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return np.exp(-r2 / (4 * t)) / (2 * np.sqrt(np.pi * t)) ** n


@dataclass(frozen=True)
class AuxiliaryDomain:
    shape: str = "box"
    center: tuple = ()
    radius: float = 6.0
    mesh: float = 1.0 / 60.0
    steps: int = 800

    def __post_init__(self):
        if self.shape not in ("box", "ball"):
            raise ValueError("shape must be 'box' or 'ball'")
        if self.radius <= 0 or self.mesh <= 0 or self.steps < 2:
            raise ValueError("radius and mesh must be positive and steps >= 2")

    def axes(self, n: int) -> list[np.ndarray]:
        c = self.center or (1.5,) * n
        m = int(round(2 * self.radius / self.mesh))
        return [ci - self.radius + self.mesh * np.arange(m + 1) for ci in c]


@dataclass(frozen=True)
class SourceMollifier:
    """``delta_xi(x) = C exp(1/(|x|^2 - xi^2))`` inside ``|x| < xi``."""

    xi: float = 0.05

    def shape(self, r2):
        r2 = np.asarray(r2, dtype=float)
        inside = r2 < self.xi**2
        out = np.zeros_like(r2)
        out[inside] = np.exp(1.0 / (r2[inside] - self.xi**2))
        return out

    def C_xi(self, n: int) -> float:
        """Continuum normalisation constant (radial quadrature)."""
        area = 2 * np.pi if n == 2 else 4 * np.pi
        val, _ = integrate.quad(
            lambda r: area * r ** (n - 1) * np.exp(1.0 / (r * r - self.xi**2)),
            0.0, self.xi, epsabs=0.0, epsrel=1e-13, limit=200,
        )
        return 1.0 / val

    def on_mesh(self, r2, cellvol: float):
        """Samples normalised so the mesh quadrature integrates to one."""
        d = self.shape(r2)
        total = d.sum() * cellvol
        if total <= 0:
            raise ValueError(
                "no mesh node lies inside the mollifier support; refine the mesh "
                "or enlarge xi"
            )
        return d / total


@dataclass
class ForwardSolution:
    """Solution samples on the grid of Omega (``u``) and on two planes
    outside the Gamma0 face at ``x1 = hi + d, hi + 2 d`` (``ghost``), where
    ``d = ghost_step`` is the auxiliary mesh spacing (a sixteenth of it in
    the scattered formulation)."""

    grid: SpatialGrid
    times: np.ndarray
    u: np.ndarray
    ghost: Optional[np.ndarray] = None
    ghost_step: Optional[float] = None


@dataclass
class BoundaryDataset:
    """Lateral measurements.

    ``g0[t, m]`` is ordered like ``np.flatnonzero(grid.boundary_mask)`` and
    ``g1[t, m]`` like the row-major nodes of the Gamma0 face.
    """

    grid: SpatialGrid
    times: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "clean"})

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        nb = int(self.grid.boundary_mask.sum())
        nf = int(np.prod(self.grid.N[1:]))
        if self.g0.shape != (len(self.times), nb):
            raise ValueError(f"g0 must have shape {(len(self.times), nb)}")
        if self.g1.shape != (len(self.times), nf):
            raise ValueError(f"g1 must have shape {(len(self.times), nf)}")

    def g0_full(self) -> np.ndarray:
        """g0 scattered onto full grid arrays, NaN in the interior."""
        out = np.full((len(self.times),) + self.grid.N, np.nan)
        out[:, self.grid.boundary_mask] = self.g0
        return out

    def g1_face(self) -> np.ndarray:
        return self.g1.reshape((len(self.times),) + self.grid.N[1:])


def _laplacian(axes, mask=None):
    n = len(axes)
    mats = []
    for x in axes:
        m = len(x) - 2
        h = x[1] - x[0]
        e = np.ones(m)
        mats.append(sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1]) / h**2)
    eye = [sp.identity(len(x) - 2) for x in axes]
    A = None
    for i in range(n):
        parts = [mats[j] if j == i else eye[j] for j in range(n)]
        term = parts[0]
        for p in parts[1:]:
            term = sp.kron(term, p)
        A = term if A is None else A + term
    A = A.tocsr()
    if mask is not None:
        idx = np.flatnonzero(mask.ravel())
        A = A[idx][:, idx]
    return A


def _phantom_on(points_axes, phantom: Optional[Phantom]):
    """Nearest-node extension of the phantom by zero outside closed Omega."""
    grids = np.meshgrid(*points_axes, indexing="ij")
    if phantom is None:
        return np.zeros(grids[0].shape)
    g = phantom.grid
    inside = np.ones(grids[0].shape, dtype=bool)
    idx = []
    for i, X in enumerate(grids):
        lo, hi = g.domain.lo[i], g.domain.hi[i]
        tol = 1e-12 * (hi - lo)
        inside &= (X >= lo - tol) & (X <= hi + tol)
        idx.append(np.clip(np.rint((X - lo) / g.spacing[i]).astype(int), 0, g.N[i] - 1))
    a = phantom.values[tuple(idx)]
    return np.where(inside, a, 0.0)


class _Stepper:
    def __init__(self, M, solver, rtol, maxiter):
        self.M = M
        self.solver = solver
        self.rtol = rtol
        self.maxiter = maxiter
        if solver == "direct":
            # minimum degree on A^T + A suits the symmetric stencil matrix
            self.lu = spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A")
        elif solver != "cg":
            raise ValueError("solver must be 'cg' or 'direct'")

    def solve(self, b, x0):
        if self.solver == "direct":
            return self.lu.solve(b)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.cg(self.M, b, x0=x0, rtol=self.rtol, atol=0.0,
                          maxiter=self.maxiter, callback=cb)
        if info != 0:
            res = float(np.linalg.norm(b - self.M @ x) / max(np.linalg.norm(b), 1e-300))
            raise SolverError(
                f"CG did not converge: {count[0]} iterations, relative residual {res:.3e}",
                iterations=count[0], residual=res,
            )
        return x


def solve_parabolic(
    aux: AuxiliaryDomain,
    phantom: Optional[Phantom],
    mollifier: SourceMollifier,
    T: float,
    steps: Optional[int] = None,
    grid: Optional[SpatialGrid] = None,
    method: str = "cn",
    solver: str = "direct",
    rtol: float = 1e-10,
    maxiter: int = 2000,
    record_every: int = 1,
    fine_until: float = 0.5,
    substeps: int = 4,
    formulation: str = "total",
) -> ForwardSolution:
    """Solve ``S_t = Laplace S + a S``, ``S(., 0) = delta_xi``, ``S = 0`` far away.

    Crank-Nicolson starts with four implicit-Euler half steps (Rannacher
    smoothing of the non-smooth initial datum).  The solution is sampled at
    every ``record_every``-th step on the nodes of ``grid`` (default: the
    phantom's grid) by cubic spline interpolation (linear in the scattered
    form below, which keeps the sampled perturbation's sign).

    Steps ending at or before ``fine_until`` are split into ``substeps``
    equal substeps (``substeps=1`` gives uniform stepping).

    ``formulation="scattered"`` instead solves for ``p = S - u0`` with the
    exact heat kernel ``u0``: ``p_t = Laplace p + a p + a u0``, ``p(., 0) = 0``,
    and returns ``u0 + p``.  The source is confined to Omega and smooth, so
    a small, coarse auxiliary domain suffices (used for 3-D); the mollifier
    is then unused.
    """
    if grid is None:
        if phantom is None:
            raise ValueError("need a grid when no phantom is given")
        grid = phantom.grid
    if phantom is not None and not phantom.grid.same_as(grid):
        raise ValueError("phantom grid differs from the sampling grid")
    steps = int(steps or aux.steps)
    if method not in ("cn", "ie"):
        raise ValueError("method must be 'cn' or 'ie'")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    if formulation not in ("total", "scattered"):
        raise ValueError("formulation must be 'total' or 'scattered'")
    scattered = formulation == "scattered"
    n = grid.n
    dt = T / steps
    axes = aux.axes(n)
    inner_axes = [x[1:-1] for x in axes]
    for i in range(n):
        lo, hi = grid.domain.lo[i], grid.domain.hi[i] + 3 * grid.spacing[i] * (i == 0)
        if not (inner_axes[i][0] < min(0.0, lo) and inner_axes[i][-1] > hi):
            raise ValueError("auxiliary domain must contain the origin and Omega strictly")
    shape = tuple(len(x) for x in inner_axes)
    mask = None
    if aux.shape == "ball":
        c = aux.center or (1.5,) * n
        G = np.meshgrid(*inner_axes, indexing="ij")
        mask = sum((X - ci) ** 2 for X, ci in zip(G, c)) < aux.radius**2
    A = _laplacian(axes, mask)
    a = _phantom_on(inner_axes, phantom).ravel()
    R2 = sum(X**2 for X in np.meshgrid(*inner_axes, indexing="ij")).ravel()
    u = np.zeros_like(R2) if scattered else mollifier.on_mesh(R2, aux.mesh**n)
    if mask is not None:
        sel = np.flatnonzero(mask.ravel())
        a, R2, u = a[sel], R2[sel], u[sel]
        if not scattered and abs(u.sum() * aux.mesh**n - 1) > 1e-9:
            raise ValueError("mollifier support leaves the ball")
    src = np.flatnonzero(a)
    a_src, r2_src = a[src], R2[src]
    A = (A + sp.diags(a)).tocsr()
    eye = sp.identity(A.shape[0], format="csr")

    # ghost planes for g1: one aux step out in the total form; in the scattered
    # form the exact kernel carries the steep part, so the planes sit much
    # closer and the one-sided difference of u0 stays accurate on coarse meshes
    ghost_step = aux.mesh / 16 if scattered else aux.mesh
    window, wcoords, gcoords = _sampling_plan(inner_axes, grid, ghost_step)

    def full(v):
        if mask is None:
            return v.reshape(shape)
        out = np.zeros(mask.size)
        out[sel] = v
        return out.reshape(shape)

    times, U, ghost = [], [], []
    # the perturbation is sampled linearly on Omega's nodes: a cubic spline
    # overshoots its early, steep fronts and can push u0 + p below zero
    order = 1 if scattered else 3
    if scattered:
        w_r2 = sum(c**2 for c in grid.coords)
        g_r2 = _ghost_r2(grid, ghost_step)

    def record(v, t):
        F = full(v)[window]
        c = ndimage.spline_filter(F, order=3, mode="nearest")
        Uw = ndimage.map_coordinates(c if order == 3 else F, wcoords, order=order,
                                     mode="nearest", prefilter=False).reshape(grid.N)
        Gw = ndimage.map_coordinates(c, gcoords, order=3, mode="nearest",
                                     prefilter=False).reshape((2,) + grid.N[1:])
        if scattered:
            Uw = Uw + heat_kernel_r2(w_r2, t, n)
            Gw = Gw + heat_kernel_r2(g_r2, t, n)
        U.append(Uw)
        ghost.append(Gw)
        times.append(t)

    def source(t):
        """``a u0`` at time ``t`` (scattered form only)."""
        out = np.zeros_like(u)
        out[src] = a_src * heat_kernel_r2(r2_src, t, n)
        return out

    # graded stepping: the Gaussian tails seen on the far boundary at early
    # times need a much finer step than the late, smooth solution; the phases
    # never recur, so only the current factorisation is kept
    cache = {}

    def stepper(m):
        if m not in cache:
            cache.clear()
            tau = dt / m
            if method == "cn":
                cache[m] = (_Stepper((eye - 0.5 * tau * A).tocsr(), solver, rtol, maxiter),
                            (eye + 0.5 * tau * A).tocsr())
            else:
                cache[m] = (_Stepper((eye - tau * A).tocsr(), solver, rtol, maxiter), None)
        return cache[m]

    done = 0  # substeps taken so far
    t = 0.0
    for s in range(steps):
        m = substeps if (s + 1) * dt <= fine_until + 1e-12 else 1
        tau = dt / m
        lhs, rhs = stepper(m)
        for _ in range(m):
            if rhs is None:
                b = u + tau * source(t + tau) if scattered else u
                u = lhs.solve(b, u)
            elif done < 2:  # Rannacher start: two implicit-Euler half steps
                for half in (0.5, 1.0):
                    b = u + 0.5 * tau * source(t + half * tau) if scattered else u
                    u = lhs.solve(b, u)
            else:
                b = rhs @ u
                if scattered:
                    b += 0.5 * tau * (source(t) + source(t + tau))
                u = lhs.solve(b, u)
            done += 1
            t += tau
        if (s + 1) % record_every == 0 or s + 1 == steps:
            record(u, (s + 1) * dt)
    times = np.array(times)
    times[-1] = T
    return ForwardSolution(grid, times, np.array(U), np.array(ghost), ghost_step)


def heat_kernel_r2(r2, t: float, n: int):
    """Heat kernel from squared distances; zero at ``t = 0`` away from the origin."""
    r2 = np.asarray(r2, dtype=float)
    if t <= 0:
        return np.zeros_like(r2)
    return np.exp(-r2 / (4 * t)) / (2 * np.sqrt(np.pi * t)) ** n


def _ghost_r2(grid: SpatialGrid, step: float):
    face = np.meshgrid(*[grid.axis(i) for i in range(1, grid.n)], indexing="ij")
    rest = sum(f**2 for f in face)
    return np.stack([(grid.domain.hi[0] + m * step) ** 2 + rest for m in (1, 2)])


def _sampling_plan(inner_axes, grid: SpatialGrid, step: float):
    """Window of the auxiliary mesh around Omega plus fractional sample indices."""
    n = grid.n
    window, lo_idx = [], []
    for i, x in enumerate(inner_axes):
        h = x[1] - x[0]
        lo = grid.domain.lo[i]
        hi = grid.domain.hi[i] + (2 * step if i == 0 else 0.0)
        a = max(int(np.floor((lo - x[0]) / h)) - 4, 0)
        b = min(int(np.ceil((hi - x[0]) / h)) + 5, len(x))
        window.append(slice(a, b))
        lo_idx.append((x[a], h))
    pts = np.stack([c.ravel() for c in grid.coords])
    wc = np.stack([(pts[i] - lo_idx[i][0]) / lo_idx[i][1] for i in range(n)])
    face = np.meshgrid(*[grid.axis(i) for i in range(1, n)], indexing="ij")
    gp = []
    for m in (1, 2):
        x1 = np.full(face[0].shape, grid.domain.hi[0] + m * step)
        gp.append(np.stack([x1.ravel()] + [f.ravel() for f in face]))
    gp = np.concatenate(gp, axis=1)
    gc = np.stack([(gp[i] - lo_idx[i][0]) / lo_idx[i][1] for i in range(n)])
    return tuple(window), wc, gc


def analytic_solution(grid: SpatialGrid, times, ghost_step: Optional[float] = None
                      ) -> ForwardSolution:
    """Zero-potential solution ``u0 = heat kernel`` sampled like ``solve_parabolic``."""
    step = ghost_step or grid.spacing[0]
    times = np.asarray(times, dtype=float)
    X = np.stack(grid.coords, axis=-1)
    U = np.stack([heat_kernel(X, t, grid.n) for t in times])
    face = np.stack(np.meshgrid(*[grid.axis(i) for i in range(1, grid.n)], indexing="ij"), -1)
    ghost = []
    for t in times:
        layers = []
        for m in (1, 2):
            x1 = np.full(face.shape[:-1] + (1,), grid.domain.hi[0] + m * step)
            layers.append(heat_kernel(np.concatenate([x1, face], -1), t, grid.n))
        ghost.append(layers)
    return ForwardSolution(grid, times, U, np.array(ghost), step)


def extract_boundary_data(sol: ForwardSolution, grid: Optional[SpatialGrid] = None,
                          g1_stencil: str = "outside") -> BoundaryDataset:
    """Traces ``g0`` on the boundary and ``g1 = du/dx1`` on Gamma0.

    ``g1`` uses the second-order one-sided difference: outward through the
    ghost planes (auxiliary mesh spacing) when they exist (``"outside"``),
    else inward with the grid spacing of Omega (``"inside"``).
    """
    grid = grid or sol.grid
    if not grid.same_as(sol.grid):
        raise ValueError("solution grid differs from the requested grid")
    U = sol.u
    g0 = U[:, grid.boundary_mask]
    bad = np.argwhere(~(g0 > 0))
    if bad.size:
        ti, m = bad[0]
        raise ValueError(
            f"non-positive g0={g0[ti, m]:.3e} at time {sol.times[ti]:.4g}: the log "
            "transform needs positive data"
        )
    dx = grid.spacing[0]
    if g1_stencil == "outside" and sol.ghost is not None:
        d = sol.ghost_step
        g1 = (-3 * U[:, -1] + 4 * sol.ghost[:, 0] - sol.ghost[:, 1]) / (2 * d)
    elif g1_stencil in ("outside", "inside"):
        g1 = (3 * U[:, -1] - 4 * U[:, -2] + U[:, -3]) / (2 * dx)
    else:
        raise ValueError("g1_stencil must be 'outside' or 'inside'")
    g1 = g1.reshape(len(sol.times), -1)
    return BoundaryDataset(grid, sol.times.copy(), g0, g1, {"kind": "clean"})


def laplace_bridge(F, tau, t: float, tail_tol: float = 1e-12) -> float:
    """``(2 sqrt(pi t^3))^-1 int_0^inf exp(-tau^2/(4t)) tau F(tau) dtau``.

    Composite Simpson on the supplied samples; the grid must start at 0 and
    reach far enough that the neglected Gaussian tail is below ``tail_tol``.
    """
    F = np.asarray(F, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if t <= 0:
        raise ValueError("t must be positive")
    if F.shape != tau.shape or tau.ndim != 1 or len(tau) < 3:
        raise ValueError("F and tau must be matching 1-D arrays with >= 3 samples")
    if abs(tau[0]) > 0:
        raise ValueError("tau grid must start at 0")
    tail = float(np.exp(-tau[-1] ** 2 / (4 * t)))
    if tail >= tail_tol:
        raise ValueError(
            f"tau grid ends at {tau[-1]:.4g}: tail bound exp(-tau_max^2/4t) = {tail:.3e} "
            f"exceeds {tail_tol:.0e}"
        )
    integrand = np.exp(-tau**2 / (4 * t)) * tau * F
    return float(integrate.simpson(integrand, x=tau) / (2 * np.sqrt(np.pi * t**3)))


def forward_error(sol: ForwardSolution, epsilon: float) -> float:
    """Relative discrete L2 error against the heat kernel over Omega x [eps, T]."""
    keep = sol.times >= epsilon - 1e-12
    ref = analytic_solution(sol.grid, sol.times[keep]).u
    diff = sol.u[keep] - ref
    return float(np.sqrt(np.sum(diff**2) / np.sum(ref**2)))


def calibrate_radius(grid: SpatialGrid, candidates, mesh: float, steps: int, T: float,
                     epsilon: float, tol: float = 0.01, mollifier=None,
                     shape: str = "box", **kw):
    """Smallest candidate radius whose zero-potential solve meets ``tol``.

    Returns ``(radius, errors)`` with the relative error of every radius tried.
    """
    cands = sorted(float(r) for r in candidates)
    if not cands:
        raise ValueError("no candidate radii given")
    mollifier = mollifier or SourceMollifier()
    errors = {}
    for r in cands:
        try:
            sol = solve_parabolic(AuxiliaryDomain(shape, (), r, mesh, steps), None,
                                  mollifier, T, steps, grid=grid, **kw)
            errors[r] = forward_error(sol, epsilon)
        except ValueError as exc:  # radius too small to contain Omega
            errors[r] = float("inf")
            errors[f"{r}:reason"] = str(exc)
            continue
        if errors[r] <= tol:
            return r, errors
    listing = ", ".join(f"r={r}: {e:.3g}" for r, e in errors.items() if not isinstance(r, str))
    raise ValueError(f"no candidate radius meets the {tol:.0%} tolerance ({listing})")
