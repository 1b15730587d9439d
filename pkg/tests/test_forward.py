import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexcip.forward import (AuxiliaryDomain, ForwardSolution, SolverError, SourceMollifier,
                               analytic_solution, calibrate_radius, extract_boundary_data,
                               forward_error, heat_kernel, laplace_bridge, solve_parabolic)
from convexcip.geometry import Domain, build_grid
from convexcip.phantom import letter_phantom
from oracles import box_heat_solution

G11 = build_grid(Domain(2), 11)


def coarse(radius=3.0, mesh=0.1, steps=100, T=1.0, grid=G11, **kw):
    aux = AuxiliaryDomain("box", (), radius, mesh, steps)
    return solve_parabolic(aux, None, SourceMollifier(), T, steps, grid=grid, **kw)


def test_heat_kernel_examples():
    assert heat_kernel((0, 0), 0.25, 2) == pytest.approx(1 / np.pi, rel=1e-14)
    assert heat_kernel((0, 0, 0), 0.25, 3) == pytest.approx(np.pi**-1.5, rel=1e-14)
    t = 0.3
    x = (np.sqrt(4 * t), 0.0)
    assert heat_kernel(x, t, 2) == pytest.approx(np.exp(-1) / (4 * np.pi * t), rel=1e-14)
    with pytest.raises(ValueError):
        heat_kernel((1, 1), 0.0, 2)


@given(st.floats(0.01, 5), st.floats(-3, 3), st.floats(-3, 3))
def test_heat_kernel_matches_gaussian_product(t, a, b):
    one = lambda y: np.exp(-y * y / (4 * t)) / np.sqrt(4 * np.pi * t)
    assert heat_kernel((a, b), t, 2) == pytest.approx(one(a) * one(b), rel=1e-12)


@pytest.mark.parametrize("n,mesh", [(2, 1 / 60), (3, 0.01)])
def test_mollifier_mesh_normalisation(n, mesh):
    m = SourceMollifier(0.05)
    ax = mesh * np.arange(-8, 9)
    r2 = sum(X**2 for X in np.meshgrid(*[ax] * n, indexing="ij"))
    assert m.on_mesh(r2, mesh**n).sum() * mesh**n == pytest.approx(1.0, abs=1e-6)


def test_mollifier_continuum_constant():
    from scipy import integrate
    m = SourceMollifier(0.05)
    val, _ = integrate.quad(lambda r: 2 * np.pi * r * m.shape(r * r), 0, 0.05,
                            epsabs=0.0, epsrel=1e-12)
    assert m.C_xi(2) * val == pytest.approx(1.0, rel=1e-9)


def test_mollifier_missing_support():
    with pytest.raises(ValueError, match="mollifier support"):
        SourceMollifier(0.01).on_mesh(np.array([1.0, 2.0]), 0.1)


def test_zero_potential_symmetry_and_positivity():
    sol = coarse()
    i12, i15 = 2, 5
    assert np.max(np.abs(sol.u[:, i15, i12] - sol.u[:, i12, i15])) <= 1e-10 * sol.u.max()
    assert np.all(sol.u[sol.times >= 0.01] > 0)


def test_mass_decreases():
    aux = AuxiliaryDomain("box", (0.0, 0.0), 2.0, 0.05, 40)
    # a large Omega sampled on the whole auxiliary box interior
    g = build_grid(Domain(2, (-1.9, -1.9), (1.7, 1.9)), 73)
    sol = solve_parabolic(aux, None, SourceMollifier(), 2.0, 40, grid=g)
    mass = sol.u.sum(axis=(1, 2)) * g.cellvol
    assert mass[0] <= 1 + 1e-6
    assert np.all(np.diff(mass) < 0)


def test_matches_box_image_oracle_second_order():
    errs = []
    for mesh, steps in ((0.1, 50), (0.05, 100)):
        sol = coarse(radius=2.0, mesh=mesh, steps=steps, T=0.5)
        X = np.stack(G11.coords, -1)
        keep = sol.times >= 0.1
        ref = np.stack([box_heat_solution(X, t, (1.5, 1.5), 2.0) for t in sol.times[keep]])
        errs.append(np.sqrt(np.sum((sol.u[keep] - ref) ** 2) / np.sum(ref**2)))
    assert errs[0] < 0.05
    assert errs[0] / errs[1] >= 3.0


def test_implicit_euler_option_and_cg_agree():
    cn = coarse(steps=50, T=0.5)
    ie = coarse(steps=50, T=0.5, method="ie")
    cg = coarse(steps=50, T=0.5, solver="cg")
    X = np.stack(G11.coords, -1)
    ref = box_heat_solution(X, 0.5, (1.5, 1.5), 3.0)
    assert np.allclose(cg.u[-1], cn.u[-1], rtol=1e-7)
    # first order scheme is the less accurate one
    assert np.abs(ie.u[-1] - ref).max() > np.abs(cn.u[-1] - ref).max()


def test_solver_error_carries_iterations():
    with pytest.raises(SolverError) as info:
        coarse(steps=10, T=0.1, solver="cg", maxiter=1)
    assert info.value.iterations == 1
    assert info.value.residual > 0


def test_phantom_raises_solution():
    g = build_grid(Domain(2), 21)
    aux = AuxiliaryDomain("box", (), 3.0, 0.1, 50)
    free = solve_parabolic(aux, None, SourceMollifier(), 1.0, 50, grid=g)
    ph = solve_parabolic(aux, letter_phantom(g, "B", 2.0), SourceMollifier(), 1.0, 50)
    assert np.all(ph.u[-1] >= free.u[-1])
    assert np.any(ph.u[-1] > free.u[-1] * 1.01)


def test_extract_from_analytic_field():
    sol = analytic_solution(G11, [0.5, 1.0, 2.0])
    ds = extract_boundary_data(sol)
    X = np.stack(G11.coords, -1)[G11.boundary_mask]
    assert np.allclose(ds.g0, np.stack([heat_kernel(X, t, 2) for t in sol.times]), rtol=1e-14)
    assert np.all(ds.g1 < 0)
    # exact derivative of the kernel at x1 = 2: -x1/(2t) * u
    face = np.stack(G11.coords, -1)[-1]
    exact = np.stack([-heat_kernel(face, t, 2) for t in sol.times])  # x1/(2t) = 1/t
    exact = exact / np.array(sol.times)[:, None]
    assert np.allclose(ds.g1, exact, rtol=0.05)


def test_extract_constant_field_and_negative():
    u = np.ones((3,) + G11.N)
    sol = ForwardSolution(G11, np.array([1.0, 2.0, 3.0]), u, np.ones((3, 2, 11)), 0.1)
    ds = extract_boundary_data(sol)
    assert np.all(ds.g1 == 0)
    inside = extract_boundary_data(sol, g1_stencil="inside")
    assert np.all(inside.g1 == 0)
    u[1, 0, 3] = -1.0
    with pytest.raises(ValueError, match="non-positive"):
        extract_boundary_data(sol)


def test_forward_against_heat_kernel_default_radius():
    # radius 6 removes the truncation error; coarse mesh keeps it fast
    sol = coarse(radius=6.0, mesh=0.05, steps=200, T=1.0)
    assert forward_error(sol, 0.1) < 0.01
    i = 5
    assert sol.u[-1, i, i] == pytest.approx(heat_kernel((1.5, 1.5), 1.0, 2), rel=0.01)


def test_laplace_bridge_examples():
    tau = np.linspace(0, 20, 4001)
    assert laplace_bridge(np.ones_like(tau), tau, 1.0) == pytest.approx(1 / np.sqrt(np.pi), rel=1e-10)
    assert laplace_bridge(np.zeros_like(tau), tau, 1.0) == 0.0
    fine = np.linspace(0, 20, 400001)
    f = np.exp(-fine**2 / 4) * fine**2 / (2 * np.sqrt(np.pi))
    brute = np.trapezoid(f, fine)
    assert laplace_bridge(tau, tau, 1.0) == pytest.approx(brute, abs=1e-8)
    with pytest.raises(ValueError, match="tail bound"):
        laplace_bridge(np.ones(11), np.linspace(0, 5, 11), 1.0)


def test_calibrate_radius():
    with pytest.raises(ValueError, match="no candidate"):
        calibrate_radius(G11, [], 0.1, 50, 1.0, 0.1)
    r, errors = calibrate_radius(G11, [2, 4, 6], 0.05, 200, 1.0, 0.1)
    assert r <= 6 and errors[r] <= 0.01
    assert all(errors[c] > 0.01 for c in errors if isinstance(c, float) and c < r)
    # a coarse mesh on a huge box misses the tolerance for every radius
    with pytest.raises(ValueError, match=r"r=8\.0"):
        calibrate_radius(G11, [8], 0.25, 20, 1.0, 0.1)


def test_scattered_zero_potential_is_the_kernel():
    sol = coarse(formulation="scattered", steps=20)
    assert sol.ghost_step == pytest.approx(0.1 / 16)
    ref = analytic_solution(G11, sol.times, ghost_step=sol.ghost_step)
    assert np.array_equal(sol.u, ref.u) and np.array_equal(sol.ghost, ref.ghost)


def test_scattered_matches_total_with_phantom():
    ph = letter_phantom(G11, "L", 2.0)
    aux = lambda r, m: AuxiliaryDomain("box", (), r, m, 200)
    tot = solve_parabolic(aux(6.0, 1 / 40), ph, SourceMollifier(), 1.0, 200)
    sc = solve_parabolic(aux(2.5, 1 / 40), ph, SourceMollifier(), 1.0, 200,
                         formulation="scattered")
    late = sc.times >= 0.5
    assert np.all(sc.u > 0)
    assert np.abs(np.log(sc.u[late] / tot.u[late])).max() < 0.01
    with pytest.raises(ValueError, match="formulation"):
        coarse(formulation="mixed")


def test_graded_substeps_reduce_early_error():
    def err(sub):
        sol = coarse(radius=6.0, mesh=0.05, steps=100, T=1.0, fine_until=0.3, substeps=sub)
        ref = analytic_solution(G11, sol.times)
        early = (sol.times >= 0.2) & (sol.times <= 0.3)
        return np.abs(np.log(sol.u[early] / ref.u[early])).max()

    assert err(4) < 0.5 * err(1)
    with pytest.raises(ValueError, match="substeps"):
        coarse(substeps=0)
