import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexcip.carleman import (BackgroundTerms, CarlemanParams, analytic_stack,
                                carleman_weight, convexity_probe, free_mask, full_gradient,
                                functional, functional_parts, gradient, log_stencils,
                                residuals, sobolev_apply, sobolev_norm2)
from convexcip.geometry import Domain, build_grid, build_time_grid
from oracles import residuals_loop, sobolev_brute

NONE = CarlemanParams(reference="none")


def setup(N=8, k=5, n=2, eps=0.01, T=4.0):
    g = build_grid(Domain(n), N)
    return g, BackgroundTerms(g, eps), build_time_grid(eps, T, k)


def random_stack(rng, grid, k, scale=1.0):
    return scale * rng.standard_normal((k + 1,) + grid.N)


def constrained_bump(grid, V, idx, tau):
    """Perturb one free node and carry the derived Neumann layer along."""
    W = V.copy()
    W[idx] += tau
    i, x1 = idx[0], idx[1]
    lines = all(0 < j < m - 1 for j, m in zip(idx[2:], grid.N[1:]))
    if x1 == grid.N[0] - 3 and lines:
        W[(i, x1 + 1) + tuple(idx[2:])] += 0.25 * tau
    return W


def test_weight_examples():
    assert carleman_weight(1.0, 3) == pytest.approx(403.4287934927351, rel=1e-14)
    assert carleman_weight(0.0, 7.5) == 1.0
    assert carleman_weight(2.0, 3) / carleman_weight(1.0, 3) == pytest.approx(np.exp(18), rel=1e-12)


@given(st.floats(0, 10), st.floats(0, 3), st.floats(0, 3))
def test_weight_positive_monotone(lam, a, b):
    lo, hi = sorted((a, b))
    assert 0 < carleman_weight(lo, lam) <= carleman_weight(hi, lam)


def test_background_gradient_matches_differences():
    g, bg, _ = setup(N=41)
    dx = g.spacing[0]
    w = bg.w_eps
    fd = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2 * dx)
    assert np.allclose(fd, bg.grad_w_eps[0][1:-1, 1:-1], rtol=1e-12, atol=1e-9)
    fd2 = (w[1:-1, 2:] - w[1:-1, :-2]) / (2 * dx)
    assert np.allclose(fd2, bg.grad_w_eps[1][1:-1, 1:-1], rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("n", [2, 3])
def test_residuals_match_loop_oracle(n):
    rng = np.random.default_rng(1)
    g, bg, tg = setup(N=6, n=n, eps=0.05, T=1.0)
    V = random_stack(rng, g, tg.k)
    want = residuals_loop(V, [g.axis(a) for a in range(n)], 0.05, tg.h)
    assert np.allclose(residuals(V, bg, tg), want, rtol=1e-12, atol=1e-9)


def test_zero_stack_zero_residuals_and_functional():
    g, bg, tg = setup()
    Z = np.zeros((tg.k + 1,) + g.N)
    assert not residuals(Z, bg, tg).any()
    assert functional(Z, bg, tg, NONE) == 0.0
    J, grad = full_gradient(Z, bg, tg, NONE)
    assert J == 0.0 and not grad.any()


def test_k_too_small():
    g = build_grid(Domain(2), 8)
    with pytest.raises(ValueError):
        log_stencils(np.zeros((4, 8, 8)), 0.1)


def test_bump_dependency_audit():
    rng = np.random.default_rng(2)
    g, bg, tg = setup(k=6)
    V = random_stack(rng, g, tg.k)
    base = residuals(V, bg, tg)
    W = V.copy()
    W[3, 4, 4] += 1.0
    changed = np.abs(residuals(W, bg, tg) - base).reshape(tg.k + 1, -1).max(axis=1) > 0
    assert changed.tolist() == [False, False, True, True, True, True, True]


def test_residual_locality_star_stencil():
    rng = np.random.default_rng(3)
    g, bg, tg = setup(N=9)
    V = random_stack(rng, g, tg.k)
    base = residuals(V, bg, tg)
    W = V.copy()
    W[:, 4, 4] += 1.0
    diff = np.abs(residuals(W, bg, tg) - base).max(axis=0) > 0
    touched = {tuple(i + 1 for i in p) for p in np.argwhere(diff)}
    assert touched <= {(4, 4), (3, 4), (5, 4), (4, 3), (4, 5)}


def test_overflow_guard():
    g, bg, tg = setup()
    with pytest.raises(OverflowError, match="rescale"):
        functional(np.zeros((tg.k + 1,) + g.N), bg, tg, CarlemanParams(lam=100))


def test_alpha_linearity():
    rng = np.random.default_rng(4)
    g, bg, tg = setup()
    V = random_stack(rng, g, tg.k)
    p1 = CarlemanParams(alpha=1e-4, reference="none")
    p2 = CarlemanParams(alpha=3e-2, reference="none")
    norm = functional_parts(V, bg, tg, p1)[1]
    diff = functional(V, bg, tg, p2) - functional(V, bg, tg, p1)
    assert diff == pytest.approx((3e-2 - 1e-4) * norm, rel=1e-9)


def test_sobolev_norm_oracles():
    rng = np.random.default_rng(5)
    g = build_grid(Domain(2), 7)
    U = rng.standard_normal((3,) + g.N)
    for order in (2, 3):
        assert sobolev_norm2(U, g, order) == pytest.approx(sobolev_brute(U, g.spacing, order), rel=1e-13)
    # linear field in x1: zeroth order plus the x1 slope only
    L = np.broadcast_to(g.coords[0], (1,) + g.N)
    want = (np.sum(g.coords[0] ** 2) + (g.N[0] - 1) * g.N[1]) * g.cellvol
    assert sobolev_norm2(L, g, 3) == pytest.approx(want, rel=1e-12)


def test_alpha_term_gradient_is_stencil():
    rng = np.random.default_rng(6)
    g, bg, tg = setup()
    V = random_stack(rng, g, tg.k)
    p = CarlemanParams(lam=0.0, alpha=0.25, reference="none")
    # isolate the penalty by subtracting the alpha = 0 gradient
    _, g_full = full_gradient(V, bg, tg, p)
    _, g_res = full_gradient(V, bg, tg, CarlemanParams(lam=0.0, alpha=0.0, reference="none"))
    S = sobolev_apply(V, g, 3)
    assert np.allclose(g_full - g_res, 2 * 0.25 * S, rtol=1e-10, atol=1e-12)
    # quadratic form identity <V, S V> = ||V||^2
    assert float(np.sum(V * S)) == pytest.approx(sobolev_norm2(V, g, 3), rel=1e-10)


def _fd_check(rng, g, bg, tg, params, V, coords=50, tau=1e-5):
    grad = gradient(V, bg, tg, params)
    free = np.argwhere(np.broadcast_to(free_mask(g), V.shape))
    picks = free[rng.choice(len(free), size=coords, replace=False)]
    scale = np.abs(grad).max()
    worst = 0.0
    for p in picks:
        idx = tuple(p)
        jp = functional(constrained_bump(g, V, idx, tau), bg, tg, params)
        jm = functional(constrained_bump(g, V, idx, -tau), bg, tg, params)
        fd = (jp - jm) / (2 * tau)
        worst = max(worst, abs(fd - grad[idx]) / max(abs(grad[idx]), 1e-3 * scale))
    return worst


@pytest.mark.parametrize("reference", ["none", "background"])
def test_gradient_matches_finite_differences(reference):
    rng = np.random.default_rng(7)
    g, bg, tg = setup()
    params = CarlemanParams(reference=reference)
    assert _fd_check(rng, g, bg, tg, params, random_stack(rng, g, tg.k)) <= 1e-5
    # near the physical stack J ~ 1e8, so a 1e-5 step drowns in round-off
    V = analytic_stack(g, tg) + random_stack(rng, g, tg.k, 0.5)
    assert _fd_check(rng, g, bg, tg, params, V, tau=1e-3) <= 1e-5


def test_gradient_3d():
    rng = np.random.default_rng(8)
    g, bg, tg = setup(N=6, n=3)
    V = random_stack(rng, g, tg.k)
    assert _fd_check(rng, g, bg, tg, CarlemanParams(reference="none"), V, coords=30) <= 1e-5


def test_gradient_zero_on_fixed_nodes():
    rng = np.random.default_rng(9)
    g, bg, tg = setup()
    gr = gradient(random_stack(rng, g, tg.k), bg, tg, NONE)
    assert not gr[:, ~free_mask(g)].any()


def test_directional_derivatives():
    rng = np.random.default_rng(10)
    g, bg, tg = setup()
    V = random_stack(rng, g, tg.k)
    _, G = full_gradient(V, bg, tg, NONE)
    tau = 1e-5
    for _ in range(20):
        P = rng.standard_normal(V.shape)
        fd = (functional(V + tau * P, bg, tg, NONE) - functional(V - tau * P, bg, tg, NONE)) / (2 * tau)
        assert fd == pytest.approx(float(np.sum(G * P)), rel=1e-5)


def test_quadratic_homogeneity_small_amplitude():
    rng = np.random.default_rng(11)
    g, bg, tg = setup()
    V = random_stack(rng, g, tg.k)
    p = CarlemanParams(alpha=0.0, reference="none")
    r = [functional(t * V, bg, tg, p) / t**2 for t in (1e-4, 2e-4)]
    assert r[1] == pytest.approx(r[0], rel=1e-3)


def test_convexity_probe_identities():
    rng = np.random.default_rng(12)
    g, bg, tg = setup()
    V1 = random_stack(rng, g, tg.k)
    assert convexity_probe(V1, V1, bg, tg, NONE) == pytest.approx(0.0, abs=1e-12)
    D = np.where(free_mask(g), rng.standard_normal(V1.shape), 0.0)
    D[:, -2, 1:-1] = 0.25 * D[:, -3, 1:-1]
    V2 = V1 + 1e-2 * D
    g12 = convexity_probe(V1, V2, bg, tg, NONE)
    g21 = convexity_probe(V2, V1, bg, tg, NONE)
    G1 = gradient(V1, bg, tg, NONE)
    G2 = gradient(V2, bg, tg, NONE)
    assert g12 + g21 == pytest.approx(float(np.sum((G2 - G1) * (V2 - V1))), rel=1e-8)
    bad = V2.copy()
    bad[0, 0, 0] += 1
    with pytest.raises(ValueError, match="Dirichlet"):
        convexity_probe(V1, bad, bg, tg, NONE)
    bad = V2.copy()
    bad[0, -2, 3] += 1
    with pytest.raises(ValueError, match="Neumann"):
        convexity_probe(V1, bad, bg, tg, NONE)


def test_params_validation():
    with pytest.raises(ValueError):
        CarlemanParams(alpha=1.5)
    with pytest.raises(ValueError):
        CarlemanParams(reg_order=4)
    with pytest.raises(ValueError):
        CarlemanParams(reference="other")
