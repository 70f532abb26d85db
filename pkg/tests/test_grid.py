import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from willmore_flow.errors import AssemblyError, InvalidParameterError, StaleDataError, UnsupportedOrderError
from willmore_flow.grid import (
    HALO,
    apply_stencils,
    assemble_operator,
    blend_at,
    build_grids,
    central_stencil,
    derivative_matrix,
    differentiate,
    exchange_and_blend,
    integrate,
    lagrange_weights,
)
from willmore_flow.surfaces import make_sphere

from conftest import sphere_atlas, torus_atlas


@pytest.mark.parametrize("order", range(5))
def test_central_stencils_exact_on_polynomials(order):
    off, w = central_stencil(order)
    x = off.astype(float)
    for p in range(order + 4):  # fourth-order accurate: exact below degree order + 4
        # d^order/dx^order of x^p at 0
        exact = float(np.prod(range(1, p + 1))) if p == order else 0.0
        assert np.dot(w, x**p) == pytest.approx(exact, abs=1e-10)


def test_unsupported_stencil_order():
    with pytest.raises(UnsupportedOrderError):
        central_stencil(5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0))
def test_lagrange_weights_reproduce_quintics(t):
    off = np.arange(-2, 4)
    w = lagrange_weights(np.array(t), off)
    for p in range(6):
        assert np.dot(w, off.astype(float) ** p) == pytest.approx(t**p, abs=1e-12)


def test_minimum_resolution():
    with pytest.raises(InvalidParameterError):
        build_grids(make_sphere(1.0), 8)


def test_torus_derivatives_fourth_order():
    errs = []
    for n in (32, 64):
        at = torus_atlas(n)
        f = at.sample(lambda c, U, V, p: np.sin(U) * np.cos(2 * V))
        U, V = at.all_owned_coords().T
        d = differentiate(at, f, (1, 2)).owned
        errs.append(np.max(np.abs(d - (-4 * np.cos(U) * np.cos(2 * V)))))
    assert errs[1] < errs[0] / 2**3.5


def test_sphere_derivatives_converge_across_charts():
    errs = []
    for n in (32, 64):
        at = sphere_atlas(n)
        f = at.sample_global(lambda p: p[..., 0] * p[..., 2] + p[..., 1] ** 2)
        # d/du of f(X(u, v)) via the chart map
        parts = []
        for c, ch in enumerate(at.surface.charts):
            U, V = at.owned_coords(c)
            d = ch.derivatives(U, V)
            X, Xu = d[(0, 0)], d[(1, 0)]
            parts.append((Xu[..., 0] * X[..., 2] + X[..., 0] * Xu[..., 2] + 2 * X[..., 1] * Xu[..., 1]).ravel())
        exact = np.concatenate(parts)
        err = np.abs(differentiate(at, f, (1, 0)).owned - exact)
        errs.append(at.blended_sup(err))
    assert errs[1] < errs[0] / 2**3.5


def test_exchange_is_idempotent():
    at = sphere_atlas(32)
    f = at.sample_global(lambda p: np.sin(p[..., 0]) + p[..., 2] ** 3)
    once = exchange_and_blend(at, f)
    twice = exchange_and_blend(at, once)
    assert np.array_equal(once.values, twice.values)
    assert np.array_equal(once.owned, f.owned)


def test_halo_values_match_exact_function():
    at = sphere_atlas(48)
    f = at.sample_global(lambda p: p[..., 0] * p[..., 2] + p[..., 1] ** 2)
    worst = 0.0
    for c, ch in enumerate(at.surface.charts):
        U, V = np.meshgrid(at.axes[c, 0], at.axes[c, 1], indexing="ij")
        p = ch.position(U, V)
        exact = p[..., 0] * p[..., 2] + p[..., 1] ** 2
        worst = max(worst, np.max(np.abs(f.values[c] - exact)))
    assert worst < 1e-5


def test_stale_halo_rejected():
    at = torus_atlas(32)
    f = at.sample(lambda c, U, V, p: np.cos(U))
    d = differentiate(at, f, (1, 0))
    assert not d.halo_current
    with pytest.raises(StaleDataError):
        differentiate(at, d, (1, 0))
    with pytest.raises(StaleDataError):
        blend_at(at, d, np.array([[3.0, 0.0, 0.0]]))


def test_non_finite_donor_rejected():
    at = torus_atlas(32)
    vals = np.zeros(at.n_owned)
    vals[5] = np.nan
    with pytest.raises(StaleDataError):
        exchange_and_blend(at, at.field(vals, exchange=False))


def test_derivative_order_limit():
    at = torus_atlas(32)
    f = at.sample(lambda c, U, V, p: np.cos(U))
    with pytest.raises(UnsupportedOrderError):
        differentiate(at, f, (3, 2))


@pytest.mark.parametrize("n", [32, 96])
def test_sphere_area(n):
    at = sphere_atlas(n)
    err = abs(integrate(at, 1.0) - 4 * np.pi) / (4 * np.pi)
    assert err < (1e-3 if n == 32 else 1e-7)


def test_torus_area_spectral():
    at = torus_atlas(32)
    assert integrate(at, 1.0) == pytest.approx(4 * np.pi**2 * 2.0, rel=1e-12)


def test_integrate_zonal_harmonic_vanishes():
    at = sphere_atlas(96)
    z = at.geometry.position[:, 2]
    assert abs(integrate(at, 0.5 * (3 * z**2 - 1))) < 1e-6


def test_assembled_operator_matches_stencils(rng):
    at = torus_atlas(32)
    U, V = at.all_owned_coords().T
    coeffs = {(2, 0): 1.0 + 0.1 * np.cos(V), (1, 1): 0.3 * np.sin(U), (0, 2): np.cos(V) ** 2, (0, 1): 0.2,
              (0, 0): np.sin(U + V)}
    x = rng.normal(size=at.n_owned)
    M = assemble_operator(at, coeffs)
    assert np.allclose(M @ x, apply_stencils(at, coeffs, x), atol=1e-10)


def test_derivative_matrix_is_cached_and_consistent():
    at = sphere_atlas(32)
    f = at.sample_global(lambda p: p[..., 0] ** 2)
    D = derivative_matrix(at, (0, 2))
    assert derivative_matrix(at, (0, 2)) is D
    assert np.allclose(D @ f.owned, differentiate(at, f, (0, 2)).owned, atol=1e-10)


def test_assembly_rejects_non_finite_coefficients():
    at = torus_atlas(32)
    c = np.ones(at.n_owned)
    c[7] = np.inf
    with pytest.raises(AssemblyError, match="chart 0"):
        assemble_operator(at, {(2, 0): c})


def test_blend_reproduces_smooth_function():
    at = sphere_atlas(48)
    f = at.sample_global(lambda p: p[..., 0] - 2 * p[..., 1] * p[..., 2])
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    vals = blend_at(at, f, pts)
    assert np.allclose(vals, pts[:, 0] - 2 * pts[:, 1] * pts[:, 2], atol=1e-5)


def test_padded_shape():
    at = torus_atlas(32)
    f = at.sample(lambda c, U, V, p: U)
    assert f.values.shape == (1, 32 + 2 * HALO, 32 + 2 * HALO)
