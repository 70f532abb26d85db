import numpy as np
import pytest

from willmore_flow.curvature import discrete_height
from willmore_flow.errors import DegenerateMetricError
from willmore_flow.grid import build_grids, integrate
from willmore_flow.operators import build_split, euler_lagrange_residual, laplace_beltrami, normal_velocity
from willmore_flow.surfaces import make_torus

from conftest import sphere_atlas, torus_atlas


def random_smooth_height(at, rng, amplitude=0.2):
    """Random low-degree polynomial in ambient coordinates, scaled to sup ``amplitude``."""
    X = at.geometry.position / np.max(np.abs(at.geometry.position))
    f = rng.normal()
    for i in range(3):
        f = f + rng.normal() * X[:, i]
        for j in range(i, 3):
            f = f + rng.normal() * X[:, i] * X[:, j]
    return amplitude * f / np.max(np.abs(f))


def splitting_defect(at, rho):
    s = build_split(at, rho)
    G = s.G_direct
    return np.max(np.abs(s.P_rho - s.F - G)) / (1 + np.max(np.abs(G))), at.blended_sup(s.P_rho - s.F - G)


def test_splitting_identity_on_torus_example():
    at = torus_atlas(32)
    V = at.all_owned_coords()[:, 1]
    raw, _ = splitting_defect(at, 0.1 + 0.05 * np.cos(V))
    assert raw <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_splitting_identity_random(seed):
    rng = np.random.default_rng(seed)
    at = torus_atlas(32)
    raw, _ = splitting_defect(at, random_smooth_height(at, rng, 0.3))
    assert raw <= 1e-9
    at = sphere_atlas(32)
    _, blended = splitting_defect(at, random_smooth_height(at, rng, 0.3))
    assert blended <= 1e-9


def test_forcing_reads_at_most_second_derivatives():
    at = torus_atlas(32)
    h = discrete_height(at, random_smooth_height(at, np.random.default_rng(1)))
    build_split(at, None, height=h)
    assert h.max_order_requested <= 2


def test_equilibrium_characterization_proportional():
    at = sphere_atlas(32)
    s = build_split(at, random_smooth_height(at, np.random.default_rng(2), 0.1))
    res, _ = euler_lagrange_residual(s.bundle, s.lap, at)
    assert np.allclose(s.bundle.beta * s.G_direct, res, rtol=1e-10, atol=1e-10 * np.max(np.abs(res)))


def test_symbol_positive_on_admissible_fields():
    rng = np.random.default_rng(4)
    for at in (torus_atlas(32), sphere_atlas(32)):
        for _ in range(3):
            assert build_split(at, random_smooth_height(at, rng, 0.4)).symbol_c > 0


def test_linearization_richardson_consistent():
    at = torus_atlas(32)
    rng = np.random.default_rng(5)
    rho = random_smooth_height(at, rng, 0.1)
    w = random_smooth_height(at, rng, 1.0)
    G0 = build_split(at, rho).G_direct
    d = [(build_split(at, rho + e * w).G_direct - G0) / e for e in (1e-4, 1e-5)]
    assert np.linalg.norm(d[0]) / np.linalg.norm(d[1]) == pytest.approx(1.0, abs=0.05)


def test_linearization_at_unit_sphere():
    # P(0) = Lap^2 / 2 + Lap, the linearized flow damps Y_2 at rate 12
    at = sphere_atlas(64)
    Y = 0.5 * (3 * at.geometry.position[:, 2] ** 2 - 1)
    s = build_split(at, np.zeros(at.n_owned))
    norm = integrate(at, Y * Y)
    assert integrate(at, (s.P @ Y) * Y) / norm == pytest.approx(18.0, rel=1e-3)
    e = 1e-6
    assert integrate(at, build_split(at, e * Y).G_direct * Y) / (e * norm) == pytest.approx(12.0, rel=1e-3)


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_spheres_are_willmore(radius):
    at = sphere_atlas(48, radius)
    s = build_split(at, np.zeros(at.n_owned))
    assert euler_lagrange_residual(s.bundle, s.lap, at)[1] <= 1e-9


def test_torus_is_not_willmore():
    at = torus_atlas(48)
    s = build_split(at, np.zeros(at.n_owned))
    assert euler_lagrange_residual(s.bundle, s.lap, at)[1] > 0.1


def test_clifford_ratio_torus_residual_decreases():
    res = []
    for n in (32, 64):
        at = build_grids(make_torus(np.sqrt(2.0), 1.0), n)
        s = build_split(at, np.zeros(at.n_owned))
        res.append(euler_lagrange_residual(s.bundle, s.lap, at)[1])
    assert res[1] < res[0] / 8


def test_laplacian_pointwise_matches_grid():
    at = torus_atlas(64)
    U, V = at.all_owned_coords().T
    s = build_split(at, 0.05 * np.cos(V))
    f = np.sin(U) * np.cos(V)
    derivs = {(2, 0): -f, (1, 1): -np.cos(U) * np.sin(V), (0, 2): -f,
              (1, 0): np.cos(U) * np.cos(V), (0, 1): -np.sin(U) * np.sin(V)}
    exact = laplace_beltrami(s.bundle, f_derivs=derivs)
    assert np.max(np.abs(exact - laplace_beltrami(s.bundle, f, atlas=at))) < 1e-4


def test_normal_velocity_scales_by_beta():
    at = torus_atlas(32)
    V = at.all_owned_coords()[:, 1]
    s = build_split(at, 0.1 * np.sin(V))
    assert np.allclose(normal_velocity(s.bundle, np.ones(at.n_owned)), s.bundle.beta)
    assert np.all(s.bundle.beta <= 1.0)


def test_degenerate_beta_rejected(monkeypatch):
    import willmore_flow.operators as ops
    monkeypatch.setattr(ops, "BETA_FLOOR", 2.0)
    at = torus_atlas(32)
    with pytest.raises(DegenerateMetricError):
        build_split(at, np.zeros(at.n_owned))
