import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from willmore_flow.curvature import curvature_bundle, discrete_height
from willmore_flow.energy import energy_report, gauss_bonnet_defect, surface_area, willmore_energy
from willmore_flow.grid import build_grids
from willmore_flow.surfaces import make_torus

from conftest import sphere_atlas, torus_atlas
from oracles import torus_willmore


def _bundle(at, rho):
    return curvature_bundle(discrete_height(at, rho), at.geometry)


def test_unit_sphere_energy():
    at = sphere_atlas(96)
    assert willmore_energy(_bundle(at, 0.0), at) == pytest.approx(4 * np.pi, rel=1e-5)


@settings(max_examples=5, deadline=None)
@given(st.floats(-0.4, 0.4))
def test_sphere_energy_scale_invariant(c):
    # concentric sphere of radius 1 - c: H^2 * area = 4 pi
    at = sphere_atlas(48)
    b = _bundle(at, c)
    assert willmore_energy(b, at) == pytest.approx(4 * np.pi, rel=1e-4)
    assert surface_area(b, at) == pytest.approx(4 * np.pi * (1 - c) ** 2, rel=1e-4)


@pytest.mark.parametrize("R", [1.5, np.sqrt(2.0), 2.0, 3.0])
def test_torus_energy_matches_closed_form(R):
    at = build_grids(make_torus(R, 1.0), 64)
    assert willmore_energy(_bundle(at, 0.0), at) == pytest.approx(torus_willmore(R, 1.0), rel=1e-9)


def test_torus_area():
    at = torus_atlas(32)
    assert surface_area(_bundle(at, 0.0), at) == pytest.approx(8 * np.pi**2, rel=1e-12)


def test_gauss_bonnet_defect_converges():
    errs = []
    for n in (32, 64):
        at = torus_atlas(n)
        V = at.all_owned_coords()[:, 1]
        errs.append(abs(gauss_bonnet_defect(_bundle(at, 0.1 * np.cos(V)), at, 0)))
    assert errs[1] < errs[0] / 2**3.5
    at = sphere_atlas(64)
    z = at.geometry.position[:, 2]
    assert abs(gauss_bonnet_defect(_bundle(at, 0.05 * z * z), at, 2)) < 1e-4


def test_energy_above_sphere_bound():
    at = sphere_atlas(48)
    X = at.geometry.position
    assert willmore_energy(_bundle(at, 0.05 * X[:, 0] * X[:, 1]), at) > 4 * np.pi


def test_report_fields():
    at = torus_atlas(32)
    rep = energy_report(_bundle(at, 0.02), at, 1.5, 0.25)
    d = rep.as_dict()
    assert set(d) == {"t", "W", "area", "gb_defect", "rho_sup", "el_residual_sup"}
    assert d["t"] == 1.5 and d["rho_sup"] == pytest.approx(0.02) and d["el_residual_sup"] == 0.25
