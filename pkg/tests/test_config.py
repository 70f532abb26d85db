import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from willmore_flow.config import RunConfig, config_from_dict, initial_height, parse_config
from willmore_flow.errors import ConfigError

from conftest import sphere_atlas, torus_atlas

TORUS = {"type": "torus", "R": 2.0, "r": 1.0}


def test_defaults_filled_in():
    cfg = config_from_dict({"surface": {"type": "sphere"}})
    assert cfg.grid.resolution == 64
    assert cfg.flow.dt0 == 1e-4 and cfg.flow.adaptive
    assert cfg.initial.amplitude == 0.0
    assert cfg.probe is None


def test_echo_round_trip():
    data = {"surface": TORUS, "grid": {"resolution": 32},
            "initial": {"type": "harmonic", "amplitude": 0.1, "l": 1, "m": 2},
            "probe": {"fixture": "kink", "degree": 5}}
    cfg = config_from_dict(data)
    assert config_from_dict(cfg.echo()) == cfg
    json.dumps(cfg.echo())


@pytest.mark.parametrize("data,where", [
    ({"surface": {"type": "cube"}}, "surface"),
    ({"surface": {"type": "torus", "R": 1.0, "r": 2.0}}, "R > r"),
    ({"surface": {"type": "sphere", "radius": -1}}, "surface.sphere.radius"),
    ({"surface": {"type": "sphere"}, "grid": {"resolution": 8}}, "grid.resolution"),
    ({"surface": {"type": "sphere"}, "flow": {"dt0": 0}}, "flow.dt0"),
    ({"surface": {"type": "sphere"}, "flow": {"speed": 1}}, "flow.speed"),
    ({"surface": TORUS, "initial": {"type": "constant", "amplitude": 0.9}}, "initial.amplitude"),
    ({"surface": {"type": "sphere"}, "initial": {"type": "harmonic", "amplitude": 0.1, "l": 1, "m": 2}},
     "initial.m"),
    ({"surface": {"type": "sphere"}, "initial": {"type": "expression-table", "expression": "a*x"}}, "undefined"),
    ({"surface": {"type": "sphere"}, "initial": {"type": "expression-table", "expression": "x +* ("}}, "parse"),
    ({"surface": TORUS, "probe": {"chart": 1}}, "probe.chart"),
    ({"surface": {"type": "sphere"}, "probe": {"degree": 9}}, "probe.degree"),
])
def test_invalid_configs_name_the_field(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.").replace("+", r"\+")):
        config_from_dict(data)


def test_syntax_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"surface":\n  {"type": "sphere",}}\n')
    with pytest.raises(ConfigError, match="line 2"):
        parse_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "none.json")


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.45, 0.45))
def test_constant_initial_height(c):
    cfg = config_from_dict({"surface": {"type": "sphere"}, "grid": {"resolution": 16},
                            "initial": {"type": "constant", "amplitude": c}})
    assert np.all(initial_height(cfg, sphere_atlas(16)) == c)


def test_sphere_harmonic_is_scaled_legendre():
    cfg = config_from_dict({"surface": {"type": "sphere"}, "grid": {"resolution": 32},
                            "initial": {"type": "harmonic", "amplitude": 0.05, "l": 2, "m": 0}})
    at = sphere_atlas(32)
    z = at.geometry.position[:, 2]
    assert np.allclose(initial_height(cfg, at), 0.05 * 0.5 * (3 * z**2 - 1), atol=1e-12)


def test_torus_harmonic():
    cfg = config_from_dict({"surface": TORUS, "grid": {"resolution": 32},
                            "initial": {"type": "harmonic", "amplitude": 0.1, "l": 1, "m": 2}})
    at = torus_atlas(32)
    U, V = at.all_owned_coords().T
    assert np.allclose(initial_height(cfg, at), 0.1 * np.cos(U) * np.cos(2 * V))


def test_expression_initial_height():
    cfg = config_from_dict({"surface": {"type": "sphere"}, "grid": {"resolution": 32},
                            "initial": {"type": "expression-table", "expression": "a*x*y + b",
                                        "table": {"a": 0.2, "b": -0.01}}})
    at = sphere_atlas(32)
    X = at.geometry.position
    assert np.allclose(initial_height(cfg, at), 0.2 * X[:, 0] * X[:, 1] - 0.01)


def test_expression_outside_tube_rejected():
    cfg = config_from_dict({"surface": {"type": "sphere"}, "grid": {"resolution": 16},
                            "initial": {"type": "expression-table", "expression": "z"}})
    with pytest.raises(ConfigError, match="tubular radius"):
        initial_height(cfg, sphere_atlas(16))


def test_config_is_frozen():
    cfg = config_from_dict({"surface": {"type": "sphere"}})
    with pytest.raises(Exception):
        cfg.grid = None
    assert isinstance(cfg, RunConfig)
