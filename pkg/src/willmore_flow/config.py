"""Run configuration: a strict JSON document validated with pydantic.

Example::

    {
      "surface": {"type": "torus", "R": 2.0, "r": 1.0},
      "grid": {"resolution": 64},
      "initial": {"type": "constant", "amplitude": 0.1},
      "flow": {"t_end": 0.01}
    }

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import sympy as sp
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.special import lpmv

from .errors import ConfigError
from .surfaces import ReferenceSurface, make_surface

Finite = Annotated[float, Field(allow_inf_nan=False)]
Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SphereSpec(_Strict):
    type: Literal["sphere"]
    radius: Positive = 1.0


class TorusSpec(_Strict):
    type: Literal["torus"]
    R: Positive
    r: Positive

    @model_validator(mode="after")
    def _ordered(self):
        if not self.R > self.r:
            raise ValueError("torus needs R > r")
        return self


SurfaceSpec = Annotated[Union[SphereSpec, TorusSpec], Field(discriminator="type")]


class GridSpec(_Strict):
    resolution: int = Field(64, ge=16)


class ConstantInit(_Strict):
    type: Literal["constant"]
    amplitude: Finite


class HarmonicInit(_Strict):
    """Sphere: amplitude * P_l^m(z) cos(m phi), scaled to sup 1.  Torus: amplitude * cos(l u) cos(m v)."""

    type: Literal["harmonic"]
    amplitude: Finite
    l: int = Field(2, ge=0)
    m: int = Field(0, ge=0)


class ExpressionInit(_Strict):
    """Height given by a formula in x, y, z (reference point) with named constants."""

    type: Literal["expression-table"]
    expression: str
    table: dict[str, Finite] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _parses(self):
        _compile_expression(self.expression, tuple(sorted(self.table)))
        return self


InitialSpec = Annotated[Union[ConstantInit, HarmonicInit, ExpressionInit], Field(discriminator="type")]


class FlowSpec(_Strict):
    dt0: Positive = 1e-4
    t_end: Positive = 0.01
    atol: Positive = 1e-8
    rtol: Annotated[float, Field(ge=0, allow_inf_nan=False)] = 1e-6
    output_every: int = Field(1, ge=1)
    equilibrium_tol: Positive | None = None
    max_steps: int = Field(100000, ge=1)
    adaptive: bool = True


class OutputSpec(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "obj", "json"]] = Field(default_factory=lambda: ["csv", "obj", "json"])


class ProbeSpec(_Strict):
    fixture: Literal["flow", "kink"] = "flow"
    t0: Positive = 0.003
    time_eps0: Positive = 0.001
    sample_dt: Positive = 2e-4
    chart: int = Field(0, ge=0)
    point: tuple[Finite, Finite] = (0.5, 0.3)
    eps0: Positive = 0.3
    lambda_radius: Annotated[float, Field(ge=0, allow_inf_nan=False)] | None = None
    mu_radius: Annotated[float, Field(ge=0, allow_inf_nan=False)] | None = None
    direction: tuple[Finite, Finite] = (0.6, 0.8)
    degree: int = Field(6, ge=1, le=8)


class RunConfig(_Strict):
    surface: SurfaceSpec
    grid: GridSpec = GridSpec()
    initial: InitialSpec = ConstantInit(type="constant", amplitude=0.0)
    flow: FlowSpec = FlowSpec()
    output: OutputSpec = OutputSpec()
    probe: ProbeSpec | None = None

    @model_validator(mode="after")
    def _amplitude_in_tube(self):
        a = self.reference_surface().tubular_a
        init = self.initial
        if isinstance(init, (ConstantInit, HarmonicInit)) and not abs(init.amplitude) < a:
            raise ValueError(f"initial.amplitude {init.amplitude} must be below the tubular radius {a:.6g}")
        if isinstance(init, HarmonicInit) and self.surface.type == "sphere" and init.m > init.l:
            raise ValueError("initial.m must not exceed initial.l on the sphere")
        if self.probe is not None and self.probe.chart >= len(self.reference_surface().charts):
            raise ValueError(f"probe.chart {self.probe.chart} does not exist")
        return self

    def reference_surface(self) -> ReferenceSurface:
        return _surface(self.surface)

    def echo(self) -> dict:
        return self.model_dump(mode="json")


@lru_cache(maxsize=None)
def _surface(spec) -> ReferenceSurface:
    return make_surface(spec.model_dump())


def _compile_expression(text: str, names: tuple):
    symbols = sp.symbols("x y z")
    local = {n: sp.Symbol(n) for n in names}
    local.update({s.name: s for s in symbols})
    try:
        expr = sp.sympify(text, locals=local)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from None
    free = {s.name for s in expr.free_symbols} - {"x", "y", "z"} - set(names)
    if free:
        raise ValueError(f"expression uses undefined names {sorted(free)}")
    return expr


def parse_config(path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data)


def config_from_dict(data) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        parts = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "config"
            parts.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config: " + "; ".join(parts)) from None


def _harmonic_sphere(l: int, m: int, xyz, radius: float):
    z = np.clip(xyz[..., 2] / radius, -1.0, 1.0)
    phi = np.arctan2(xyz[..., 1], xyz[..., 0])
    zs = np.cos(np.linspace(0.0, math.pi, 20001))
    peak = float(np.max(np.abs(lpmv(m, l, zs))))
    return lpmv(m, l, z) * np.cos(m * phi) / peak


def initial_height(config: RunConfig, atlas) -> np.ndarray:
    """Owned-node values of the initial height."""
    init = config.initial
    surf = atlas.surface
    X = atlas.geometry.position
    if isinstance(init, ConstantInit):
        return np.full(atlas.n_owned, init.amplitude)
    if isinstance(init, HarmonicInit):
        if surf.kind == "sphere":
            return init.amplitude * _harmonic_sphere(init.l, init.m, X, surf.params["radius"])
        coords = atlas.all_owned_coords()
        return init.amplitude * np.cos(init.l * coords[:, 0]) * np.cos(init.m * coords[:, 1])
    names = tuple(sorted(init.table))
    expr = _compile_expression(init.expression, names).subs({sp.Symbol(k): v for k, v in init.table.items()})
    f = sp.lambdify(sp.symbols("x y z"), expr, "numpy")
    rho = np.broadcast_to(np.asarray(f(X[:, 0], X[:, 1], X[:, 2]), dtype=float), (atlas.n_owned,)).copy()
    if not np.all(np.isfinite(rho)):
        raise ConfigError("initial.expression: non-finite values on the grid")
    if not np.max(np.abs(rho)) < surf.tubular_a:
        raise ConfigError(f"initial.expression: sup {np.max(np.abs(rho)):.6g} is not below the "
                          f"tubular radius {surf.tubular_a:.6g}")
    return rho
