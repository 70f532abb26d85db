"""Closed real-analytic reference surfaces with exact chart-wise geometry.

Every surface is described by an atlas of charts whose position maps are
written down symbolically; all geometric quantities (metric, second
fundamental form, Christoffel symbols, derivatives of the Weingarten map) are
obtained from closed-form derivatives of those maps, never from grid
differences.

Orientation convention: the unit normal points *inward*, so the unit sphere
has Weingarten map equal to the identity and mean curvature ``+1``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .errors import DomainError, InvalidParameterError

# Multi-indices of the chart-map derivatives that are needed (orders 1..3).
DERIVATIVE_INDICES = (
    (1, 0), (0, 1),
    (2, 0), (1, 1), (0, 2),
    (3, 0), (2, 1), (1, 2), (0, 3),
)

SAFETY_FACTOR = 0.5

# Stereographic cap charts live on [-SPHERE_CHART_EXTENT, SPHERE_CHART_EXTENT]^2.
SPHERE_CHART_EXTENT = 1.8
# Partition of unity switches between caps for stereographic radius in [1/c, c].
SPHERE_POU_CUTOFF = 1.3


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, psi(x) + psi(1-x) = 1."""
    x = np.asarray(x, dtype=float)

    def f(y):
        pos = y > 0
        out = np.zeros_like(y)
        out[pos] = np.exp(-1.0 / y[pos])
        return out

    a = f(x)
    b = f(1.0 - x)
    return a / (a + b)


def smooth_step_derivative(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    y = x[inside]
    a = np.exp(-1.0 / y)
    b = np.exp(-1.0 / (1.0 - y))
    da = a / y**2
    db = -b / (1.0 - y) ** 2
    out[inside] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out


@functools.lru_cache(maxsize=None)
def _lambdified_derivatives(kind: str):
    """Lambdified chart-map derivatives; shape parameters are trailing arguments."""
    u, v = sp.symbols("u v", real=True)
    if kind == "torus":
        R, r = sp.symbols("R r", positive=True)
        X = sp.Matrix([(R + r * sp.cos(v)) * sp.cos(u),
                       (R + r * sp.cos(v)) * sp.sin(u),
                       r * sp.sin(v)])
        args = (u, v, R, r)
    elif kind in ("sphere_north", "sphere_south"):
        radius = sp.symbols("radius", positive=True)
        s2 = u**2 + v**2
        zsign = 1 if kind == "sphere_north" else -1
        X = radius * sp.Matrix([2 * u, 2 * v, zsign * (1 - s2)]) / (1 + s2)
        args = (u, v, radius)
    else:  # pragma: no cover - guarded by the factories
        raise InvalidParameterError(f"unknown chart kind {kind!r}")

    funcs = {(0, 0): sp.lambdify(args, list(X), "numpy")}
    for a, b in DERIVATIVE_INDICES:
        expr = X
        for _ in range(a):
            expr = expr.diff(u)
        for _ in range(b):
            expr = expr.diff(v)
        funcs[(a, b)] = sp.lambdify(args, list(expr), "numpy", cse=True)
    return funcs


def _evaluate(func, u, v, params=()):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast(u, v).shape
    comps = func(u, v, *params)
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in comps], axis=-1)


@dataclass(frozen=True)
class SurfaceChart:
    """One chart of a reference surface.

    ``lower``/``upper`` bound the parameter rectangle; for periodic axes the
    upper bound is excluded.  ``normal_sign`` orients ``X_u x X_v`` inward.
    """

    id: int
    kind: str
    params: tuple[float, ...]
    lower: tuple[float, float]
    upper: tuple[float, float]
    periodic: tuple[bool, bool]
    normal_sign: float
    _inverse: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] = field(repr=False, compare=False)

    def position(self, u, v) -> np.ndarray:
        return _evaluate(_lambdified_derivatives(self.kind)[(0, 0)], u, v, self.params)

    def derivatives(self, u, v) -> dict[tuple[int, int], np.ndarray]:
        funcs = _lambdified_derivatives(self.kind)
        return {k: _evaluate(f, u, v, self.params) for k, f in funcs.items()}

    def coordinates(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chart coordinates of points on the surface (inverse of ``position``)."""
        return self._inverse(np.asarray(points, dtype=float))

    def transition(self, other: "SurfaceChart", u, v) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates of this chart into ``other``'s coordinates."""
        return other.coordinates(self.position(u, v))

    def contains(self, u, v, tol: float = 1e-12) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        ok = np.ones(np.broadcast(u, v).shape, dtype=bool)
        for x, lo, hi, per in ((u, self.lower[0], self.upper[0], self.periodic[0]),
                               (v, self.lower[1], self.upper[1], self.periodic[1])):
            if per:
                ok &= (x >= lo - tol) & (x < hi + tol)
            else:
                ok &= (x >= lo - tol) & (x <= hi + tol)
        return ok


@dataclass(frozen=True)
class ChartGeometry:
    """Closed-form geometry of the reference surface at a set of nodes.

    Index layout (leading axis runs over nodes):

    * ``g[..., i, j]`` = g_ij, ``g_inv[..., i, j]`` = g^ij
    * ``l[..., i, j]`` = l_ij (second fundamental form)
    * ``l_mixed[..., k, i]`` = l^k_i = g^km l_mi (Weingarten map W = g^-1 l)
    * ``christoffel[..., k, i, j]`` = Gamma^k_ij
    * ``dg[..., m, i, j]`` = d_m g_ij, ``dl[..., m, i, j]`` = d_m l_ij
    * ``dl_mixed[..., m, k, i]`` = d_m l^k_i
    """

    position: np.ndarray
    tangents: np.ndarray  # (..., 2, 3): tau_1, tau_2
    normal: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: np.ndarray
    l: np.ndarray
    l_mixed: np.ndarray
    christoffel: np.ndarray
    dg: np.ndarray
    dl: np.ndarray
    dl_mixed: np.ndarray

    @property
    def mean_curvature(self) -> np.ndarray:
        return 0.5 * np.trace(self.l_mixed, axis1=-2, axis2=-1)

    @property
    def gauss_curvature(self) -> np.ndarray:
        return np.linalg.det(self.l_mixed)

    def take(self, index) -> "ChartGeometry":
        return ChartGeometry(**{k: getattr(self, k)[index] for k in self.__dataclass_fields__})

    @staticmethod
    def concatenate(parts: list["ChartGeometry"]) -> "ChartGeometry":
        return ChartGeometry(**{k: np.concatenate([getattr(p, k) for p in parts], axis=0)
                                for k in ChartGeometry.__dataclass_fields__})


@dataclass(frozen=True)
class ReferenceSurface:
    kind: str
    params: dict
    charts: tuple[SurfaceChart, ...]
    tubular_a: float
    euler_char: int
    max_abs_curvature: float
    _pou: Callable[[int, np.ndarray, np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def pou(self, chart_id: int, u, v) -> np.ndarray:
        """Partition-of-unity weight pi_k^2 of chart ``chart_id`` at its coordinates."""
        return self._pou(chart_id, np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def to_config(self) -> dict:
        return {"type": self.kind, **self.params}


def _stereo_inverse(sign: float, radius: float):
    def inverse(p):
        denom = radius + sign * p[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            return p[..., 0] / denom, p[..., 1] / denom
    return inverse


def _sphere_pou(chart_id, u, v):
    s = np.sqrt(u**2 + v**2)
    logc = math.log(SPHERE_POU_CUTOFF)
    with np.errstate(divide="ignore"):
        x = (logc - np.log(s)) / (2.0 * logc)
    # Both caps use the same profile of their own radius; radii are reciprocal,
    # so the two weights add to one.
    return smooth_step(x)


def make_sphere(radius: float) -> ReferenceSurface:
    """Round sphere covered by two stereographic cap charts.

    The north chart projects from the south pole and vice versa; the
    transition map between them is the inversion x -> x/|x|^2.
    """
    if not (radius > 0 and math.isfinite(radius)):
        raise InvalidParameterError(f"sphere radius must be positive, got {radius}")
    L = SPHERE_CHART_EXTENT
    charts = (
        SurfaceChart(0, "sphere_north", (float(radius),), (-L, -L), (L, L), (False, False),
                     -1.0, _stereo_inverse(+1.0, radius)),
        SurfaceChart(1, "sphere_south", (float(radius),), (-L, -L), (L, L), (False, False),
                     +1.0, _stereo_inverse(-1.0, radius)),
    )
    kmax = 1.0 / radius
    return ReferenceSurface("sphere", {"radius": float(radius)}, charts,
                            SAFETY_FACTOR / kmax, 2, kmax, _sphere_pou)


def make_torus(R: float, r: float) -> ReferenceSurface:
    """Torus of revolution, a single doubly periodic chart (u, v) in [0, 2pi)^2."""
    if not (r > 0 and R > r and math.isfinite(R)):
        raise InvalidParameterError(f"torus needs R > r > 0, got R={R}, r={r}")

    def inverse(p):
        u = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2 * np.pi)
        rho = np.hypot(p[..., 0], p[..., 1])
        v = np.mod(np.arctan2(p[..., 2], rho - R), 2 * np.pi)
        return u, v

    two_pi = 2 * np.pi
    chart = SurfaceChart(0, "torus", (float(R), float(r)), (0.0, 0.0), (two_pi, two_pi),
                         (True, True), -1.0, inverse)
    # principal curvatures 1/r and cos v/(R + r cos v); the latter peaks at v = pi
    kmax = max(1.0 / r, 1.0 / (R - r))
    return ReferenceSurface("torus", {"R": float(R), "r": float(r)}, (chart,),
                            SAFETY_FACTOR / kmax, 0, kmax,
                            lambda cid, u, v: np.ones(np.broadcast(u, v).shape))


def make_surface(spec: dict) -> ReferenceSurface:
    kind = spec.get("type")
    if kind == "sphere":
        return make_sphere(float(spec.get("radius", 1.0)))
    if kind == "torus":
        return make_torus(float(spec["R"]), float(spec["r"]))
    raise InvalidParameterError(f"unknown surface type {kind!r}")


def tubular_radius(surface: ReferenceSurface) -> float:
    """Admissible sup bound a on the height: 0.5 / max |principal curvature|."""
    return SAFETY_FACTOR / surface.max_abs_curvature


def _inv2(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1] / det
    inv[..., 1, 1] = m[..., 0, 0] / det
    inv[..., 0, 1] = -m[..., 0, 1] / det
    inv[..., 1, 0] = -m[..., 1, 0] / det
    return inv, det


def geometry_from_derivatives(d: dict, normal_sign: float) -> ChartGeometry:
    X1 = np.stack([d[(1, 0)], d[(0, 1)]], axis=-2)  # (..., i, 3)
    X2 = np.empty(X1.shape[:-2] + (2, 2, 3))
    X2[..., 0, 0, :] = d[(2, 0)]
    X2[..., 0, 1, :] = X2[..., 1, 0, :] = d[(1, 1)]
    X2[..., 1, 1, :] = d[(0, 2)]
    X3 = np.empty(X1.shape[:-2] + (2, 2, 2, 3))
    for a in range(2):
        for b in range(2):
            for c in range(2):
                nu = a + b + c  # number of v-derivatives
                X3[..., a, b, c, :] = d[(3 - nu, nu)]

    g = np.einsum("...ix,...jx->...ij", X1, X1)
    g_inv, det = _inv2(g)
    cross = np.cross(X1[..., 0, :], X1[..., 1, :])
    normal = normal_sign * cross / np.linalg.norm(cross, axis=-1, keepdims=True)
    l = np.einsum("...ijx,...x->...ij", X2, normal)
    W = np.einsum("...km,...mi->...ki", g_inv, l)
    X2dotX1 = np.einsum("...ijx,...lx->...ijl", X2, X1)
    christoffel = np.einsum("...kl,...ijl->...kij", g_inv, X2dotX1)
    # d_m g_ij = X_im . X_j + X_i . X_jm
    dg = np.einsum("...imx,...jx->...mij", X2, X1)
    dg = dg + np.swapaxes(dg, -1, -2)
    # d_m nu = -W^k_m X_k ;  d_m l_ij = X_ijm . nu + X_ij . d_m nu
    dl = np.einsum("...ijmx,...x->...mij", X3, normal) - np.einsum("...km,...ijk->...mij", W, X2dotX1)
    dg_inv = -np.einsum("...ab,...mbc,...cd->...mad", g_inv, dg, g_inv)
    dl_mixed = np.einsum("...mka,...ai->...mki", dg_inv, l) + np.einsum("...ka,...mai->...mki", g_inv, dl)
    return ChartGeometry(
        position=d[(0, 0)],
        tangents=X1,
        normal=normal,
        g=g,
        g_inv=g_inv,
        sqrt_det_g=np.sqrt(det),
        l=l,
        l_mixed=W,
        christoffel=christoffel,
        dg=dg,
        dl=dl,
        dl_mixed=dl_mixed,
    )


def chart_geometry(surface: ReferenceSurface, chart_id: int, nodes) -> ChartGeometry:
    """Evaluate the closed-form geometry of chart ``chart_id`` at ``nodes`` (N, 2)."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    chart = surface.charts[chart_id]
    u, v = nodes[:, 0], nodes[:, 1]
    inside = chart.contains(u, v)
    if not np.all(inside):
        bad = nodes[~inside][0]
        raise DomainError(f"node {tuple(bad)} outside domain of chart {chart_id}")
    return geometry_from_derivatives(chart.derivatives(u, v), chart.normal_sign)
