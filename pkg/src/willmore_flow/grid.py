"""Overset structured grids on the reference-surface charts.

Each chart carries an ``n x n`` lattice of *owned* nodes padded by a halo of
``HALO`` nodes on every side.  Halo values are either periodic copies or are
interpolated from owned nodes of a donor chart.  Both cases are encoded in a
single sparse *extension* matrix mapping the global vector of owned values to
the padded arrays, so that field-level exchange and operator assembly share
exactly the same coupling.

Derivatives are centered fourth-order finite differences; mixed partials are
tensor products of one-dimensional stencils.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .errors import (
    AssemblyError,
    GridConstructionError,
    InvalidParameterError,
    StaleDataError,
    UnsupportedOrderError,
)
from .surfaces import ChartGeometry, ReferenceSurface, geometry_from_derivatives

HALO = 3
MIN_RESOLUTION = 16
# Donor interpolation uses 6 points per axis (quintic Lagrange).
DONOR_OFFSETS = np.arange(-2, 4)


@functools.lru_cache(maxsize=None)
def central_stencil(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights (for unit spacing) of the 4th-order centered stencil."""
    if order < 0 or order > 4:
        raise UnsupportedOrderError(f"derivative order {order} not supported (max 4)")
    if order == 0:
        return np.array([0]), np.array([1.0])
    p = 2 if order <= 2 else 3
    offsets = np.arange(-p, p + 1)
    A = np.vander(offsets.astype(float), increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[order] = math.factorial(order)
    weights = np.linalg.solve(A, rhs)
    weights[np.abs(weights) < 1e-13] = 0.0
    return offsets, weights


def lagrange_weights(t: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Lagrange basis weights at fractional positions ``t`` for integer nodes ``offsets``.

    Returns an array of shape ``(len(offsets),) + t.shape``.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((len(offsets),) + t.shape)
    for a, oa in enumerate(offsets):
        w = np.ones_like(t)
        for ob in offsets:
            if ob != oa:
                w = w * (t - ob) / (oa - ob)
        out[a] = w
    return out


@dataclass
class GridField:
    """Values on all charts of an atlas, stored as padded arrays.

    ``values`` has shape ``(n_charts, n + 2*HALO, n + 2*HALO)``; the owned
    block is ``values[:, HALO:-HALO, HALO:-HALO]``.
    """

    atlas: "GridAtlas"
    values: np.ndarray
    halo_current: bool = False
    tag: str = "scalar"

    @property
    def owned(self) -> np.ndarray:
        g = HALO
        return self.values[:, g:-g, g:-g].reshape(-1)

    def copy(self) -> "GridField":
        return GridField(self.atlas, self.values.copy(), self.halo_current, self.tag)


@dataclass
class SparseOperator:
    """Linear operator on the global vector of owned nodes."""

    matrix: sps.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        if isinstance(other, GridField):
            return self.matrix @ other.owned
        return self.matrix @ other

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec


@dataclass
class GridAtlas:
    surface: ReferenceSurface
    n: int
    h: np.ndarray  # (n_charts, 2)
    axes: np.ndarray  # (n_charts, 2, n + 2*HALO) padded coordinates
    geometry: ChartGeometry  # at owned nodes, flattened over charts
    pou: np.ndarray  # pi_k^2 at owned nodes
    trapezoid: np.ndarray  # tensor trapezoid weights (including h_u h_v) at owned nodes
    extension: sps.csr_matrix  # owned -> padded
    donor_info: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_charts(self) -> int:
        return len(self.surface.charts)

    @property
    def padded(self) -> int:
        return self.n + 2 * HALO

    @property
    def n_owned(self) -> int:
        return self.n_charts * self.n * self.n

    def owned_coords(self, chart_id: int) -> tuple[np.ndarray, np.ndarray]:
        g = HALO
        u = self.axes[chart_id, 0, g:-g]
        v = self.axes[chart_id, 1, g:-g]
        return np.meshgrid(u, v, indexing="ij")

    def all_owned_coords(self) -> np.ndarray:
        """(N, 2) chart coordinates of every owned node, chart-major."""
        parts = []
        for c in range(self.n_charts):
            U, V = self.owned_coords(c)
            parts.append(np.stack([U.ravel(), V.ravel()], axis=-1))
        return np.concatenate(parts, axis=0)

    def chart_slice(self, chart_id: int) -> slice:
        m = self.n * self.n
        return slice(chart_id * m, (chart_id + 1) * m)

    def chart_of_owned(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_charts), self.n * self.n)

    def field(self, owned: np.ndarray, tag: str = "scalar", exchange: bool = True) -> GridField:
        """Wrap a global owned vector as a GridField (halos filled if ``exchange``)."""
        owned = np.asarray(owned, dtype=float)
        if owned.shape != (self.n_owned,):
            raise InvalidParameterError(f"expected {self.n_owned} owned values, got {owned.shape}")
        if exchange:
            values = (self.extension @ owned).reshape(self.n_charts, self.padded, self.padded)
            return GridField(self, values, True, tag)
        values = np.full((self.n_charts, self.padded, self.padded), np.nan)
        g = HALO
        values[:, g:-g, g:-g] = owned.reshape(self.n_charts, self.n, self.n)
        return GridField(self, values, False, tag)

    def sample(self, func, tag: str = "scalar") -> GridField:
        """Sample ``func(chart_id, u, v, xyz)`` at owned nodes and fill halos."""
        parts = []
        for c, chart in enumerate(self.surface.charts):
            U, V = self.owned_coords(c)
            parts.append(np.broadcast_to(func(c, U, V, chart.position(U, V)), U.shape).ravel())
        return self.field(np.concatenate(parts), tag)

    def sample_global(self, func, tag: str = "scalar") -> GridField:
        """Sample a function of the embedded reference point ``func(xyz)``."""
        return self.sample(lambda c, U, V, xyz: func(xyz), tag)

    def blended_mask(self) -> np.ndarray:
        return self.pou > 0

    def blended_sup(self, owned: np.ndarray) -> float:
        """Sup norm over nodes that carry partition-of-unity weight."""
        vals = np.abs(np.asarray(owned)[self.blended_mask()])
        return float(vals.max()) if vals.size else 0.0

    def position_owned(self) -> np.ndarray:
        return self.geometry.position


def _axis_nodes(lo: float, hi: float, n: int, periodic: bool):
    h = (hi - lo) / n if periodic else (hi - lo) / (n - 1)
    return lo + h * np.arange(-HALO, n + HALO), h


def build_grids(surface: ReferenceSurface, resolution: int) -> GridAtlas:
    """Build one padded lattice per chart and resolve halo donors."""
    n = int(resolution)
    if n < MIN_RESOLUTION:
        raise InvalidParameterError(f"resolution {n} below minimum {MIN_RESOLUTION}")
    nc = len(surface.charts)
    P = n + 2 * HALO
    axes = np.empty((nc, 2, P))
    h = np.empty((nc, 2))
    for c, chart in enumerate(surface.charts):
        for ax in range(2):
            axes[c, ax], h[c, ax] = _axis_nodes(chart.lower[ax], chart.upper[ax], n, chart.periodic[ax])

    geoms, pous, traps = [], [], []
    g = HALO
    for c, chart in enumerate(surface.charts):
        U, V = np.meshgrid(axes[c, 0, g:-g], axes[c, 1, g:-g], indexing="ij")
        geoms.append(geometry_from_derivatives(chart.derivatives(U.ravel(), V.ravel()), chart.normal_sign))
        pous.append(surface.pou(c, U, V).ravel())
        wts = []
        for ax in range(2):
            w = np.full(n, h[c, ax])
            if not chart.periodic[ax]:
                w[0] *= 0.5
                w[-1] *= 0.5
            wts.append(w)
        traps.append(np.outer(wts[0], wts[1]).ravel())

    atlas = GridAtlas(surface, n, h, axes, ChartGeometry.concatenate(geoms),
                      np.concatenate(pous), np.concatenate(traps), sps.csr_matrix((1, 1)))
    atlas.extension = _build_extension(atlas)
    return atlas


def _build_extension(atlas: GridAtlas) -> sps.csr_matrix:
    surface = atlas.surface
    n, P, nc = atlas.n, atlas.padded, atlas.n_charts
    rows, cols, vals = [], [], []
    orphan_count = 0
    donor_counts = {}
    for c, chart in enumerate(surface.charts):
        I, J = np.meshgrid(np.arange(P), np.arange(P), indexing="ij")
        oi, oj = I - HALO, J - HALO
        # periodic wrap per axis
        if chart.periodic[0]:
            oi = np.mod(oi, n)
        if chart.periodic[1]:
            oj = np.mod(oj, n)
        owned = (oi >= 0) & (oi < n) & (oj >= 0) & (oj < n)
        prow = c * P * P + I * P + J
        rows.append(prow[owned])
        cols.append(c * n * n + oi[owned] * n + oj[owned])
        vals.append(np.ones(owned.sum()))
        if owned.all():
            continue

        hi_idx, hj_idx = I[~owned], J[~owned]
        hu = atlas.axes[c, 0, hi_idx]
        hv = atlas.axes[c, 1, hj_idx]
        pts = chart.position(hu, hv)
        best_margin = np.full(hu.shape, -np.inf)
        best = [None] * hu.size
        for d, donor in enumerate(surface.charts):
            if d == c:
                continue
            du, dv = donor.coordinates(pts)
            du = np.asarray(du, dtype=float)
            dv = np.asarray(dv, dtype=float)
            finite = np.isfinite(du) & np.isfinite(dv)
            du_s = np.where(finite, du, 0.0)
            dv_s = np.where(finite, dv, 0.0)
            lo0, lo1 = donor.lower
            hi0, hi1 = donor.upper
            fi = (du_s - lo0) / atlas.h[d, 0]
            fj = (dv_s - lo1) / atlas.h[d, 1]
            i0 = np.floor(fi).astype(int)
            j0 = np.floor(fj).astype(int)
            ok = finite & (i0 + DONOR_OFFSETS[0] >= 0) & (i0 + DONOR_OFFSETS[-1] < n)
            ok &= (j0 + DONOR_OFFSETS[0] >= 0) & (j0 + DONOR_OFFSETS[-1] < n)
            margin = np.minimum.reduce([du_s - lo0, hi0 - du_s, dv_s - lo1, hi1 - dv_s])
            better = ok & (margin > best_margin)
            for k in np.nonzero(better)[0]:
                best[k] = (d, i0[k], j0[k], fi[k] - i0[k], fj[k] - j0[k])
            best_margin = np.where(better, margin, best_margin)
        for k, entry in enumerate(best):
            if entry is None:
                orphan_count += 1
                raise GridConstructionError(
                    f"orphan halo node: chart {c}, padded index ({hi_idx[k]}, {hj_idx[k]}), "
                    f"coordinates ({hu[k]:.6g}, {hv[k]:.6g}) has no donor chart")
        donors = np.array([e[0] for e in best])
        i0 = np.array([e[1] for e in best])
        j0 = np.array([e[2] for e in best])
        ti = np.array([e[3] for e in best])
        tj = np.array([e[4] for e in best])
        wi = lagrange_weights(ti, DONOR_OFFSETS)
        wj = lagrange_weights(tj, DONOR_OFFSETS)
        prow_h = c * P * P + hi_idx * P + hj_idx
        for a, oa in enumerate(DONOR_OFFSETS):
            for b, ob in enumerate(DONOR_OFFSETS):
                rows.append(prow_h)
                cols.append(donors * n * n + (i0 + oa) * n + (j0 + ob))
                vals.append(wi[a] * wj[b])
        for d in np.unique(donors):
            donor_counts[(c, int(d))] = int((donors == d).sum())
    atlas.donor_info = donor_counts
    E = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(nc * P * P, nc * n * n))
    E.sum_duplicates()
    return E


def _check_multi_index(multi_index) -> tuple[int, int]:
    a, b = (int(k) for k in multi_index)
    if a < 0 or b < 0:
        raise UnsupportedOrderError(f"invalid multi-index {multi_index}")
    if a + b > 4:
        raise UnsupportedOrderError(f"derivative order {a + b} > 4 not supported")
    return a, b


def _stencil_apply(values: np.ndarray, a: int, b: int, h: np.ndarray, n: int) -> np.ndarray:
    """Apply d^a/du^a d^b/dv^b to padded arrays (one chart) at owned nodes."""
    g = HALO
    off_a, w_a = central_stencil(a)
    off_b, w_b = central_stencil(b)
    # first along u (axis 0), keeping all columns
    tmp = np.zeros((n, values.shape[1]))
    for o, w in zip(off_a, w_a):
        if w != 0.0:
            tmp += w * values[g + o:g + o + n, :]
    out = np.zeros((n, n))
    for o, w in zip(off_b, w_b):
        if w != 0.0:
            out += w * tmp[:, g + o:g + o + n]
    return out / (h[0] ** a * h[1] ** b)


def differentiate(atlas: GridAtlas, field: GridField, multi_index) -> GridField:
    """Partial derivative d_u^a d_v^b of a field at owned nodes (halos left stale)."""
    a, b = _check_multi_index(multi_index)
    if not field.halo_current:
        raise StaleDataError("differentiate needs current halo values; call exchange_and_blend first")
    out = np.full_like(field.values, np.nan)
    g = HALO
    for c in range(atlas.n_charts):
        out[c, g:-g, g:-g] = _stencil_apply(field.values[c], a, b, atlas.h[c], atlas.n)
    return GridField(atlas, out, False, field.tag)


def derivative_owned(atlas: GridAtlas, owned: np.ndarray, multi_index) -> np.ndarray:
    """Convenience: exchange then differentiate a global owned vector."""
    return differentiate(atlas, atlas.field(owned), multi_index).owned


def exchange_and_blend(atlas: GridAtlas, fields):
    """Refresh halo values of one field or a list of fields.

    Halo nodes are filled by periodic copy or quintic interpolation from donor
    owned nodes; owned values are untouched, so the operation is idempotent.
    """
    single = isinstance(fields, GridField)
    items = [fields] if single else list(fields)
    out = []
    for f in items:
        owned = f.owned
        if not np.all(np.isfinite(owned)):
            bad = int(np.flatnonzero(~np.isfinite(owned))[0])
            raise StaleDataError(f"donor data not finite at owned index {bad}")
        values = (atlas.extension @ owned).reshape(f.values.shape)
        out.append(GridField(atlas, values, True, f.tag))
    return out[0] if single else out


def blend_at(atlas: GridAtlas, field: GridField, points: np.ndarray) -> np.ndarray:
    """Partition-of-unity blended value sum_k pi_k^2 u_k at embedded points (M, 3).

    Each chart value is obtained by quintic interpolation of that chart's data.
    """
    if not field.halo_current:
        raise StaleDataError("blend_at needs current halo values")
    points = np.atleast_2d(points)
    total = np.zeros(points.shape[0])
    for c, chart in enumerate(atlas.surface.charts):
        u, v = chart.coordinates(points)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        finite = np.isfinite(u) & np.isfinite(v)
        w = np.zeros(points.shape[0])
        w[finite] = atlas.surface.pou(c, u[finite], v[finite])
        use = w > 0
        if np.any(use):
            total[use] += w[use] * interpolate_chart(atlas, field, c, u[use], v[use])
    return total


def interpolate_chart(atlas: GridAtlas, field: GridField, chart_id: int, u, v) -> np.ndarray:
    """Quintic tensor Lagrange interpolation of padded chart data at (u, v)."""
    chart = atlas.surface.charts[chart_id]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    vals = field.values[chart_id]
    P = atlas.padded
    idx, frac = [], []
    for ax, x in enumerate((u, v)):
        lo = chart.lower[ax]
        hh = atlas.h[chart_id, ax]
        f = (x - lo) / hh
        if chart.periodic[ax]:
            f = np.mod(f, atlas.n)
        i0 = np.floor(f).astype(int)
        idx.append(i0 + HALO)
        frac.append(f - i0)
    for ax in range(2):
        if np.any(idx[ax] + DONOR_OFFSETS[0] < 0) or np.any(idx[ax] + DONOR_OFFSETS[-1] >= P):
            raise StaleDataError("interpolation stencil leaves the padded chart lattice")
    wi = lagrange_weights(frac[0], DONOR_OFFSETS)
    wj = lagrange_weights(frac[1], DONOR_OFFSETS)
    out = np.zeros(u.shape)
    for a, oa in enumerate(DONOR_OFFSETS):
        for b, ob in enumerate(DONOR_OFFSETS):
            out += wi[a] * wj[b] * vals[idx[0] + oa, idx[1] + ob]
    return out


def integrate(atlas: GridAtlas, density, area_element: np.ndarray | None = None) -> float:
    """Partition-of-unity quadrature sum_k sum_nodes pi_k^2 f sqrt(det) h_u h_v.

    ``area_element`` defaults to the reference metric's sqrt(det g).
    """
    f = density.owned if isinstance(density, GridField) else np.broadcast_to(density, (atlas.n_owned,))
    dA = atlas.geometry.sqrt_det_g if area_element is None else area_element
    return float(np.sum(atlas.pou * atlas.trapezoid * f * dA))


def _derivative_matrix_1d(n: int, order: int, h: float) -> sps.csr_matrix:
    off, w = central_stencil(order)
    P = n + 2 * HALO
    rows, cols, vals = [], [], []
    for o, wt in zip(off, w):
        if wt == 0.0:
            continue
        rows.append(np.arange(n))
        cols.append(np.arange(n) + HALO + o)
        vals.append(np.full(n, wt / h**order))
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, P))


def derivative_matrix(atlas: GridAtlas, multi_index) -> sps.csr_matrix:
    """Sparse owned -> owned matrix of d^alpha with halo coupling folded in."""
    a, b = _check_multi_index(multi_index)
    key = ("D", a, b)
    if key not in atlas._cache:
        blocks = []
        for c in range(atlas.n_charts):
            Du = _derivative_matrix_1d(atlas.n, a, atlas.h[c, 0])
            Dv = _derivative_matrix_1d(atlas.n, b, atlas.h[c, 1])
            blocks.append(sps.kron(Du, Dv, format="csr"))
        D = sps.block_diag(blocks, format="csr")
        atlas._cache[key] = (D @ atlas.extension).tocsr()
    return atlas._cache[key]


def assemble_operator(atlas: GridAtlas, coefficient_fields: dict, symmetric: bool = False) -> SparseOperator:
    """Assemble sum_alpha c_alpha(x) d^alpha as a sparse matrix over owned nodes.

    ``coefficient_fields`` maps multi-indices ``(a, b)`` to coefficient vectors
    over owned nodes (or scalars).
    """
    N = atlas.n_owned
    total = sps.csr_matrix((N, N))
    for alpha, coeff in coefficient_fields.items():
        c = np.broadcast_to(np.asarray(coeff, dtype=float), (N,))
        if not np.all(np.isfinite(c)):
            k = int(np.flatnonzero(~np.isfinite(c))[0])
            chart, rem = divmod(k, atlas.n * atlas.n)
            i, j = divmod(rem, atlas.n)
            raise AssemblyError(f"non-finite coefficient for d^{tuple(alpha)} at chart {chart}, node ({i}, {j})")
        total = total + sps.diags(c) @ derivative_matrix(atlas, alpha)
    return SparseOperator(total.tocsr(), symmetric)


def apply_stencils(atlas: GridAtlas, coefficient_fields: dict, owned: np.ndarray) -> np.ndarray:
    """Stencil-wise evaluation of the same operator as ``assemble_operator``."""
    f = atlas.field(owned)
    out = np.zeros(atlas.n_owned)
    for alpha, coeff in coefficient_fields.items():
        out += np.asarray(coeff) * differentiate(atlas, f, alpha).owned
    return out
