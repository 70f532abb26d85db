"""Evolution operators of the normal-graph Willmore flow.

The mean curvature is split as ``H = P1(rho) rho + F1(rho)`` with ``P1`` a
second-order operator without zeroth-order term.  The flow reads
``rho_t + P(rho) rho = F(rho)`` with

* ``P(rho) = (1/beta) Lap_rho P1(rho) + R(rho)``
* ``F(rho) = -(1/beta) Lap_rho F1 + R(rho) rho - (2/beta) H (H^2 - K)``

and the remainder ``R(rho) rho = (1/2beta) Lap_rho[beta T1] - (rho/2beta)
Lap_rho[beta T2]`` where ``T1 = tr(G^-1 l)``, ``T2 = tr(G^-1 l g^-1 l)``.

``R`` is affine in its argument: only the trailing ``rho`` of the second
term is replaced by the argument, so ``R(rho) w = R_src + r0 w``.  The
matrix ``P_mat`` holds the linear part and ``P(rho) rho = P_mat rho + R_src``.

Every application of ``Lap_rho`` uses the same assembled sparse matrix, so
``P(rho) rho - F(rho)`` reproduces the direct right-hand side
``(1/beta)(Lap_rho H + 2 H (H^2 - K))`` up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .curvature import CurvatureBundle, HeightField, curvature_bundle, discrete_height
from .errors import DegenerateMetricError, EllipticityError
from .grid import GridAtlas, SparseOperator, assemble_operator
from .surfaces import ChartGeometry


def _einsum(spec, *ops):
    return np.einsum(spec, *ops, optimize=len(ops) > 2)


BETA_FLOOR = 1e-8


def _check_beta(beta: np.ndarray) -> None:
    if np.any(beta < BETA_FLOOR):
        k = int(np.argmin(beta))
        raise DegenerateMetricError(f"beta = {beta[k]:.3g} below floor at node {k}")


def laplacian_coefficients(bundle: CurvatureBundle) -> dict:
    """Stencil spec of Lap_rho = sigma^jk (d_jk - gamma^i_jk d_i)."""
    s = bundle.sigma_inv
    first = -_einsum("...jk,...ijk->...i", s, bundle.gamma_sigma)
    return {
        (2, 0): s[..., 0, 0],
        (1, 1): s[..., 0, 1] + s[..., 1, 0],
        (0, 2): s[..., 1, 1],
        (1, 0): first[..., 0],
        (0, 1): first[..., 1],
    }


def laplace_beltrami(bundle: CurvatureBundle, f=None, f_derivs: dict | None = None,
                     atlas: GridAtlas | None = None) -> np.ndarray:
    """Lap_rho f, pointwise from supplied derivatives or by grid stencils."""
    coeffs = laplacian_coefficients(bundle)
    if f_derivs is not None:
        return sum(c * f_derivs[k] for k, c in coeffs.items())
    return laplacian_operator(atlas, bundle) @ np.asarray(f, dtype=float)


def laplacian_operator(atlas: GridAtlas, bundle: CurvatureBundle) -> SparseOperator:
    return assemble_operator(atlas, laplacian_coefficients(bundle))


def p1_coefficients(bundle: CurvatureBundle, geom: ChartGeometry) -> dict:
    """Stencil spec of P1(rho): (beta/2){G^ij d_ij + c^l d_l}."""
    Gi = bundle.gG_inv
    W, Gam, R = geom.l_mixed, geom.christoffel, bundle.r
    rho, grad = bundle.rho, bundle.grad
    WW = _einsum("...kh,...hj->...kj", W, W)
    # G^ij (l^l_j d_i rho - Gamma^l_ij)
    c = _einsum("...ij,...lj,...i->...l", Gi, W, grad) - _einsum("...ij,...lij->...l", Gi, Gam)
    # G^ij r_k^l [l^k_i d_j rho + covW_jki rho + (WW)^k_j rho d_i rho]
    inner = (_einsum("...ki,...j->...kij", W, grad)
             + rho[..., None, None, None] * _einsum("...jki->...kij", bundle.covW)
             + rho[..., None, None, None] * _einsum("...kj,...i->...kij", WW, grad))
    c = c + _einsum("...ij,...kl,...kij->...l", Gi, R, inner)
    hb = 0.5 * bundle.beta
    return {
        (2, 0): hb * Gi[..., 0, 0],
        (1, 1): hb * (Gi[..., 0, 1] + Gi[..., 1, 0]),
        (0, 2): hb * Gi[..., 1, 1],
        (1, 0): hb * c[..., 0],
        (0, 1): hb * c[..., 1],
    }


def apply_pointwise(coeffs: dict, height: HeightField) -> np.ndarray:
    return sum(c * height.d(k) for k, c in coeffs.items())


def split_mean_curvature(bundle: CurvatureBundle, geom: ChartGeometry):
    """(P1 stencil spec, F1) with F1 = (beta/2) tr(G^-1 (l - rho l g^-1 l))."""
    rho = bundle.rho[..., None, None]
    F1 = 0.5 * bundle.beta * _einsum("...ij,...ji->...", bundle.gG_inv, geom.l - rho * bundle.lgl)
    return p1_coefficients(bundle, geom), F1


def trace_fields(bundle: CurvatureBundle, geom: ChartGeometry):
    T1 = _einsum("...ij,...ji->...", bundle.gG_inv, geom.l)
    T2 = _einsum("...ij,...ji->...", bundle.gG_inv, bundle.lgl)
    return T1, T2


def remainder(bundle: CurvatureBundle, geom: ChartGeometry, lap: SparseOperator):
    """(R_src, r0, R_field): R(rho) w = R_src + r0 w and R_field = R(rho) rho."""
    beta = bundle.beta
    T1, T2 = trace_fields(bundle, geom)
    R_src = (lap @ (beta * T1)) / (2 * beta)
    r0 = -(lap @ (beta * T2)) / (2 * beta)
    return R_src, r0, R_src + r0 * bundle.rho


def symbol_constant(bundle: CurvatureBundle, n_directions: int = 64) -> float:
    """min over nodes and unit covectors of sigma*(xi,xi) g_Gamma*(xi,xi).

    This is the principal symbol of P up to the constant factor 1/2 coming
    from H = tr/2.  Plane-wave directions are sampled and the exact minimum
    from the eigenvalues is taken when smaller.
    """
    phi = np.linspace(0.0, np.pi, n_directions, endpoint=False)
    xi = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    qs = _quadratic_form(bundle.sigma_inv, xi)
    qg = _quadratic_form(bundle.gG_inv, xi)
    sampled = float(np.min(qs * qg))
    exact = float(np.min(_min_eig(bundle.sigma_inv) * _min_eig(bundle.gG_inv)))
    return min(sampled, exact)


def _quadratic_form(m, xi):
    a, b, c = m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]
    x, y = xi[:, 0], xi[:, 1]
    return a[:, None] * x**2 + 2 * b[:, None] * x * y + c[:, None] * y**2


def _min_eig(m):
    a, b, c = m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def rhs_direct(bundle: CurvatureBundle, lap: SparseOperator) -> np.ndarray:
    """G(rho) = (1/beta)(Lap_rho H + 2 H (H^2 - K))."""
    H, K = bundle.H, bundle.K
    return ((lap @ H) + 2 * H * (H * H - K)) / bundle.beta


def normal_velocity(bundle: CurvatureBundle, rho_t) -> np.ndarray:
    return bundle.beta * np.asarray(rho_t, dtype=float)


def euler_lagrange_residual(bundle: CurvatureBundle, lap: SparseOperator, atlas: GridAtlas | None = None):
    """Field Lap_Gamma H + 2H^3 - 2HK (pulled back) and its blended sup norm."""
    H, K = bundle.H, bundle.K
    res = (lap @ H) + 2 * H * (H * H - K)
    sup = atlas.blended_sup(res) if atlas is not None else float(np.max(np.abs(res)))
    return res, sup


@dataclass
class OperatorSplit:
    bundle: CurvatureBundle
    height: HeightField
    lap: SparseOperator
    P1: dict
    P1_matrix: SparseOperator
    P1_rho: np.ndarray
    F1: np.ndarray
    R_src: np.ndarray
    r0: np.ndarray
    R_field: np.ndarray
    P: SparseOperator
    F: np.ndarray
    G_direct: np.ndarray
    symbol_c: float

    @property
    def P_rho(self) -> np.ndarray:
        """P(rho) rho, including the affine part of R."""
        return self.P @ self.height.values + self.R_src


def stiff_P(atlas: GridAtlas, bundle: CurvatureBundle, lap: SparseOperator, P1_matrix: SparseOperator,
            r0: np.ndarray, c: float | None = None) -> SparseOperator:
    """Assembled linear part of P(rho): diag(1/beta) Lap P1 + diag(r0)."""
    if c is None:
        c = symbol_constant(bundle)
    if not c > 0:
        raise EllipticityError(f"principal symbol of P not positive (c = {c:.3g})")
    M = sps.diags(1.0 / bundle.beta) @ (lap.matrix @ P1_matrix.matrix) + sps.diags(r0)
    return SparseOperator(M.tocsr())


def forcing_F(bundle: CurvatureBundle, lap: SparseOperator, F1: np.ndarray, R_field: np.ndarray) -> np.ndarray:
    H, K = bundle.H, bundle.K
    return -(lap @ F1) / bundle.beta + R_field - 2 * H * (H * H - K) / bundle.beta


def build_split(atlas: GridAtlas, rho, height: HeightField | None = None) -> OperatorSplit:
    """Evaluate every operator of the flow at the grid height ``rho``."""
    if height is None:
        height = discrete_height(atlas, rho)
    geom = atlas.geometry
    bundle = curvature_bundle(height, geom)
    _check_beta(bundle.beta)
    lap = laplacian_operator(atlas, bundle)
    P1, F1 = split_mean_curvature(bundle, geom)
    P1_matrix = assemble_operator(atlas, P1)
    P1_rho = P1_matrix @ height.values
    R_src, r0, R_field = remainder(bundle, geom, lap)
    c = symbol_constant(bundle)
    P = stiff_P(atlas, bundle, lap, P1_matrix, r0, c)
    F = forcing_F(bundle, lap, F1, R_field)
    G = rhs_direct(bundle, lap)
    return OperatorSplit(bundle, height, lap, P1, P1_matrix, P1_rho, F1, R_src, r0, R_field, P, F, G, c)
