"""Pointwise geometry of the normal graph Gamma_rho = {p + rho(p) nu(p)}.

All quantities are evaluated node by node from the reference geometry and
the height function with its first and second derivatives.  Heights carry
their derivatives either from closed-form expressions (``analytic_height``)
or from grid stencils (``discrete_height``); every derivative request is
recorded so callers can check which orders a computation consumed.

Index conventions follow :class:`~willmore_flow.surfaces.ChartGeometry`;
``W[k, i] = l^k_i`` is the Weingarten map and ``R = (I - rho W^T)^-1`` has
entries ``R[i, j] = r_i^j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMetricError, DomainError, InvalidParameterError, NearSingularError
from .grid import GridAtlas, derivative_matrix
from .surfaces import ChartGeometry, _inv2


def _einsum(spec, *ops):
    return np.einsum(spec, *ops, optimize=len(ops) > 2)


RESOLVENT_DET_FLOOR = 1e-10
FIRST = ((1, 0), (0, 1))
SECOND = ((2, 0), (1, 1), (0, 2))


@dataclass
class HeightField:
    """Height values on a node set plus a cache of their partial derivatives."""

    values: np.ndarray
    atlas: GridAtlas | None = None
    derivatives: dict = field(default_factory=dict)
    requested: set = field(default_factory=set)

    @property
    def source(self) -> str:
        return "discrete" if self.atlas is not None else "analytic"

    def d(self, multi_index) -> np.ndarray:
        a, b = multi_index
        self.requested.add(a + b)
        if a + b == 0:
            return self.values
        key = (a, b)
        if key not in self.derivatives:
            if self.atlas is None:
                raise InvalidParameterError(f"analytic height lacks derivative {key}")
            self.derivatives[key] = derivative_matrix(self.atlas, key) @ self.values
        return self.derivatives[key]

    def gradient(self) -> np.ndarray:
        return np.stack([self.d(k) for k in FIRST], axis=-1)

    def hessian(self) -> np.ndarray:
        duu, duv, dvv = (self.d(k) for k in SECOND)
        return np.stack([np.stack([duu, duv], -1), np.stack([duv, dvv], -1)], -2)

    @property
    def max_order_requested(self) -> int:
        return max(self.requested, default=0)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def discrete_height(atlas: GridAtlas, rho) -> HeightField:
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (atlas.n_owned,)).copy()
    return HeightField(rho, atlas)


def analytic_height(values, derivatives: dict) -> HeightField:
    """Height whose partial derivatives are supplied as closed-form arrays."""
    values = np.asarray(values, dtype=float)
    derivs = {tuple(k): np.broadcast_to(np.asarray(v, dtype=float), values.shape) for k, v in derivatives.items()}
    return HeightField(values, None, derivs)


def check_admissible(height: HeightField, tubular_a: float) -> None:
    s = height.sup()
    if not s < tubular_a:
        raise DomainError(f"height sup {s:.6g} not below tubular radius {tubular_a:.6g}")


def weingarten_derivative(geom: ChartGeometry) -> np.ndarray:
    """covW[..., j, k, i] = d_j l^k_i + Gamma^k_jh l^h_i - Gamma^h_ij l^k_h."""
    W, Gam = geom.l_mixed, geom.christoffel
    return (geom.dl_mixed
            + _einsum("...kjh,...hi->...jki", Gam, W)
            - _einsum("...hij,...kh->...jki", Gam, W))


def resolvent(height: HeightField, geom: ChartGeometry) -> np.ndarray:
    """R = (I - rho L)^-1 per node by Cramer's rule; L[i, j] = l_i^j."""
    rho = height.d((0, 0))[..., None, None]
    M = np.eye(2) - rho * np.swapaxes(geom.l_mixed, -1, -2)
    R, det = _inv2(M)
    if np.any(np.abs(det) < RESOLVENT_DET_FLOOR):
        k = int(np.argmin(np.abs(det)))
        raise NearSingularError(f"det(I - rho L) = {det[k]:.3g} at node {k}; height leaves the tubular neighborhood")
    return R


def slope(height: HeightField, geom: ChartGeometry, R: np.ndarray | None = None):
    """Covector alpha_i = r_i^j d_j rho, tangential components a^k, and beta."""
    if R is None:
        R = resolvent(height, geom)
    alpha = _einsum("...ij,...j->...i", R, height.gradient())
    a_vec = _einsum("...ki,...i->...k", geom.g_inv, alpha)
    beta = 1.0 / np.sqrt(1.0 + _einsum("...i,...i->...", alpha, a_vec))
    return alpha, a_vec, beta


@dataclass(frozen=True)
class CurvatureBundle:
    """All pointwise quantities of Gamma_rho at the nodes of a height field."""

    rho: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    a_vec: np.ndarray
    beta: np.ndarray
    gG: np.ndarray
    gG_inv: np.ndarray
    detG: np.ndarray
    lG: np.ndarray
    H: np.ndarray
    K: np.ndarray
    sigma_inv: np.ndarray
    gamma_sigma: np.ndarray
    nuG: np.ndarray
    tauG: np.ndarray
    lgl: np.ndarray  # l g^-1 l of the reference surface
    covW: np.ndarray

    @property
    def sqrt_detG(self) -> np.ndarray:
        return np.sqrt(self.detG)


def _forms(height, geom, R, alpha, a_vec, beta):
    rho = height.d((0, 0))
    grad = height.gradient()
    hess = height.hessian()
    g, l, W = geom.g, geom.l, geom.l_mixed
    lgl = _einsum("...ik,...kj->...ij", l, W)
    r2 = rho[..., None, None]
    gG = g - 2 * r2 * l + r2**2 * lgl + grad[..., :, None] * grad[..., None, :]
    gG_inv, detG = _inv2(gG)
    if np.any(~(detG > 0)):
        k = int(np.flatnonzero(~(detG > 0))[0])
        raise DegenerateMetricError(f"det g^Gamma = {detG[k]:.3g} <= 0 at node {k}")

    X = geom.tangents
    nu = geom.normal
    tauG = X - rho[..., None, None] * _einsum("...ki,...kx->...ix", W, X) + grad[..., :, None] * nu[..., None, :]
    nuG = beta[..., None] * (nu - _einsum("...k,...kx->...x", a_vec, X))

    covW = weingarten_derivative(geom)
    Gam = geom.christoffel
    WW = _einsum("...kh,...hj->...kj", W, W)
    Wt_alpha = _einsum("...ki,...k->...i", W, alpha)
    WWt_alpha = _einsum("...kj,...k->...j", WW, alpha)
    Wt_grad = _einsum("...kj,...k->...j", W, grad)
    bracket = (l - r2 * lgl + hess - _einsum("...kij,...k->...ij", Gam, grad)
               + Wt_alpha[..., :, None] * grad[..., None, :]
               + r2 * _einsum("...k,...jki->...ij", alpha, covW)
               + r2 * grad[..., :, None] * WWt_alpha[..., None, :]
               + grad[..., :, None] * Wt_grad[..., None, :])
    lG = beta[..., None, None] * bracket
    lG = 0.5 * (lG + np.swapaxes(lG, -1, -2))
    return rho, grad, hess, gG, gG_inv, detG, lG, nuG, tauG, lgl, covW


def fundamental_forms(height: HeightField, geom: ChartGeometry):
    """(g^Gamma, its inverse, l^Gamma, nu_Gamma, tau^Gamma) at every node."""
    R = resolvent(height, geom)
    alpha, a_vec, beta = slope(height, geom, R)
    _, _, _, gG, gG_inv, _, lG, nuG, tauG, _, _ = _forms(height, geom, R, alpha, a_vec, beta)
    return gG, gG_inv, lG, nuG, tauG


def _curvatures_from_forms(gG_inv, detG, lG):
    H = 0.5 * _einsum("...ij,...ji->...", gG_inv, lG)
    K = (lG[..., 0, 0] * lG[..., 1, 1] - lG[..., 0, 1] * lG[..., 1, 0]) / detG
    return H, K


def curvatures(height: HeightField, geom: ChartGeometry):
    """Mean curvature H = tr(G^-1 l^Gamma)/2 and Gauss curvature K = det(G^-1 l^Gamma)."""
    b = curvature_bundle(height, geom)
    return b.H, b.K


def _pullback(height, geom, gG_inv, lgl, grad, hess):
    """Christoffel symbols gamma^i_jk of sigma = g^Gamma, using analytic d g and d l."""
    rho = height.d((0, 0))
    g_inv, l = geom.g_inv, geom.l
    dg, dl = geom.dg, geom.dl
    dg_inv = -_einsum("...ab,...mbc,...cd->...mad", g_inv, dg, g_inv)
    dlgl = (_einsum("...mik,...kj->...mij", dl, _einsum("...ka,...aj->...kj", g_inv, l))
            + _einsum("...ia,...mab,...bj->...mij", l, dg_inv, l)
            + _einsum("...ik,...mkj->...mij", _einsum("...ia,...ak->...ik", l, g_inv), dl))
    r = rho[..., None, None, None]
    dr = grad[..., :, None, None]
    # d_m (d_i rho d_j rho) = d_im rho d_j rho + d_i rho d_jm rho
    dgrad2 = (_einsum("...im,...j->...mij", hess, grad) + _einsum("...i,...jm->...mij", grad, hess))
    dsigma = (dg - 2 * dr * l[..., None, :, :] - 2 * r * dl
              + 2 * r * dr * lgl[..., None, :, :] + r**2 * dlgl + dgrad2)
    # gamma^i_jk = 1/2 sigma^il (d_j s_kl + d_k s_jl - d_l s_jk)
    t = (_einsum("...jkl->...jkl", dsigma) + np.swapaxes(dsigma, -3, -2) - np.moveaxis(dsigma, -3, -1))
    # t[..., j, k, l] = d_j s_kl + d_k s_jl - d_l s_jk
    gamma = 0.5 * _einsum("...il,...jkl->...ijk", gG_inv, t)
    return gamma


def pullback_metric(height: HeightField, geom: ChartGeometry):
    """(sigma^{jk}, gamma^i_jk) for sigma = Psi_rho^* g_Gamma (identified with g^Gamma)."""
    b = curvature_bundle(height, geom)
    return b.sigma_inv, b.gamma_sigma


def curvature_bundle(height: HeightField, geom: ChartGeometry) -> CurvatureBundle:
    if height.values.shape != geom.sqrt_det_g.shape:
        raise InvalidParameterError("height and geometry node sets differ")
    R = resolvent(height, geom)
    alpha, a_vec, beta = slope(height, geom, R)
    rho, grad, hess, gG, gG_inv, detG, lG, nuG, tauG, lgl, covW = _forms(height, geom, R, alpha, a_vec, beta)
    H, K = _curvatures_from_forms(gG_inv, detG, lG)
    gamma = _pullback(height, geom, gG_inv, lgl, grad, hess)
    return CurvatureBundle(rho, grad, hess, R, alpha, a_vec, beta, gG, gG_inv, detG, lG, H, K,
                           gG_inv, gamma, nuG, tauG, lgl, covW)
