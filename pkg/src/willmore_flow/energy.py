"""Willmore energy, area and Gauss-Bonnet diagnostics of Gamma_rho."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .curvature import CurvatureBundle
from .grid import GridAtlas, integrate


@dataclass(frozen=True)
class EnergyReport:
    t: float
    W: float
    area: float
    gb_defect: float
    rho_sup: float
    el_residual_sup: float

    def as_dict(self) -> dict:
        return asdict(self)


def willmore_energy(bundle: CurvatureBundle, atlas: GridAtlas) -> float:
    """W = int H^2 dsigma over Gamma_rho."""
    return integrate(atlas, bundle.H**2, bundle.sqrt_detG)


def surface_area(bundle: CurvatureBundle, atlas: GridAtlas) -> float:
    return integrate(atlas, 1.0, bundle.sqrt_detG)


def gauss_bonnet_defect(bundle: CurvatureBundle, atlas: GridAtlas, euler_char: int) -> float:
    """int K dsigma - 2 pi chi."""
    return integrate(atlas, bundle.K, bundle.sqrt_detG) - 2.0 * math.pi * euler_char


def energy_report(bundle: CurvatureBundle, atlas: GridAtlas, t: float = 0.0,
                  el_residual_sup: float = float("nan")) -> EnergyReport:
    return EnergyReport(
        t=float(t),
        W=willmore_energy(bundle, atlas),
        area=surface_area(bundle, atlas),
        gb_defect=gauss_bonnet_defect(bundle, atlas, atlas.surface.euler_char),
        rho_sup=float(np.max(np.abs(bundle.rho))),
        el_residual_sup=float(el_residual_sup),
    )
