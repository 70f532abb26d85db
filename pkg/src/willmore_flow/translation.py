"""Truncated translations in space and time, and a smoothness probe.

A :class:`TruncatedTranslation` shifts chart coordinates near a centre
point, ``theta_mu(x) = x + chi(x) mu``, with ``chi = 1`` on the ball of
radius ``eps0`` and ``chi = 0`` outside radius ``2 eps0``.  Pulling a grid
function back by the induced surface diffeomorphism only changes values at
nodes that map into the support of ``chi``; all other nodes are copied
bit for bit.

A :class:`TimeShift` does the same in time with ``t -> t + xi(t) lambda``.
Combining both on a sampled trajectory gives ``u_{lambda,mu}``; its time
derivative differs from the transformed ``u_t`` by a commutator ``B`` that
vanishes when ``mu = 0``.

:func:`smoothness_probe` fits a bivariate polynomial to
``(lambda, m) -> u_{lambda, m e}(t*, q*)`` and reports how fast the
coefficients decay with total degree.  Geometric decay indicates a
trajectory that is smooth jointly in time and space near the probe point;
it is an indicator, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, InadmissibleShiftError, InvalidParameterError, InversionError, RangeError
from .grid import GridAtlas, interpolate_chart, lagrange_weights
from .surfaces import smooth_step, smooth_step_derivative

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-14
MAX_STEP_SLOPE = 2.0  # sup of smooth_step'
WINDOW_ORDER = 5
FD_STEP_FRACTION = 1e-3
RESOLVE_SIGMAS = 3.0
FD5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
FD5_OFFSETS = np.arange(-2, 3)


def plateau_cutoff(r, inner: float, outer: float):
    """1 for r <= inner, 0 for r >= outer, C-infinity in between."""
    return 1.0 - smooth_step((np.asarray(r, dtype=float) - inner) / (outer - inner))


def plateau_cutoff_derivative(r, inner: float, outer: float):
    return -smooth_step_derivative((np.asarray(r, dtype=float) - inner) / (outer - inner)) / (outer - inner)


@dataclass
class TruncatedTranslation:
    """theta_mu on the chart ``chart_id`` around ``center`` with radius ladder eps0..4 eps0."""

    atlas: GridAtlas
    chart_id: int
    center: tuple[float, float]
    eps0: float
    mu: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.eps0 > 0:
            raise InvalidParameterError("eps0 must be positive")
        chart = self.atlas.surface.charts[self.chart_id]
        c = np.asarray(self.center, dtype=float)
        for ax in range(2):
            if not chart.periodic[ax]:
                if c[ax] - 4 * self.eps0 < chart.lower[ax] or c[ax] + 4 * self.eps0 > chart.upper[ax]:
                    raise InvalidParameterError("ball of radius 4 eps0 leaves the chart domain")
            elif 8 * self.eps0 >= chart.upper[ax] - chart.lower[ax]:
                raise InvalidParameterError("ball of radius 4 eps0 wraps around a periodic axis")
        self.mu = tuple(float(m) for m in self.mu)
        if math.hypot(*self.mu) > self.r_max * (1 + 1e-12):
            raise InadmissibleShiftError(f"|mu| = {math.hypot(*self.mu):.3g} exceeds r_max = {self.r_max:.3g}")

    @property
    def lipschitz_chi(self) -> float:
        return MAX_STEP_SLOPE / self.eps0

    @property
    def r_max(self) -> float:
        return 0.5 / self.lipschitz_chi

    def with_mu(self, mu) -> "TruncatedTranslation":
        return TruncatedTranslation(self.atlas, self.chart_id, self.center, self.eps0, tuple(mu))

    def _offset(self, u, v):
        chart = self.atlas.surface.charts[self.chart_id]
        d = [np.asarray(u, dtype=float) - self.center[0], np.asarray(v, dtype=float) - self.center[1]]
        for ax in range(2):
            if chart.periodic[ax]:
                period = chart.upper[ax] - chart.lower[ax]
                d[ax] = (d[ax] + period / 2) % period - period / 2
        return d[0], d[1]

    def chi(self, u, v):
        du, dv = self._offset(u, v)
        return plateau_cutoff(np.hypot(du, dv), self.eps0, 2 * self.eps0)

    def chi_gradient(self, u, v):
        du, dv = self._offset(u, v)
        r = np.hypot(du, dv)
        dr = plateau_cutoff_derivative(r, self.eps0, 2 * self.eps0)
        safe = np.where(r > 0, r, 1.0)
        return dr * du / safe, dr * dv / safe

    def zeta(self, u, v):
        du, dv = self._offset(u, v)
        return plateau_cutoff(np.hypot(du, dv), 3 * self.eps0, 4 * self.eps0)

    def theta(self, u, v):
        c = self.chi(u, v)
        return u + c * self.mu[0], v + c * self.mu[1]

    def theta_inverse(self, y_u, y_v):
        """Solve x + chi(x) mu = y by Newton's method."""
        y_u = np.asarray(y_u, dtype=float)
        y_v = np.asarray(y_v, dtype=float)
        xu, xv = y_u.copy(), y_v.copy()
        m0, m1 = self.mu
        for _ in range(NEWTON_MAX_ITER):
            c = self.chi(xu, xv)
            ru = xu + c * m0 - y_u
            rv = xv + c * m1 - y_v
            if np.max(np.abs(ru), initial=0.0) <= NEWTON_TOL and np.max(np.abs(rv), initial=0.0) <= NEWTON_TOL:
                return xu, xv
            gu, gv = self.chi_gradient(xu, xv)
            # J = I + mu grad(chi)^T ; det = 1 + mu . grad(chi)
            det = 1.0 + m0 * gu + m1 * gv
            su = ((1.0 + m1 * gv) * ru - m0 * gv * rv) / det
            sv = (-m1 * gu * ru + (1.0 + m0 * gu) * rv) / det
            xu, xv = xu - su, xv - sv
        raise InversionError(f"Newton inversion of theta did not converge in {NEWTON_MAX_ITER} iterations")

    def _affected(self, mapper):
        """Owned nodes whose image under the surface map differs from themselves.

        Returns (global indices, centre-chart coordinates of the mapped points).
        """
        atlas = self.atlas
        coords = atlas.all_owned_coords()
        idx_all, pu_all, pv_all = [], [], []
        centre = atlas.surface.charts[self.chart_id]
        for c, chart in enumerate(atlas.surface.charts):
            sl = atlas.chart_slice(c)
            u, v = coords[sl, 0], coords[sl, 1]
            if c == self.chart_id:
                cu, cv = u, v
            else:
                cu, cv = centre.coordinates(chart.position(u, v))
                cu = np.asarray(cu, dtype=float)
                cv = np.asarray(cv, dtype=float)
            finite = np.isfinite(cu) & np.isfinite(cv)
            cu_s = np.where(finite, cu, self.center[0] + 10 * self.eps0 + 1.0)
            cv_s = np.where(finite, cv, self.center[1])
            du, dv = self._offset(cu_s, cv_s)
            near = finite & (np.hypot(du, dv) < 2 * self.eps0 + 1e-12)
            if not np.any(near):
                continue
            mu_, mv_ = mapper(cu_s[near], cv_s[near])
            moved = (mu_ != cu_s[near]) | (mv_ != cv_s[near])
            sel = np.flatnonzero(near)[moved]
            idx_all.append(sl.start + sel)
            pu_all.append(mu_[moved])
            pv_all.append(mv_[moved])
        if not idx_all:
            return np.array([], dtype=int), np.array([]), np.array([])
        return np.concatenate(idx_all), np.concatenate(pu_all), np.concatenate(pv_all)

    def _compose(self, owned: np.ndarray, mapper) -> np.ndarray:
        owned = np.asarray(owned, dtype=float)
        if self.mu == (0.0, 0.0):
            return owned.copy()
        out = owned.copy()
        idx, pu, pv = self._affected(mapper)
        if idx.size:
            f = self.atlas.field(owned)
            out[idx] = interpolate_chart(self.atlas, f, self.chart_id, pu, pv)
        return out

    def apply(self, owned: np.ndarray) -> np.ndarray:
        """Pullback T_mu u = u o Theta_mu on grid data."""
        return self._compose(owned, self.theta)

    def apply_inverse(self, owned: np.ndarray) -> np.ndarray:
        """Push-forward u o Theta_mu^-1."""
        return self._compose(owned, self.theta_inverse)


@dataclass
class TimeShift:
    """varrho_lambda(t) = t + xi(t) lambda, xi = 1 near t0, 0 outside (t0 - 2 eps, t0 + 2 eps)."""

    t0: float
    eps0: float
    lam: float = 0.0

    def __post_init__(self):
        if not self.eps0 > 0:
            raise InvalidParameterError("eps0 must be positive")
        if abs(self.lam) > self.lambda_max * (1 + 1e-12):
            raise InadmissibleShiftError(f"|lambda| = {abs(self.lam):.3g} exceeds {self.lambda_max:.3g}")

    @property
    def lambda_max(self) -> float:
        return 0.5 * self.eps0 / MAX_STEP_SLOPE

    def xi(self, t):
        return plateau_cutoff(np.abs(np.asarray(t, dtype=float) - self.t0), self.eps0, 2 * self.eps0)

    def xi_prime(self, t):
        d = np.asarray(t, dtype=float) - self.t0
        return plateau_cutoff_derivative(np.abs(d), self.eps0, 2 * self.eps0) * np.sign(d)

    def __call__(self, t):
        if self.lam == 0.0:
            return np.asarray(t, dtype=float)
        return np.asarray(t, dtype=float) + self.xi(t) * self.lam


@dataclass
class TimeWindow:
    """One fixed Lagrange polynomial in time through consecutive samples.

    Inside a window ``u`` is a polynomial in ``t`` and ``u_t`` is its exact
    derivative, so compositions with smooth time maps stay smooth.
    """

    t_start: float
    dt: float
    first: int
    values: np.ndarray  # (order + 1, N)
    full_range: tuple[float, float]

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(len(self.values), dtype=float)

    def _s(self, t: float) -> float:
        lo, hi = self.full_range
        if t < lo - 1e-9 * self.dt or t > hi + 1e-9 * self.dt:
            raise RangeError(f"time {t:.6g} outside sampled range [{lo:.6g}, {hi:.6g}]")
        return (t - self.t_start) / self.dt - self.first

    def at(self, t: float) -> np.ndarray:
        s = self._s(t)
        k = int(round(s))
        if abs(s - k) <= 1e-12 * max(1.0, abs(s)) and 0 <= k < len(self.values):
            return self.values[k].copy()
        w = lagrange_weights(np.array(s), self.offsets)
        return np.tensordot(w, self.values, axes=(0, 0))

    def u_t(self, t: float) -> np.ndarray:
        s = self._s(t)
        w = _lagrange_derivative_weights(s, self.offsets)
        return np.tensordot(w, self.values, axes=(0, 0)) / self.dt


def _lagrange_derivative_weights(s: float, nodes: np.ndarray) -> np.ndarray:
    """d/ds of the Lagrange basis polynomials on ``nodes`` at ``s``."""
    n = len(nodes)
    out = np.zeros(n)
    for j in range(n):
        denom = np.prod([nodes[j] - nodes[m] for m in range(n) if m != j])
        total = 0.0
        for i in range(n):
            if i == j:
                continue
            total += np.prod([s - nodes[m] for m in range(n) if m not in (i, j)])
        out[j] = total / denom
    return out


@dataclass
class SampledTrajectory:
    """Uniformly sampled grid trajectory; evaluation goes through time windows."""

    t_start: float
    dt: float
    values: np.ndarray  # (n_samples, N)
    order: int = WINDOW_ORDER

    @classmethod
    def from_samples(cls, times, values, order: int = WINDOW_ORDER) -> "SampledTrajectory":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        steps = np.diff(times)
        if times.size < order + 1 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise InvalidParameterError(f"need at least {order + 1} uniformly spaced samples")
        return cls(float(times[0]), float(steps[0]), values, order)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * (len(self.values) - 1)

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(len(self.values))

    def window(self, t: float) -> TimeWindow:
        """The window of ``order + 1`` samples centred as well as possible on ``t``."""
        if t < self.t_start - 1e-9 * self.dt or t > self.t_end + 1e-9 * self.dt:
            raise RangeError(f"time {t:.6g} outside sampled range [{self.t_start:.6g}, {self.t_end:.6g}]")
        m = self.order + 1
        s = (t - self.t_start) / self.dt
        first = min(max(int(math.floor(s)) - (m - 1) // 2, 0), len(self.values) - m)
        return TimeWindow(self.t_start, self.dt, first, self.values[first:first + m],
                          (self.t_start, self.t_end))

    def at(self, t: float) -> np.ndarray:
        return self.window(t).at(t)

    def u_t(self, t: float) -> np.ndarray:
        return self.window(t).u_t(t)


@dataclass
class SpaceTimeTransform:
    """u_{lambda,mu}(t) = T_{xi(t) mu} u(varrho_lambda(t))."""

    space: TruncatedTranslation
    time: TimeShift

    @property
    def mu(self):
        return self.space.mu

    @property
    def lam(self):
        return self.time.lam

    def spatial_at(self, t: float) -> TruncatedTranslation:
        s = float(self.time.xi(t))
        return self.space.with_mu((s * self.mu[0], s * self.mu[1]))

    def value(self, traj: "SampledTrajectory | TimeWindow", t: float) -> np.ndarray:
        u = traj.at(float(self.time(t)))
        if self.mu == (0.0, 0.0) or float(self.time.xi(t)) == 0.0:
            return u
        return self.spatial_at(t).apply(u)

    def transformed_ut(self, traj: "SampledTrajectory | TimeWindow", t: float) -> np.ndarray:
        ut = traj.u_t(float(self.time(t)))
        if self.mu == (0.0, 0.0) or float(self.time.xi(t)) == 0.0:
            return ut
        return self.spatial_at(t).apply(ut)


def apply_theta(tt: TruncatedTranslation, owned: np.ndarray) -> np.ndarray:
    return tt.apply(owned)


def apply_theta_inverse(tt: TruncatedTranslation, owned: np.ndarray) -> np.ndarray:
    return tt.apply_inverse(owned)


def transform_trajectory(traj: SampledTrajectory, transform: SpaceTimeTransform, times=None) -> np.ndarray:
    """Samples of u_{lambda,mu} at ``times`` (default: the trajectory's own sample times)."""
    times = traj.times() if times is None else np.asarray(times, dtype=float)
    return np.stack([transform.value(traj, float(t)) for t in times])


def commutator_B(traj: SampledTrajectory, transform: SpaceTimeTransform, t: float,
                 step: float | None = None) -> np.ndarray:
    """B = d/dt[u_{lambda,mu}](t) - (1 + xi'(t) lambda) T_{lambda,mu} u_t(t).

    The time derivative is a five-point difference of step ``step``
    (default: a small fraction of the time cutoff radius).  All evaluations
    share one time window anchored at varrho(t).
    """
    h = transform.time.eps0 * FD_STEP_FRACTION if step is None else float(step)
    ts = t + h * FD5_OFFSETS
    if ts[0] < traj.t_start or ts[-1] > traj.t_end:
        raise RangeError("not enough time samples around t for the five-point derivative")
    win = traj.window(float(transform.time(t)))
    vals = [transform.value(win, float(s)) for s in ts]
    deriv = sum(w * v for w, v in zip(FD5, vals) if w != 0.0) / h
    factor = 1.0 + float(transform.time.xi_prime(t)) * transform.lam
    return deriv - factor * transform.transformed_ut(win, t)


@dataclass
class ProbeReport:
    degree: int
    coefficient_max: list  # per total degree
    ratios: list  # (c_d / sup|s|)^(1/d) for d = 1..degree; 0 where c_d is unresolved
    floor: float
    condition: float
    residual_rms: float
    samples: int

    def decays_through(self, d_max: int, d_min: int = 2) -> bool:
        return all(r < 1.0 for r in self.ratios[d_min - 1:d_max])

    def as_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coefficient_max": self.coefficient_max,
            "ratios": self.ratios,
            "floor": self.floor,
            "condition": self.condition,
            "residual_rms": self.residual_rms,
            "samples": self.samples,
        }


def _monomials(degree: int):
    return [(i, d - i) for d in range(degree + 1) for i in range(d, -1, -1)]


def fit_polynomial(x, y, s, degree: int, fit_tol: float = 1e-9, max_condition: float = 1e12) -> ProbeReport:
    """Least-squares total-degree fit of s(x, y) on [-1, 1]^2 and per-degree decay summary."""
    if degree < 1 or degree > 8:
        raise InvalidParameterError("degree must be in 1..8")
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    mons = _monomials(degree)
    # drop monomials in a variable that does not vary (degenerate 1-D grid)
    varies = (np.ptp(x) > 0, np.ptp(y) > 0)
    mons = [(i, j) for i, j in mons if (i == 0 or varies[0]) and (j == 0 or varies[1])]
    A = np.stack([x**i * y**j for i, j in mons], axis=1)
    cond = float(np.linalg.cond(A))
    if not cond <= max_condition:
        raise FitError(f"polynomial fit ill-conditioned (cond = {cond:.3g})")
    coef, *_ = np.linalg.lstsq(A, s, rcond=None)
    resid = s - A @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    # standard error of each coefficient; unresolved coefficients count as zero
    dof = max(s.size - len(mons), 1)
    sigma = float(np.sqrt(np.sum(resid**2) / dof))
    stderr = sigma * np.sqrt(np.clip(np.diag(np.linalg.pinv(A.T @ A)), 0.0, None))
    scale = max(float(np.max(np.abs(coef))), float(np.max(np.abs(s))) if s.size else 0.0, 1e-300)
    floor = fit_tol * scale
    cmax = [0.0] * (degree + 1)
    for (i, j), c, se in zip(mons, coef, stderr):
        if abs(c) > max(floor, RESOLVE_SIGMAS * se):
            cmax[i + j] = max(cmax[i + j], abs(float(c)))
    # root-test ratios (c_d / M)^(1/d) with M = sup of the samples; a function
    # analytic well beyond the unit box keeps them below 1
    sup = float(np.max(np.abs(s))) if s.size else 0.0
    ratios = [0.0 if cmax[d] == 0.0 else (math.inf if sup == 0.0 else (cmax[d] / sup) ** (1.0 / d))
              for d in range(1, degree + 1)]
    return ProbeReport(degree, cmax, ratios, floor, cond, rms, int(s.size))


def probe_samples(n: int) -> np.ndarray:
    """Chebyshev points on [-1, 1] (including both ends)."""
    if n == 1:
        return np.zeros(1)
    return -np.cos(np.pi * np.arange(n) / (n - 1))


def smoothness_probe(traj: SampledTrajectory, transform: SpaceTimeTransform, t_star: float,
                     node_index: int, lambda_radius: float, mu_radius: float,
                     direction=(1.0, 0.0), degree: int = 6, points: int | None = None,
                     fit_tol: float = 1e-9) -> ProbeReport:
    """Decay of polynomial coefficients of (lambda, m) -> u_{lambda, m e}(t*, q*)."""
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    npts = points or degree + 4
    ls = probe_samples(npts if lambda_radius > 0 else 1)
    ms = probe_samples(npts if mu_radius > 0 else 1)
    win = traj.window(t_star)
    X, Y, S = [], [], []
    for a in ls:
        tshift = TimeShift(transform.time.t0, transform.time.eps0, a * lambda_radius)
        for b in ms:
            space = transform.space.with_mu(tuple(b * mu_radius * e))
            val = SpaceTimeTransform(space, tshift).value(win, t_star)[node_index]
            X.append(a)
            Y.append(b)
            S.append(val)
    return fit_polynomial(X, Y, S, degree, fit_tol)
