"""Linearly implicit time integration of rho_t + P(rho) rho = F(rho).

One step freezes the operators at the current height and solves

    (I + dt P_mat) rho_new = rho + dt (F - R_src)

with restarted GMRES.  The preconditioner is an exact sparse LU of the
same system written in mixed form (unknowns rho and P1 rho), which keeps
the stencils second order and the factorization cheap; it is cached and
reused while it keeps GMRES fast.

Step size is controlled by step doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spl

from .energy import EnergyReport, energy_report
from .errors import (
    DegenerateMetricError,
    EllipticityError,
    NearSingularError,
    WillmoreError,
)
from .grid import GridAtlas
from .operators import OperatorSplit, build_split, euler_lagrange_residual

EVENT_KINDS = ("reached_t_end", "equilibrium", "tubular_exit", "degenerate_metric",
               "solver_failure", "dt_underflow")
DT_MIN = 1e-12
KRYLOV_RTOL = 1e-10
KRYLOV_MAXITER = 500
PRECOND_MAX_ITERS = 25


class SolverFailure(WillmoreError):
    pass


class TubularExit(WillmoreError):
    pass


@dataclass(frozen=True)
class FlowEvent:
    kind: str
    t: float
    message: str = ""

    def as_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t, "message": self.message}


@dataclass(frozen=True)
class FlowParams:
    dt0: float = 1e-4
    t_end: float = 0.01
    atol: float = 1e-8
    rtol: float = 1e-6
    output_every: int = 1
    equilibrium_tol: float | None = None
    max_steps: int = 100000
    adaptive: bool = True


@dataclass
class FlowState:
    t: float
    rho: np.ndarray
    dt: float
    split: OperatorSplit | None = None
    report: EnergyReport | None = None
    step: int = 0


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)  # rho snapshots (owned vectors)
    dts: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    events: list = field(default_factory=list)
    rejected: int = 0
    max_energy_increase: float = 0.0
    energy_monotone: bool = True

    @property
    def terminal(self) -> FlowEvent | None:
        return self.events[-1] if self.events else None


class _Preconditioner:
    """Cached LU of the mixed-form system [[I + dt diag(r0), dt B^-1 Lap], [-P1, I]]."""

    def __init__(self):
        self.lu = None
        self.dt = None
        self.factorizations = 0

    def needs_refresh(self, dt: float, last_iters: int) -> bool:
        if self.lu is None:
            return True
        ratio = dt / self.dt
        return ratio < 0.3 or ratio > 3.0 or last_iters > PRECOND_MAX_ITERS

    def refresh(self, split: OperatorSplit, dt: float) -> None:
        N = split.height.values.size
        I = sps.identity(N, format="csr")
        lap_b = sps.diags(1.0 / split.bundle.beta) @ split.lap.matrix
        B = sps.bmat([[I + dt * sps.diags(split.r0), dt * lap_b],
                      [-split.P1_matrix.matrix, I]], format="csc")
        self.lu = spl.splu(B)
        self.dt = dt
        self.factorizations += 1
        self.N = N

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.concatenate([r, np.zeros(self.N)]))[: self.N]


class Integrator:
    """Holds the atlas, preconditioner cache and solver statistics."""

    def __init__(self, atlas: GridAtlas):
        self.atlas = atlas
        self.precond = _Preconditioner()
        self.last_iters = 0
        self.total_iters = 0

    def split(self, rho: np.ndarray) -> OperatorSplit:
        return build_split(self.atlas, rho)

    def solve(self, split: OperatorSplit, dt: float, precond_dt: float | None = None) -> np.ndarray:
        """Solve (I + dt P_mat) x = rho + dt (F - R_src).

        Rows are scaled by the diagonal before GMRES so that the relative
        residual tolerance is attainable where metric coefficients are large.
        """
        rho = split.height.values
        N = rho.size
        A = (sps.identity(N, format="csr") + dt * split.P.matrix).tocsr()
        b = rho + dt * (split.F - split.R_src)
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverFailure("non-positive diagonal in the implicit system")
        Dinv = sps.diags(1.0 / d)
        As = (Dinv @ A).tocsr()
        bs = b / d
        pdt = dt if precond_dt is None else precond_dt
        if self.precond.needs_refresh(pdt, self.last_iters):
            self.precond.refresh(split, pdt)
        M = spl.LinearOperator((N, N), matvec=lambda r: self.precond.apply(r * d), dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        restart = 50
        x, info = spl.gmres(As, bs, x0=rho.copy(), M=M, rtol=KRYLOV_RTOL, atol=0.0, restart=restart,
                            maxiter=KRYLOV_MAXITER // restart, callback=cb, callback_type="pr_norm")
        self.last_iters = count[0]
        self.total_iters += count[0]
        resid = np.linalg.norm(As @ x - bs)
        if info != 0 or not resid <= 10 * KRYLOV_RTOL * np.linalg.norm(bs):
            raise SolverFailure(f"GMRES did not reach relative residual {KRYLOV_RTOL:g} within "
                                f"{KRYLOV_MAXITER} iterations (residual {resid:.3g}, info={info})")
        return x


def _check_tube(atlas: GridAtlas, rho: np.ndarray, t: float) -> None:
    a = atlas.surface.tubular_a
    s = float(np.max(np.abs(rho)))
    if not s < a:
        raise TubularExit(f"sup|rho| = {s:.6g} >= tubular radius {a:.6g} at t = {t:.6g}")


def step_semi_implicit(state: FlowState, atlas: GridAtlas, integrator: Integrator | None = None) -> FlowState:
    """One linearly implicit Euler step of size ``state.dt``."""
    integ = integrator or Integrator(atlas)
    split = state.split if state.split is not None else integ.split(state.rho)
    rho_new = integ.solve(split, state.dt)
    _check_tube(atlas, rho_new, state.t + state.dt)
    return FlowState(state.t + state.dt, rho_new, state.dt, None, None, state.step + 1)


def adapt_dt(dt: float, err: float, rho_sup: float, atol: float = 1e-8, rtol: float = 1e-6):
    """Step-doubling controller; returns (accept, dt_new)."""
    tol = atol + rtol * rho_sup
    if err == 0.0:
        factor = 2.0
    else:
        factor = min(2.0, max(0.2, 0.9 * math.sqrt(tol / err)))
    return err <= tol, dt * factor


def equilibrium_tolerance(split: OperatorSplit, atlas: GridAtlas) -> float:
    return 1e-8 * (1.0 + atlas.blended_sup(split.bundle.H) ** 3)


def detect_equilibrium(split: OperatorSplit, atlas: GridAtlas, tol: float | None = None) -> bool:
    if tol is None:
        tol = equilibrium_tolerance(split, atlas)
    return atlas.blended_sup(split.G_direct) <= tol


def _report(split: OperatorSplit, atlas: GridAtlas, t: float) -> EnergyReport:
    _, el = euler_lagrange_residual(split.bundle, split.lap, atlas)
    return energy_report(split.bundle, atlas, t, el)


def _geometric_event(exc: Exception, t: float) -> FlowEvent:
    if isinstance(exc, TubularExit):
        return FlowEvent("tubular_exit", t, str(exc))
    if isinstance(exc, (DegenerateMetricError, NearSingularError, EllipticityError)):
        kind = "tubular_exit" if isinstance(exc, NearSingularError) else "degenerate_metric"
        return FlowEvent(kind, t, str(exc))
    return FlowEvent("solver_failure", t, str(exc))


def run(atlas: GridAtlas, rho0, params: FlowParams = FlowParams(),
        sink: Callable[[int, FlowState, EnergyReport], None] | None = None) -> Trajectory:
    """Integrate from ``rho0`` until ``t_end`` or a terminal event."""
    traj = Trajectory()
    rho = np.broadcast_to(np.asarray(rho0, dtype=float), (atlas.n_owned,)).copy()
    integ = Integrator(atlas)
    t, dt, step = 0.0, float(params.dt0), 0
    try:
        _check_tube(atlas, rho, t)
        split = integ.split(rho)
    except Exception as exc:  # initial data already inadmissible
        traj.events.append(_geometric_event(exc, t))
        return traj
    report = _report(split, atlas, t)
    _record(traj, t, rho, 0.0, report)
    if sink:
        sink(step, FlowState(t, rho, dt, split, report, step), report)

    while True:
        if detect_equilibrium(split, atlas, params.equilibrium_tol):
            traj.events.append(FlowEvent("equilibrium", t, "Euler-Lagrange residual below tolerance"))
            break
        if t >= params.t_end * (1 - 1e-12):
            traj.events.append(FlowEvent("reached_t_end", t))
            break
        if step >= params.max_steps:
            traj.events.append(FlowEvent("solver_failure", t, f"step limit {params.max_steps} reached"))
            break
        if dt < DT_MIN:
            traj.events.append(FlowEvent("dt_underflow", t, f"dt = {dt:.3g} below {DT_MIN}"))
            break
        h = min(dt, params.t_end - t)
        try:
            if params.adaptive:
                # one factorization serves both step sizes
                pdt = h / math.sqrt(2.0)
                full = integ.solve(split, h, pdt)
                half = integ.solve(split, h / 2, pdt)
                _check_tube(atlas, half, t + h / 2)
                split_half = integ.split(half)
                new = integ.solve(split_half, h / 2, pdt)
                err = float(np.max(np.abs(full - new)))
                accept, dt_next = adapt_dt(h, err, float(np.max(np.abs(new))), params.atol, params.rtol)
            else:
                new = integ.solve(split, h)
                accept, dt_next = True, dt
            if not accept:
                traj.rejected += 1
                dt = dt_next
                continue
            _check_tube(atlas, new, t + h)
            new_split = integ.split(new)
        except TubularExit as exc:
            traj.events.append(FlowEvent("tubular_exit", t, str(exc)))
            break
        except SolverFailure as exc:
            traj.events.append(FlowEvent("solver_failure", t, str(exc)))
            break
        except (DegenerateMetricError, NearSingularError, EllipticityError) as exc:
            traj.events.append(_geometric_event(exc, t))
            break
        t += h
        step += 1
        rho, split = new, new_split
        dt = dt_next if params.adaptive else dt
        report = _report(split, atlas, t)
        prev_W = traj.reports[-1].W
        increase = report.W - prev_W
        traj.max_energy_increase = max(traj.max_energy_increase, increase)
        if increase > 1e-8 * prev_W:
            traj.energy_monotone = False
        if step % max(1, params.output_every) == 0 or t >= params.t_end * (1 - 1e-12):
            if sink:
                sink(step, FlowState(t, rho, h, split, report, step), report)
        _record(traj, t, rho, h, report)
    return traj


def _record(traj: Trajectory, t: float, rho: np.ndarray, dt: float, report: EnergyReport) -> None:
    traj.times.append(t)
    traj.states.append(rho.copy())
    traj.dts.append(dt)
    traj.reports.append(report)
