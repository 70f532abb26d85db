"""Command line entry point: ``willmore-flow {run,energy,probe} --config FILE``.

Exit codes: 0 finished (t_end or equilibrium), 1 bad configuration,
2 tubular exit or degenerate metric, 3 solver failure, 4 I/O failure.
``WILLMORE_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import RunConfig, initial_height, parse_config
from .energy import energy_report
from .errors import ConfigError, WillmoreError
from .flow import FlowParams, run
from .grid import build_grids
from .io import SeriesWriter, run_report, write_json, write_obj
from .operators import build_split, euler_lagrange_residual
from .translation import SampledTrajectory, SpaceTimeTransform, TimeShift, TruncatedTranslation, smoothness_probe

log = logging.getLogger("willmore_flow")

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
EVENT_EXIT = {
    "reached_t_end": EXIT_OK,
    "equilibrium": EXIT_OK,
    "tubular_exit": EXIT_GEOMETRY,
    "degenerate_metric": EXIT_GEOMETRY,
    "solver_failure": EXIT_SOLVER,
    "dt_underflow": EXIT_SOLVER,
}


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    d = Path(out if out is not None else cfg.output.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def flow_params(cfg: RunConfig) -> FlowParams:
    f = cfg.flow
    return FlowParams(dt0=f.dt0, t_end=f.t_end, atol=f.atol, rtol=f.rtol, output_every=f.output_every,
                      equilibrium_tol=f.equilibrium_tol, max_steps=f.max_steps, adaptive=f.adaptive)


def cmd_run(cfg: RunConfig, out: str | None = None) -> int:
    outdir = _out_dir(cfg, out)
    atlas = build_grids(cfg.reference_surface(), cfg.grid.resolution)
    rho0 = initial_height(cfg, atlas)
    formats = set(cfg.output.formats)
    series = SeriesWriter(outdir / "series.csv") if "csv" in formats else None

    def sink(step, state, report):
        if series is not None:
            series.write(state.dt if step else 0.0, report)
        if "obj" in formats:
            write_obj(outdir / f"mesh_{step}.obj", atlas, state.rho)
        log.info("step %d t=%.6g W=%.12g", step, report.t, report.W)

    try:
        traj = run(atlas, rho0, flow_params(cfg), sink)
    finally:
        if series is not None:
            series.close()
    report = run_report(traj, cfg.echo())
    if "json" in formats:
        write_json(outdir / "report.json", report)
    term = traj.terminal
    print(f"{term.kind} at t={term.t:.6g} after {report['steps']} steps" + (f": {term.message}" if term.message else ""))
    return EVENT_EXIT[term.kind]


def cmd_energy(cfg: RunConfig, out: str | None = None) -> int:
    outdir = _out_dir(cfg, out)
    atlas = build_grids(cfg.reference_surface(), cfg.grid.resolution)
    rho = initial_height(cfg, atlas)
    split = build_split(atlas, rho)
    _, el = euler_lagrange_residual(split.bundle, split.lap, atlas)
    rep = energy_report(split.bundle, atlas, 0.0, el)
    data = {"W": rep.W, "area": rep.area, "gb_defect": rep.gb_defect, "el_residual_sup": rep.el_residual_sup,
            "rho_sup": rep.rho_sup, "config_echo": cfg.echo()}
    write_json(outdir / "report.json", data)
    print(f"W={rep.W:.12g} area={rep.area:.12g} gb_defect={rep.gb_defect:.3g} el_residual_sup={el:.3g}")
    return EXIT_OK


def probe_trajectory(cfg: RunConfig, atlas, centre) -> SampledTrajectory:
    """Uniform samples around the probe time: a fixed-step flow, or the kink |x - centre|."""
    p = cfg.probe
    n_samples = int(np.ceil((p.t0 + p.time_eps0) / p.sample_dt)) + 4
    t_end = p.sample_dt * (n_samples - 1)
    if p.fixture == "kink":
        chart = atlas.surface.charts[p.chart]
        u, v = chart.coordinates(atlas.geometry.position)
        d = np.hypot(np.asarray(u, dtype=float) - centre[0], np.asarray(v, dtype=float) - centre[1])
        kink = np.where(np.isfinite(d), d, 0.0)
        return SampledTrajectory.from_samples(p.sample_dt * np.arange(n_samples), np.tile(kink, (n_samples, 1)))
    params = FlowParams(dt0=p.sample_dt, t_end=t_end, adaptive=False, equilibrium_tol=0.0)
    traj = run(atlas, initial_height(cfg, atlas), params)
    if traj.terminal.kind != "reached_t_end":
        raise WillmoreError(f"probe flow stopped early: {traj.terminal.kind} {traj.terminal.message}")
    return SampledTrajectory.from_samples(traj.times, np.array(traj.states))


def probe_node(atlas, chart_id: int, point) -> int:
    coords = atlas.all_owned_coords()
    sl = atlas.chart_slice(chart_id)
    d = np.hypot(coords[sl, 0] - point[0], coords[sl, 1] - point[1])
    return sl.start + int(np.argmin(d))


def cmd_probe(cfg: RunConfig, out: str | None = None) -> int:
    if cfg.probe is None:
        raise ConfigError("probe: section required for the probe command")
    p = cfg.probe
    outdir = _out_dir(cfg, out)
    atlas = build_grids(cfg.reference_surface(), cfg.grid.resolution)
    node = probe_node(atlas, p.chart, p.point)
    centre = tuple(float(x) for x in atlas.all_owned_coords()[node])
    space = TruncatedTranslation(atlas, p.chart, centre, p.eps0)
    time = TimeShift(p.t0, p.time_eps0)
    lam_r = time.lambda_max if p.lambda_radius is None else p.lambda_radius
    mu_r = space.r_max if p.mu_radius is None else p.mu_radius
    traj = probe_trajectory(cfg, atlas, centre)
    rep = smoothness_probe(traj, SpaceTimeTransform(space, time), p.t0, node, lam_r, mu_r, p.direction, p.degree)
    data = {"fixture": p.fixture, "node": node, "centre": list(centre), "t0": p.t0,
            "lambda_radius": lam_r, "mu_radius": mu_r, **rep.as_dict(),
            "decays_through_degree": rep.decays_through(p.degree), "config_echo": cfg.echo()}
    write_json(outdir / "probe.json", data)
    print("decay ratios: " + " ".join(f"{r:.3g}" for r in rep.ratios))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "energy": cmd_energy, "probe": cmd_probe}


def _threads() -> int | None:
    raw = os.environ.get("WILLMORE_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"WILLMORE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"WILLMORE_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="willmore-flow", description="Willmore flow of normal graphs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config)
        threads = _threads()
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WillmoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
