"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad flags, unknown subcommand),
2 data error (unreadable or malformed input, failed run).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    GridParams,
    assign_boxes,
    variance_grid,
    variance_report,
    wave_boundaries,
)
from .controller import AccController, SensorReading
from .drivers import CollisionError
from .simulation import run
from .trajio import (
    ConfigError,
    TrajectoryFormatError,
    export_time_space_svg,
    format_variance_report,
    parse_run_config,
    parse_trajectory_csv,
    serialize_trajectory_csv,
    variance_grid_csv,
    variance_grid_text,
    write_controller_log,
    write_wave_boundary_csv,
)


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="stopgo",
                description="Stop-and-go wave simulation and analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a configured scenario")
    s.add_argument("config", help="run config file")
    s.add_argument("-o", "--out", default="out", help="output directory")

    s = sub.add_parser("wave-bounds", help="identify wave frontiers")
    s.add_argument("traj", help="trajectory CSV")
    s.add_argument("--av", required=True, help="AV vehicle id")
    s.add_argument("--threshold", type=float, default=4.0,
                   help="congestion speed threshold, m/s")
    s.add_argument("--box-width", type=float, default=200.0)
    s.add_argument("--t-bin", type=float, default=10.0)
    s.add_argument("--extent-front", type=float, default=1400.0)
    s.add_argument("--extent-behind", type=float, default=1400.0)

    s = sub.add_parser("variance", help="front/behind speed variance")
    s.add_argument("traj", help="trajectory CSV")
    s.add_argument("--av", required=True, help="AV vehicle id")
    s.add_argument("--front", type=float, default=1400.0,
                   help="front extent, m")
    s.add_argument("--behind", type=float, default=1400.0,
                   help="behind extent, m")
    s.add_argument("--region", choices=["all", "wave"], default="all",
                   help="pool all samples or only the detected wave window")

    s = sub.add_parser("variance-grid", help="extent-pair percent-change grid")
    s.add_argument("traj", help="trajectory CSV")
    s.add_argument("--av", required=True, help="AV vehicle id")
    s.add_argument("--csv", action="store_true", help="emit CSV layout")

    s = sub.add_parser("diagram", help="time-space SVG diagram")
    s.add_argument("traj", help="trajectory CSV")
    s.add_argument("-o", "--out", default="diagram.svg", help="output SVG")
    s.add_argument("--av", default=None, help="AV vehicle id to highlight")

    s = sub.add_parser("replay", help="re-run the controller on recorded data")
    s.add_argument("traj", help="trajectory CSV")
    s.add_argument("config", help="run config (controller/driver sections)")
    s.add_argument("--av", required=True, help="AV vehicle id")
    s.add_argument("-o", "--out", default=None,
                   help="log file (default stdout)")
    return p


def _cmd_simulate(args) -> int:
    cfg = parse_run_config(Path(args.config).read_text())
    has_av = any(s.kind == "av" for s in cfg.scenario.vehicles)
    result = run(cfg.scenario, cfg.sim, cfg.controller if has_av else None)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    traj_path = outdir / "trajectories.csv"
    traj_path.write_text(serialize_trajectory_csv(result.trajectories))
    n_rows = sum(len(tr.t) for tr in result.trajectories)
    lo, hi = result.trajectories.time_span()
    print(f"{len(result.trajectories)} vehicles, {n_rows} rows, "
          f"t = {lo:.1f} .. {hi:.1f} s -> {traj_path}")
    if result.controller_log:
        log_path = outdir / "controller_log.csv"
        log_path.write_text(write_controller_log(result.controller_log))
        print(f"{len(result.controller_log)} controller steps -> {log_path}")
    return 0


def _cmd_wave_bounds(args) -> int:
    trajset = parse_trajectory_csv(Path(args.traj).read_text())
    grid = assign_boxes(trajset, args.av, GridParams(
        box_width=args.box_width, t_bin=args.t_bin,
        extent_front=args.extent_front, extent_behind=args.extent_behind))
    boundary = wave_boundaries(grid, args.threshold)
    sys.stdout.write(write_wave_boundary_csv(boundary))
    if boundary.boxes_without_crossing:
        print(f"no crossing in bands: {boundary.boxes_without_crossing}",
              file=sys.stderr)
    return 0


def _wave_region(trajset, av_id, extent_front, extent_behind):
    """Bounding (t, y) window of the detected wave, for region=wave pools."""
    grid = assign_boxes(trajset, av_id, GridParams(
        extent_front=extent_front, extent_behind=extent_behind))
    boundary = wave_boundaries(grid)
    pts = boundary.start_frontier + boundary.end_frontier
    if not pts:
        raise ValueError("no wave detected; cannot restrict region to wave")
    ts = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return (min(ts), max(ts), min(ys), max(ys))


def _cmd_variance(args) -> int:
    trajset = parse_trajectory_csv(Path(args.traj).read_text())
    region = None
    if args.region == "wave":
        region = _wave_region(trajset, args.av, args.front, args.behind)
    rep = variance_report(trajset, args.av, args.front, args.behind,
                          region, args.region)
    sys.stdout.write(format_variance_report(rep))
    return 0


def _cmd_variance_grid(args) -> int:
    trajset = parse_trajectory_csv(Path(args.traj).read_text())
    grid = variance_grid(trajset, args.av)
    writer = variance_grid_csv if args.csv else variance_grid_text
    sys.stdout.write(writer(grid))
    return 0


def _cmd_diagram(args) -> int:
    trajset = parse_trajectory_csv(Path(args.traj).read_text())
    svg = export_time_space_svg(trajset, av_id=args.av)
    Path(args.out).write_text(svg)
    print(f"{len(trajset)} vehicles -> {args.out}")
    return 0


def _cmd_replay(args) -> int:
    trajset = parse_trajectory_csv(Path(args.traj).read_text())
    cfg = parse_run_config(Path(args.config).read_text())
    av = trajset.get(args.av)
    l_veh = cfg.scenario.driver.l_veh
    sensor = cfg.scenario.sensor
    others = [tr for tr in trajset if tr.vehicle_id != args.av]
    controller = AccController(cfg.controller)
    rng = np.random.default_rng(cfg.sim.seed)
    log = []
    dt = cfg.sim.dt
    prev_v = None
    for i, t in enumerate(av.t):
        y_ego, v_ego = float(av.y[i]), float(av.v[i])
        a_ego = 0.0 if prev_v is None else (v_ego - prev_v) / dt
        prev_v = v_ego
        # leader = nearest vehicle ahead that is recorded at this time
        best = None
        for tr in others:
            j = int(np.searchsorted(tr.t, t - 1e-9))
            if j >= len(tr.t) or abs(tr.t[j] - t) > 1e-6:
                continue
            if tr.y[j] > y_ego and (best is None or tr.y[j] < best[0]):
                best = (float(tr.y[j]), float(tr.v[j]))
        if best is None or best[0] - y_ego - l_veh > sensor.range_max \
                or sensor.dropped(t, rng):
            reading = SensorReading(float(t), v_ego, a=a_ego, valid=False)
        else:
            h = best[0] - y_ego - l_veh
            reading = SensorReading(float(t), v_ego, v_lead=best[1], h=h,
                                    v_rel=best[1] - v_ego, a=a_ego, valid=True)
        cmd = controller.step(reading, None, dt, y=y_ego)
        if cmd is not None:
            log.append(cmd)
    text = write_controller_log(log)
    if args.out:
        Path(args.out).write_text(text)
        print(f"{len(log)} controller steps -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "wave-bounds": _cmd_wave_bounds,
    "variance": _cmd_variance,
    "variance-grid": _cmd_variance_grid,
    "diagram": _cmd_diagram,
    "replay": _cmd_replay,
}


def cli_dispatch(argv) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # raised by --help (code 0) and by usage errors (code 1)
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, TrajectoryFormatError, CollisionError, ValueError,
            KeyError, OSError) as exc:
        print(f"stopgo: error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
