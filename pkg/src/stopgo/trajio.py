"""File formats: trajectory CSV, run configs, variance tables, SVG export.

All writers are deterministic: fixed field order, fixed float precision,
no timestamps.  Parsers report the offending line number on bad input.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .analysis import GridParams, VarianceGrid, VarianceReport
from .controller import Command, ControllerParams
from .drivers import HumanDriverParams
from .simulation import (
    CutInEvent,
    LeaderProfile,
    Scenario,
    SensorSpec,
    SimConfig,
    Trajectory,
    TrajectorySet,
    open_scenario,
    ring_scenario,
)

CSV_HEADER = "vehicle_id,lane,t,y,v"


class TrajectoryFormatError(ValueError):
    """Malformed trajectory CSV; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    """Malformed run config; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------- CSV

def serialize_trajectory_csv(trajset: TrajectorySet) -> str:
    """Canonical CSV: header then rows sorted by (vehicle_id, t).

    t carries 3 decimal places, y and v carry 6; parsing this output and
    re-serializing reproduces it byte for byte.
    """
    out = [CSV_HEADER]
    for tr in sorted(trajset, key=lambda tr: tr.vehicle_id):
        for t, y, v in zip(tr.t, tr.y, tr.v):
            out.append(f"{tr.vehicle_id},{tr.lane},{t:.3f},{y:.6f},{v:.6f}")
    return "\n".join(out) + "\n"


def parse_trajectory_csv(stream) -> TrajectorySet:
    """Read a trajectory CSV; raises TrajectoryFormatError with line numbers.

    Per-vehicle timestamps must be strictly increasing.  Vehicle kinds are
    not part of the format; callers designate the AV by id.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = stream.readline().rstrip("\n")
    if not header:
        raise TrajectoryFormatError("empty file, expected header", 1)
    cols = header.split(",")
    expected = CSV_HEADER.split(",")
    for name in expected:
        if name not in cols:
            raise TrajectoryFormatError(f"missing column {name!r}", 1)
    if cols != expected:
        raise TrajectoryFormatError(
            f"columns must be exactly {CSV_HEADER!r}, got {header!r}", 1)
    series: dict[str, tuple[int, list, list, list]] = {}
    for lineno, raw in enumerate(stream, start=2):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TrajectoryFormatError(
                f"expected 5 fields, got {len(parts)}", lineno)
        vid = parts[0]
        try:
            lane = int(parts[1])
            t, y, v = float(parts[2]), float(parts[3]), float(parts[4])
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), lineno) from None
        if not (math.isfinite(t) and math.isfinite(y) and math.isfinite(v)):
            raise TrajectoryFormatError("non-finite value", lineno)
        if vid not in series:
            series[vid] = (lane, [], [], [])
        _, ts, ys, vs = series[vid]
        if ts and t <= ts[-1]:
            raise TrajectoryFormatError(
                f"non-monotone t for vehicle {vid!r} "
                f"({t:.3f} after {ts[-1]:.3f})", lineno)
        ts.append(t)
        ys.append(y)
        vs.append(v)
    if not series:
        raise TrajectoryFormatError("no data rows", 2)
    trajectories = [
        Trajectory(vid, lane, np.array(ts), np.array(ys), np.array(vs))
        for vid, (lane, ts, ys, vs) in series.items()]
    return TrajectorySet(trajectories)


def write_controller_log(log: list[Command]) -> str:
    """Per-step controller log as CSV (one row per issued command)."""
    out = ["t,h,v,v_lead,a_safe,a_target,a_mpc,a_cmd,mode,signal_valid"]
    for c in log:
        out.append(
            f"{c.t:.3f},{c.h:.6f},{c.v:.6f},{c.v_lead:.6f},{c.a_safe:.6f},"
            f"{c.a_target:.6f},{c.a_mpc:.6f},{c.a_cmd:.6f},{c.mode},"
            f"{int(c.signal_valid)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    scenario: Scenario
    sim: SimConfig = field(default_factory=SimConfig)
    controller: ControllerParams = field(default_factory=ControllerParams)
    grid: GridParams = field(default_factory=GridParams)
    wave_threshold: float = 4.0


_SCENARIO_KEYS = {
    "kind", "duration", "sensor_range", "dropout", "dropout_prob", "cut_in",
    # ring
    "n_vehicles", "length", "av_index", "perturb_index", "perturb_frac",
    # open
    "n_human", "av_position", "cruise", "leader",
    "pulse_low", "pulse_start", "pulse_drop", "pulse_hold", "pulse_recover",
    "pulse_gap",
}
_RING_ONLY = {"n_vehicles", "length", "perturb_index", "perturb_frac",
              "av_index"}
_OPEN_ONLY = {"n_human", "av_position", "cruise", "leader", "pulse_low",
              "pulse_start", "pulse_drop", "pulse_hold", "pulse_recover",
              "pulse_gap"}
_DRIVER_KEYS = {"preset", "a_ftl", "b_ov", "v_max", "d0", "l_veh"}
_CONTROLLER_KEYS = {f.name for f in fields(ControllerParams)}
_SIM_KEYS = {"dt", "integrator", "seed"}
_GRID_KEYS = {"box_width", "t_bin", "extent_front", "extent_behind",
              "smooth_window", "threshold"}
_SECTIONS = {"scenario": _SCENARIO_KEYS, "driver": _DRIVER_KEYS,
             "controller": _CONTROLLER_KEYS, "sim": _SIM_KEYS,
             "grid": _GRID_KEYS}


def _parse_bool(raw: str, lineno: int) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}", lineno)


def _parse_intervals(raw: str) -> list[tuple[float, float]]:
    # "30:40,100:110" -> [(30, 40), (100, 110)]
    out = []
    for part in raw.split(","):
        bits = part.split(":")
        if len(bits) != 2:
            raise ValueError(f"expected start:end, got {part!r}")
        lo, hi = float(bits[0]), float(bits[1])
        if hi <= lo:
            raise ValueError(f"empty interval {part!r}")
        out.append((lo, hi))
    return out


def _parse_cut_ins(raw: str) -> list[CutInEvent]:
    # "120:10:5" -> cut-in at t=120 s, gap 10 m, speed 5 m/s
    out = []
    for part in raw.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise ValueError(f"expected t:gap:speed, got {part!r}")
        out.append(CutInEvent(float(bits[0]), float(bits[1]), float(bits[2])))
    return out


def parse_run_config(stream) -> RunConfig:
    """Parse the key=value run config with [section] headers.

    Recognized sections: [scenario], [driver], [controller], [sim], [grid].
    Unknown sections or keys are rejected with their line number; keys not
    applicable to the scenario kind are rejected as well.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    entries: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in _SECTIONS}
    section = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        entries[section][key] = (value, lineno)

    def take(section: str, key: str, conv, default):
        if key not in entries[section]:
            return default
        raw, lineno = entries[section].pop(key)
        try:
            return conv(raw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None

    def opt_int(raw: str) -> int | None:
        return None if raw.lower() == "none" else int(raw)

    # driver first: the scenario builders consume it
    driver = None
    if "preset" in entries["driver"]:
        raw, lineno = entries["driver"].pop("preset")
        presets = {"unstable_ring": HumanDriverParams.unstable_ring,
                   "open_road": HumanDriverParams.open_road}
        if raw not in presets:
            raise ConfigError(f"unknown driver preset {raw!r}", lineno)
        driver = presets[raw]()
    overrides = {k: take("driver", k, float, None) for k in
                 ("a_ftl", "b_ov", "v_max", "d0", "l_veh")}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        driver = replace(driver or HumanDriverParams(), **overrides)
    if driver is not None:
        driver.validate()

    if "kind" not in entries["scenario"]:
        raise ConfigError("missing required key 'kind' in [scenario]")
    kind, kind_line = entries["scenario"].pop("kind")
    if kind not in ("ring", "open"):
        raise ConfigError(f"kind must be ring or open, got {kind!r}", kind_line)
    wrong = _OPEN_ONLY if kind == "ring" else _RING_ONLY
    for key in wrong:
        if key in entries["scenario"]:
            raise ConfigError(f"key {key!r} does not apply to kind={kind}",
                              entries["scenario"][key][1])

    sensor = SensorSpec(
        range_max=take("scenario", "sensor_range", float, 120.0),
        dropout_intervals=take("scenario", "dropout", _parse_intervals, []),
        dropout_prob=take("scenario", "dropout_prob", float, 0.0))
    cut_ins = take("scenario", "cut_in", _parse_cut_ins, [])

    if kind == "ring":
        scenario = ring_scenario(
            n_vehicles=take("scenario", "n_vehicles", int, 22),
            length=take("scenario", "length", float, 260.0),
            duration=take("scenario", "duration", float, 600.0),
            av_index=take("scenario", "av_index", opt_int, None),
            perturb_index=take("scenario", "perturb_index", opt_int, 11),
            perturb_frac=take("scenario", "perturb_frac", float, 0.01),
            driver=driver, sensor=sensor)
        scenario.cut_in_events = cut_ins
    else:
        cruise = take("scenario", "cruise", float, 28.0)
        leader_kind, leader_line = entries["scenario"].pop(
            "leader", ("three_pulse", None))
        if leader_kind == "three_pulse":
            profile = LeaderProfile.three_pulse(
                cruise=cruise,
                low=take("scenario", "pulse_low", float, 3.0),
                start=take("scenario", "pulse_start", float, 30.0),
                drop=take("scenario", "pulse_drop", float, 15.0),
                hold=take("scenario", "pulse_hold", float, 20.0),
                recover=take("scenario", "pulse_recover", float, 15.0),
                gap=take("scenario", "pulse_gap", float, 40.0))
        elif leader_kind == "constant":
            profile = LeaderProfile.constant(cruise)
        else:
            raise ConfigError(f"unknown leader profile {leader_kind!r}",
                              leader_line)
        scenario = open_scenario(
            n_human=take("scenario", "n_human", int, 40),
            av_position=take("scenario", "av_position", opt_int, 20),
            cruise=cruise,
            duration=take("scenario", "duration", float, 420.0),
            driver=driver, leader_profile=profile, sensor=sensor,
            cut_in_events=cut_ins)

    ctrl_kwargs = {}
    for f in fields(ControllerParams):
        if f.name in entries["controller"]:
            raw, lineno = entries["controller"].pop(f.name)
            try:
                ctrl_kwargs[f.name] = (_parse_bool(raw, lineno)
                                       if f.type == "bool" else float(raw))
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"bad value for {f.name}: {raw!r}",
                                  lineno) from None
    controller = ControllerParams(**ctrl_kwargs)
    controller.validate()

    sim = SimConfig(dt=take("sim", "dt", float, 0.05),
                    integrator=take("sim", "integrator", str, "euler"),
                    seed=take("sim", "seed", int, 0))
    sim.validate()

    grid = GridParams(
        box_width=take("grid", "box_width", float, 200.0),
        t_bin=take("grid", "t_bin", float, 10.0),
        extent_front=take("grid", "extent_front", float, 1400.0),
        extent_behind=take("grid", "extent_behind", float, 1400.0),
        smooth_window=take("grid", "smooth_window", int, 3))
    grid.validate()
    threshold = take("grid", "threshold", float, 4.0)
    return RunConfig(scenario, sim, controller, grid, threshold)


# ---------------------------------------------------------------- tables

def _extent_label(d: float) -> str:
    return f"{int(d)}m" if float(d).is_integer() else f"{d}m"


def _pct_cell(p: int | None) -> str:
    if p is None:
        return "n/a"
    return f"+{p}%" if p > 0 else f"{p}%"


def variance_grid_csv(grid: VarianceGrid) -> str:
    """CSV with the reporting layout: behind extents down, front across."""
    out = ["behind\\front," + ",".join(_extent_label(d)
                                       for d in grid.front_extents)]
    for db, row in zip(grid.behind_extents, grid.pct):
        out.append(_extent_label(db) + "," + ",".join(_pct_cell(p)
                                                      for p in row))
    return "\n".join(out) + "\n"


def variance_grid_text(grid: VarianceGrid) -> str:
    """Aligned human-readable variant of the grid."""
    header = ["behind\\front"] + [_extent_label(d) for d in grid.front_extents]
    rows = [[_extent_label(db)] + [_pct_cell(p) for p in row]
            for db, row in zip(grid.behind_extents, grid.pct)]
    widths = [max(len(r[i]) for r in [header] + rows)
              for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths))
             for r in [header] + rows]
    return "\n".join(lines) + "\n"


def format_variance_report(rep: VarianceReport) -> str:
    lines = [
        f"region:           {rep.region}",
        f"front variance:   {rep.variance_front:.6f} m^2/s^2"
        f"  (within {_extent_label(rep.extent_front)})",
        f"behind variance:  {rep.variance_behind:.6f} m^2/s^2"
        f"  (within {_extent_label(rep.extent_behind)})",
        f"percent change:   {_pct_cell(rep.pct_change)}",
    ]
    if rep.behind_breakdown:
        lines.append("behind variance by extent:")
        for d, var in rep.behind_breakdown:
            lines.append(f"  {_extent_label(d):>7}  {var:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- SVG

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 20, 20, 45
_SPEED_FULL = 35.0   # speed mapped to full green


def _speed_color(v: float) -> str:
    # red (stopped) through yellow to green (free flow), clamped
    u = min(1.0, max(0.0, v / _SPEED_FULL))
    r = round(255 * min(1.0, 2.0 * (1.0 - u)))
    g = round(255 * min(1.0, 2.0 * u))
    return f"#{r:02x}{g:02x}00"


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s for s in (mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    first = math.ceil(lo / step) * step
    out = []
    while first <= hi + 1e-9:
        out.append(first)
        first += step
    return out


def export_time_space_svg(trajset: TrajectorySet, av_id: str | None = None,
                          color_by_speed: bool = True, width: int = 900,
                          height: int = 500, t_range=None, y_range=None,
                          max_points: int = 400) -> str:
    """Time-space diagram as a standalone SVG document.

    One polyline per vehicle (time on x, position on y), drawn as short
    segments colored by local speed; the AV, if named, is drawn last in a
    thick navy stroke.  Output is byte-deterministic for identical inputs.
    """
    pw = width - _MARGIN_L - _MARGIN_R
    ph = height - _MARGIN_T - _MARGIN_B

    clipped: list[tuple[Trajectory, np.ndarray]] = []
    for tr in trajset:
        mask = np.ones(len(tr.t), dtype=bool)
        if t_range is not None:
            mask &= (tr.t >= t_range[0]) & (tr.t <= t_range[1])
        if y_range is not None:
            mask &= (tr.y >= y_range[0]) & (tr.y <= y_range[1])
        if mask.sum() >= 2:
            clipped.append((tr, mask))

    if clipped:
        t_lo = min(tr.t[m].min() for tr, m in clipped)
        t_hi = max(tr.t[m].max() for tr, m in clipped)
        y_lo = min(tr.y[m].min() for tr, m in clipped)
        y_hi = max(tr.y[m].max() for tr, m in clipped)
    else:
        t_lo, t_hi = t_range or (0.0, 1.0)
        y_lo, y_hi = y_range or (0.0, 1.0)
    if t_hi <= t_lo:
        t_hi = t_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def sx(t: float) -> float:
        return _MARGIN_L + (t - t_lo) / (t_hi - t_lo) * pw

    def sy(y: float) -> float:
        return _MARGIN_T + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]

    def emit(tr: Trajectory, mask: np.ndarray, av: bool) -> None:
        t, y, v = tr.t[mask], tr.y[mask], tr.v[mask]
        stride = max(1, int(math.ceil(len(t) / max_points)))
        t, y, v = t[::stride], y[::stride], v[::stride]
        if av or not color_by_speed:
            pts = " ".join(f"{sx(ti):.2f},{sy(yi):.2f}" for ti, yi in zip(t, y))
            stroke = "#000080" if av else "#404040"
            sw = "2.5" if av else "1"
            out.append(f'<polyline points="{pts}" fill="none" '
                       f'stroke="{stroke}" stroke-width="{sw}"/>')
            return
        for i in range(len(t) - 1):
            color = _speed_color(0.5 * (v[i] + v[i + 1]))
            out.append(
                f'<line x1="{sx(t[i]):.2f}" y1="{sy(y[i]):.2f}" '
                f'x2="{sx(t[i + 1]):.2f}" y2="{sy(y[i + 1]):.2f}" '
                f'stroke="{color}" stroke-width="1"/>')

    av_entry = None
    for tr, mask in clipped:
        if av_id is not None and tr.vehicle_id == av_id:
            av_entry = (tr, mask)
            continue
        emit(tr, mask, av=False)
    if av_entry is not None:
        emit(*av_entry, av=True)

    axis_y = _MARGIN_T + ph
    out.append(f'<line x1="{_MARGIN_L}" y1="{axis_y}" x2="{_MARGIN_L + pw}" '
               f'y2="{axis_y}" stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
               f'y2="{axis_y}" stroke="black" stroke-width="1"/>')
    for t in _ticks(t_lo, t_hi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{axis_y}" x2="{x:.2f}" '
                   f'y2="{axis_y + 5}" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{axis_y + 18}" font-size="11" '
                   f'text-anchor="middle">{t:g}</text>')
    for y in _ticks(y_lo, y_hi):
        yy = sy(y)
        out.append(f'<line x1="{_MARGIN_L - 5}" y1="{yy:.2f}" '
                   f'x2="{_MARGIN_L}" y2="{yy:.2f}" stroke="black" '
                   f'stroke-width="1"/>')
        out.append(f'<text x="{_MARGIN_L - 8}" y="{yy + 4:.2f}" '
                   f'font-size="11" text-anchor="end">{y:g}</text>')
    out.append(f'<text x="{_MARGIN_L + pw / 2:.2f}" y="{height - 8}" '
               f'font-size="12" text-anchor="middle">time [s]</text>')
    out.append(f'<text x="15" y="{_MARGIN_T + ph / 2:.2f}" font-size="12" '
               f'text-anchor="middle" transform="rotate(-90 15 '
               f'{_MARGIN_T + ph / 2:.2f})">position [m]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_wave_boundary_csv(boundary) -> str:
    """Frontier points as CSV: which frontier, signed band, mean t and y."""
    out = ["frontier,band,t,y"]
    for band, (t, y) in zip(boundary.start_bands, boundary.start_frontier):
        out.append(f"start,{band},{t:.3f},{y:.3f}")
    for band, (t, y) in zip(boundary.end_bands, boundary.end_frontier):
        out.append(f"end,{band},{t:.3f},{y:.3f}")
    return "\n".join(out) + "\n"
