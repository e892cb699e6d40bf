"""Wave-boundary identification and speed-variance metrics.

Works on a TrajectorySet containing one designated AV.  Vehicles are
binned into 200 m distance bands relative to the AV, each band is
discretized into 10 s sub-boxes, and threshold crossings of the averaged
speed trace the start/end frontiers of a stop-and-go wave.  Variance
metrics compare vehicles behind the AV against those in front of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulation import Trajectory, TrajectorySet


@dataclass
class GridParams:
    box_width: float = 200.0     # distance band size, m
    t_bin: float = 10.0          # sub-box duration, s
    extent_front: float = 1400.0
    extent_behind: float = 1400.0
    smooth_window: int = 3       # moving-average width; 1 disables smoothing

    def validate(self) -> None:
        if self.box_width <= 0 or self.t_bin <= 0:
            raise ValueError("box_width and t_bin must be > 0")
        if self.extent_front < 0 or self.extent_behind < 0:
            raise ValueError("extents must be >= 0")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be a positive odd integer")


@dataclass
class Box:
    """One distance band: signed_band < 0 is behind the AV, > 0 in front.

    Band k covers distances ((k-1)*w, k*w] from the AV, measured at each
    member's first timestamp shared with the AV.
    """

    signed_band: int
    lo: float
    hi: float
    members: list[Trajectory] = field(default_factory=list)


@dataclass
class BoxGrid:
    params: GridParams
    av: Trajectory
    boxes: list[Box]          # ordered by signed band, rear to front
    dropped: list[str]        # vehicles beyond the extents

    def box(self, signed_band: int) -> Box:
        for b in self.boxes:
            if b.signed_band == signed_band:
                return b
        raise KeyError(f"no box with signed band {signed_band}")


@dataclass
class SubBox:
    """Averages of one (distance band, time bin) cell."""

    t_index: int
    t_mean: float
    y_mean: float
    v_mean: float
    n_samples: int


@dataclass
class WaveBoundary:
    """Per-box wave start/end frontier points, ordered rear to front.

    Boxes where the averaged speed never crosses the threshold contribute
    no point and are listed in ``boxes_without_crossing``.
    """

    start_frontier: list[tuple[float, float]]   # (t, y)
    end_frontier: list[tuple[float, float]]
    start_bands: list[int]                      # signed band per frontier point
    end_bands: list[int]
    threshold: float
    boxes_without_crossing: list[int] = field(default_factory=list)


@dataclass
class VarianceReport:
    variance_front: float
    variance_behind: float
    pct_change: int | None
    extent_front: float
    extent_behind: float
    region: str = "all"
    # (distance, pooled variance of vehicles within that distance behind)
    behind_breakdown: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class VarianceGrid:
    """Percent change of behind-variance vs front-variance per extent pair.

    Rows follow ``behind_extents``, columns ``front_extents``; cells are
    rounded percentages (None where a pool is empty or the front variance
    is zero).  ``pct_exact`` keeps the unrounded values for trend checks.
    """

    behind_extents: list[float]
    front_extents: list[float]
    pct: list[list[int | None]]
    pct_exact: list[list[float | None]]
    var_behind: list[float | None]
    var_front: list[float | None]


def signed_distances(trajset: TrajectorySet, av_id: str) -> dict[str, float]:
    """Distance of every other vehicle to the AV, positive in front.

    Measured at the first timestamp the vehicle and the AV are both
    recorded on; vehicles whose time ranges never overlap the AV's are an
    error, since no relative position is defined for them.
    """
    av = trajset.get(av_id)
    out = {}
    for tr in trajset:
        if tr.vehicle_id == av_id:
            continue
        t0 = max(tr.t[0], av.t[0])
        if t0 > tr.t[-1] or t0 > av.t[-1]:
            raise ValueError(
                f"vehicle {tr.vehicle_id!r} never coexists with AV {av_id!r}")
        i = int(np.searchsorted(tr.t, t0 - 1e-9))
        j = int(np.searchsorted(av.t, t0 - 1e-9))
        out[tr.vehicle_id] = float(tr.y[i] - av.y[j])
    return out


def assign_boxes(trajset: TrajectorySet, av_id: str,
                 params: GridParams | None = None) -> BoxGrid:
    """Partition vehicles into distance bands around the AV.

    Ties at band edges go to the band nearer the AV; vehicles beyond the
    extents are dropped (and listed); the AV belongs to no box.
    """
    params = params or GridParams()
    params.validate()
    av = trajset.get(av_id)
    w = params.box_width
    n_front = int(math.ceil(params.extent_front / w))
    n_behind = int(math.ceil(params.extent_behind / w))
    boxes = {k: Box(k, (abs(k) - 1) * w, abs(k) * w)
             for k in range(-n_behind, n_front + 1) if k != 0}
    dropped = []
    for vid, d in signed_distances(trajset, av_id).items():
        band = max(1, int(math.ceil(abs(d) / w)))
        extent = params.extent_front if d >= 0 else params.extent_behind
        if abs(d) > extent:
            dropped.append(vid)
            continue
        k = band if d >= 0 else -band
        boxes[k].members.append(trajset.get(vid))
    ordered = [boxes[k] for k in sorted(boxes)]
    return BoxGrid(params, av, ordered, dropped)


def _moving_average(values: list[float], window: int) -> list[float]:
    # centered window, truncated at the ends (divide by actual count)
    if window <= 1 or len(values) <= 1:
        return list(values)
    half = window // 2
    out = []
    for i in range(len(values)):
        lo, hi = max(0, i - half), min(len(values), i + half + 1)
        out.append(sum(values[lo:hi]) / (hi - lo))
    return out


def subbox_averages(box: Box, t_bin: float = 10.0,
                    smooth_window: int = 3) -> list[SubBox]:
    """Mean (t, y, v) per time bin over all samples of the box's members.

    Empty time bins are skipped (visible as gaps in ``t_index``); the mean
    position and speed sequences are smoothed with a centered moving
    average across the surviving bins.
    """
    if not box.members:
        raise ValueError(f"box {box.signed_band} has no member trajectories")
    t = np.concatenate([tr.t for tr in box.members])
    y = np.concatenate([tr.y for tr in box.members])
    v = np.concatenate([tr.v for tr in box.members])
    bins = np.floor(t / t_bin + 1e-9).astype(int)
    out = []
    for k in np.unique(bins):
        m = bins == k
        out.append(SubBox(int(k), float(t[m].mean()), float(y[m].mean()),
                          float(v[m].mean()), int(m.sum())))
    y_s = _moving_average([s.y_mean for s in out], smooth_window)
    v_s = _moving_average([s.v_mean for s in out], smooth_window)
    for s, ys, vs in zip(out, y_s, v_s):
        s.y_mean, s.v_mean = ys, vs
    return out


def wave_boundaries(grid: BoxGrid, speed_threshold: float = 4.0) -> WaveBoundary:
    """Trace the first wave's start and end frontier across the boxes.

    Within each box the sub-box speed sequence is scanned in time order: a
    down-crossing of the threshold marks the wave start at that sub-box's
    mean (t, y); the next up-crossing marks the end.  Frontier polylines
    are smoothed across boxes with the grid's moving-average window.
    """
    starts, ends, s_bands, e_bands, missing = [], [], [], [], []
    for box in grid.boxes:
        if not box.members:
            continue
        subs = subbox_averages(box, grid.params.t_bin,
                               grid.params.smooth_window)
        start = end = None
        for prev, cur in zip(subs, subs[1:]):
            if start is None and prev.v_mean > speed_threshold >= cur.v_mean:
                start = cur
            elif start is not None and prev.v_mean <= speed_threshold < cur.v_mean:
                end = cur
                break
        if start is None:
            missing.append(box.signed_band)
            continue
        starts.append((start.t_mean, start.y_mean))
        s_bands.append(box.signed_band)
        if end is not None:
            ends.append((end.t_mean, end.y_mean))
            e_bands.append(box.signed_band)

    def smooth(points):
        w = grid.params.smooth_window
        ts = _moving_average([p[0] for p in points], w)
        ys = _moving_average([p[1] for p in points], w)
        return list(zip(ts, ys))

    return WaveBoundary(smooth(starts), smooth(ends), s_bands, e_bands,
                        speed_threshold, missing)


def pooled_speed_variance(trajectories, region=None) -> float:
    """Population variance of all speed samples pooled over vehicles/time.

    ``region`` restricts the pool: either a (t_min, t_max, y_min, y_max)
    rectangle or a callable mask over (t, y) arrays.  Needs at least two
    samples.
    """
    samples = []
    for tr in trajectories:
        mask = np.ones(len(tr.t), dtype=bool)
        if region is not None:
            if callable(region):
                mask = np.asarray(region(tr.t, tr.y), dtype=bool)
            else:
                t0, t1, y0, y1 = region
                mask = (tr.t >= t0) & (tr.t <= t1) & (tr.y >= y0) & (tr.y <= y1)
        samples.append(tr.v[mask])
    pooled = np.concatenate(samples) if samples else np.empty(0)
    if pooled.size < 2:
        raise ValueError(f"need at least 2 speed samples, got {pooled.size}")
    return float(pooled.var())


def percent_change_exact(var_front: float, var_behind: float) -> float | None:
    """100 * (behind - front) / front, or None when front is zero."""
    if var_front < 0 or var_behind < 0:
        raise ValueError("variances must be non-negative")
    if var_front == 0.0:
        return None
    return 100.0 * (var_behind - var_front) / var_front


def percent_change(var_front: float, var_behind: float) -> int | None:
    """Percent change rounded half away from zero, as reported in tables."""
    exact = percent_change_exact(var_front, var_behind)
    if exact is None:
        return None
    return int(math.floor(exact + 0.5)) if exact >= 0 else int(math.ceil(exact - 0.5))


def _pool_var(trajset: TrajectorySet, picked: list[str]) -> float | None:
    """Pooled population speed variance, or None below two samples."""
    if not picked:
        return None
    pool = np.concatenate([trajset.get(vid).v for vid in picked])
    return float(pool.var()) if pool.size >= 2 else None


def variance_grid(trajset: TrajectorySet, av_id: str,
                  front_distances=None, behind_distances=None) -> VarianceGrid:
    """Percent change of pooled variance for every extent pair.

    Cell (i, j) compares vehicles within ``behind_distances[i]`` behind the
    AV against vehicles within ``front_distances[j]`` in front.  Extents
    are cumulative (0 to the stated distance).  Default axes reproduce the
    200 to 1400 m reporting layout, front extents in decreasing order.
    """
    front_distances = list(front_distances if front_distances is not None
                           else range(1400, 199, -200))
    behind_distances = list(behind_distances if behind_distances is not None
                            else range(200, 1401, 200))
    dists = signed_distances(trajset, av_id)
    var_front = [_pool_var(trajset, [vid for vid, d in dists.items()
                                     if 0.0 < d <= df])
                 for df in front_distances]
    var_behind = [_pool_var(trajset, [vid for vid, d in dists.items()
                                      if -db <= d < 0.0])
                  for db in behind_distances]
    pct, pct_exact = [], []
    for vb in var_behind:
        row, row_exact = [], []
        for vf in var_front:
            if vb is None or vf is None:
                row.append(None)
                row_exact.append(None)
            else:
                row.append(percent_change(vf, vb))
                row_exact.append(percent_change_exact(vf, vb))
        pct.append(row)
        pct_exact.append(row_exact)
    return VarianceGrid([float(d) for d in behind_distances],
                        [float(d) for d in front_distances],
                        pct, pct_exact, var_behind, var_front)


def variance_report(trajset: TrajectorySet, av_id: str,
                    extent_front: float = 1400.0,
                    extent_behind: float = 1400.0,
                    region=None, region_label: str = "all") -> VarianceReport:
    """Front-vs-behind variance summary with a per-distance breakdown."""
    dists = signed_distances(trajset, av_id)
    front = [trajset.get(vid) for vid, d in dists.items()
             if 0.0 < d <= extent_front]
    behind = [trajset.get(vid) for vid, d in dists.items()
              if -extent_behind <= d < 0.0]
    vf = pooled_speed_variance(front, region)
    vb = pooled_speed_variance(behind, region)
    breakdown = []
    for db in np.arange(200.0, extent_behind + 1e-9, 200.0):
        sub = [trajset.get(vid) for vid, d in dists.items() if -db <= d < 0.0]
        if sub:
            try:
                breakdown.append((float(db), pooled_speed_variance(sub, region)))
            except ValueError:
                pass
    return VarianceReport(vf, vb, percent_change(vf, vb), extent_front,
                          extent_behind, region_label, breakdown)
