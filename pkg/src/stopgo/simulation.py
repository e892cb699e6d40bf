"""Platoon time-stepping on a ring or an open road.

A world holds at most one controlled AV, any number of human drivers and
optionally one scripted leader at the front.  Updates are synchronous:
every acceleration is computed from the pre-step state, then all vehicles
advance together (explicit Euler or RK4).  Runs are deterministic for a
fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    AccController,
    Command,
    ControllerParams,
    PlanProfile,
    SensorReading,
)
from .drivers import (
    CollisionError,
    HumanDriverParams,
    equilibrium_spacing,
    human_accel,
    optimal_velocity,
)

KIND_HUMAN = "human"
KIND_AV = "av"
KIND_LEADER = "leader"


@dataclass
class LeaderProfile:
    """Piecewise-linear speed script for the scripted leader.

    Breakpoints are (t, v) pairs; speed is interpolated between them and
    held constant beyond either end.
    """

    breakpoints: list[tuple[float, float]]

    def speed_at(self, t: float) -> float:
        pts = self.breakpoints
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return pts[-1][1]

    @classmethod
    def constant(cls, v: float) -> "LeaderProfile":
        return cls([(0.0, v)])

    @classmethod
    def three_pulse(cls, cruise: float = 28.0, low: float = 3.0,
                    start: float = 30.0, drop: float = 15.0,
                    hold: float = 20.0, recover: float = 15.0,
                    gap: float = 40.0) -> "LeaderProfile":
        """Three stop-go pulses: cruise, drop to low, hold, recover, repeat."""
        pts = [(0.0, cruise)]
        t = start
        for _ in range(3):
            pts += [(t, cruise), (t + drop, low), (t + drop + hold, low),
                    (t + drop + hold + recover, cruise)]
            t += drop + hold + recover + gap
        return cls(pts)


@dataclass
class VehicleSpec:
    kind: str
    y: float
    v: float
    vid: str | None = None
    driver: HumanDriverParams | None = None


@dataclass
class SensorSpec:
    """Front-sensor model: range limit plus scripted/random dropouts."""

    range_max: float = 120.0
    dropout_intervals: list[tuple[float, float]] = field(default_factory=list)
    dropout_prob: float = 0.0

    def dropped(self, t: float, rng) -> bool:
        for t0, t1 in self.dropout_intervals:
            if t0 <= t < t1:
                return True
        if self.dropout_prob > 0.0:
            return bool(rng.random() < self.dropout_prob)
        return False


@dataclass
class CutInEvent:
    t: float
    gap: float    # bumper gap left to the ego, m
    speed: float


@dataclass
class Scenario:
    """Topology, platoon composition and disturbance script for one run."""

    topology: str                  # 'ring' | 'open'
    length: float
    vehicles: list[VehicleSpec]    # ordered rear to front (increasing y)
    duration: float
    driver: HumanDriverParams = field(default_factory=HumanDriverParams)
    leader_profile: LeaderProfile | None = None
    cut_in_events: list[CutInEvent] = field(default_factory=list)
    sensor: SensorSpec = field(default_factory=SensorSpec)

    def validate(self) -> None:
        if self.topology not in ("ring", "open"):
            raise ValueError(f"topology must be ring or open, got {self.topology!r}")
        n_av = sum(1 for s in self.vehicles if s.kind == KIND_AV)
        if n_av > 1:
            raise ValueError("at most one controlled AV per scenario")
        n_lead = sum(1 for s in self.vehicles if s.kind == KIND_LEADER)
        if n_lead > 1:
            raise ValueError("at most one scripted leader")
        if n_lead == 1:
            if self.topology == "ring":
                raise ValueError("scripted leader only makes sense on the open road")
            if self.vehicles[-1].kind != KIND_LEADER:
                raise ValueError("the scripted leader must be the front vehicle")
            if self.leader_profile is None:
                raise ValueError("scripted leader present but no leader profile")


@dataclass
class SimConfig:
    dt: float = 0.05
    integrator: str = "euler"   # 'euler' | 'rk4'
    seed: int = 0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass
class Trajectory:
    """Sampled (t, y, v) series for one vehicle."""

    vehicle_id: str
    lane: int
    t: np.ndarray
    y: np.ndarray
    v: np.ndarray
    kind: str = KIND_HUMAN


@dataclass
class TrajectorySet:
    """Collection of trajectories on a common dt grid (entries may start late)."""

    trajectories: list[Trajectory]
    av_id: str | None = None

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self):
        return len(self.trajectories)

    def get(self, vehicle_id: str) -> Trajectory:
        for tr in self.trajectories:
            if tr.vehicle_id == vehicle_id:
                return tr
        raise KeyError(f"no trajectory for vehicle {vehicle_id!r}")

    @property
    def av(self) -> Trajectory:
        if self.av_id is None:
            raise KeyError("trajectory set has no AV")
        return self.get(self.av_id)

    def time_span(self) -> tuple[float, float]:
        lo = min(tr.t[0] for tr in self.trajectories)
        hi = max(tr.t[-1] for tr in self.trajectories)
        return lo, hi


@dataclass
class World:
    """Mutable state of one running simulation."""

    t: float
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray                  # last applied accelerations
    kinds: list[str]
    ids: list[str]
    drivers: list[HumanDriverParams]
    ring_length: float | None      # None on the open road

    @property
    def n(self) -> int:
        return len(self.ids)

    def leader_of(self, i: int) -> int | None:
        if self.ring_length is not None:
            return (i + 1) % self.n
        return i + 1 if i + 1 < self.n else None

    def spacing(self, i: int) -> float:
        """Front-to-front distance to the leader of vehicle i."""
        j = self.leader_of(i)
        if j is None:
            return math.inf
        d = self.y[j] - self.y[i]
        if self.ring_length is not None:
            d %= self.ring_length
        return d

    def av_index(self) -> int | None:
        for i, kind in enumerate(self.kinds):
            if kind == KIND_AV:
                return i
        return None


@dataclass
class RunResult:
    trajectories: TrajectorySet
    controller_log: list[Command]


def make_world(scenario: Scenario) -> World:
    scenario.validate()
    n = len(scenario.vehicles)
    y = np.array([s.y for s in scenario.vehicles], dtype=float)
    v = np.array([s.v for s in scenario.vehicles], dtype=float)
    kinds = [s.kind for s in scenario.vehicles]
    ids = []
    for i, s in enumerate(scenario.vehicles):
        if s.vid is not None:
            ids.append(s.vid)
        elif s.kind == KIND_AV:
            ids.append("av")
        elif s.kind == KIND_LEADER:
            ids.append("lead")
        else:
            ids.append(f"h{i:02d}")
    drivers = [s.driver or scenario.driver for s in scenario.vehicles]
    ring = scenario.length if scenario.topology == "ring" else None
    return World(0.0, y, v, np.zeros(n), kinds, ids, drivers, ring)


def sense(world: World, av_index: int, sensor: SensorSpec, rng) -> SensorReading:
    """Build the AV's sensor reading: gap and leader speed, or a dropout.

    The gap is bumper-to-bumper (spacing minus the leader's length).  The
    reading is invalid when there is no leader, the leader is beyond the
    sensor range, or a dropout (scripted or random) covers this step.
    """
    j = world.leader_of(av_index)
    v_ego = float(world.v[av_index])
    a_ego = float(world.a[av_index])
    if j is None:
        return SensorReading(world.t, v_ego, a=a_ego, valid=False)
    h = world.spacing(av_index) - world.drivers[j].l_veh
    if h > sensor.range_max or sensor.dropped(world.t, rng):
        return SensorReading(world.t, v_ego, a=a_ego, valid=False)
    v_lead = float(world.v[j])
    return SensorReading(world.t, v_ego, v_lead=v_lead, h=h,
                         v_rel=v_lead - v_ego, a=a_ego, valid=True)


def _accelerations(world: World, y: np.ndarray, v: np.ndarray, t: float,
                   av_accel: float | None,
                   profile: LeaderProfile | None) -> np.ndarray:
    """Acceleration of every vehicle at the given (possibly stage) state."""
    n = world.n
    a = np.zeros(n)
    for i in range(n):
        kind = world.kinds[i]
        if kind == KIND_LEADER:
            continue  # speed prescribed, not integrated
        if kind == KIND_AV and av_accel is not None:
            a[i] = av_accel
            continue
        j = world.leader_of(i)
        if j is None:
            a[i] = 0.0  # free front vehicle holds speed
            continue
        gap = y[j] - y[i]
        if world.ring_length is not None:
            gap %= world.ring_length
        v_lead = v[j]
        if world.kinds[j] == KIND_LEADER and profile is not None:
            v_lead = profile.speed_at(t)
        try:
            a[i] = human_accel(gap, v[i], v_lead, world.drivers[i])
        except CollisionError as exc:
            raise CollisionError(
                f"contact between {world.ids[i]} and {world.ids[j]} "
                f"at t={t:.2f} s", follower=world.ids[i],
                leader=world.ids[j], t=t) from exc
    return a


def integrate_step(world: World, dt: float, integrator: str = "euler",
                   av_accel: float | None = None,
                   profile: LeaderProfile | None = None) -> None:
    """Advance the world by one step in place.

    All accelerations come from the pre-step (or stage) state; the AV
    command is zero-order held across the step.  Speeds are floored at 0
    after the step and ring positions wrapped.

    Raises:
        CollisionError: if any bumper gap is non-positive after the step.
    """
    leader_idx = None
    for i, kind in enumerate(world.kinds):
        if kind == KIND_LEADER:
            leader_idx = i

    def with_leader_speed(v: np.ndarray, t: float) -> np.ndarray:
        if leader_idx is None or profile is None:
            return v
        v = v.copy()
        v[leader_idx] = profile.speed_at(t)
        return v

    t0 = world.t
    y0, v0 = world.y, with_leader_speed(world.v, t0)
    if integrator == "euler":
        a = _accelerations(world, y0, v0, t0, av_accel, profile)
        # kinematic advance: exact for the zero-order-held accelerations,
        # and the reason the per-step displacement bound carries a 1/2*a*dt^2
        y_new = y0 + v0 * dt + 0.5 * a * dt * dt
        v_new = v0 + a * dt
        # a braking vehicle that reaches zero speed mid-step stays at its
        # stopping point rather than sliding backward
        neg = v_new < 0.0
        if neg.any():
            y_new[neg] = y0[neg] + v0[neg] ** 2 / (2.0 * -a[neg])
        if leader_idx is not None and profile is not None:
            # the scripted leader has no acceleration of its own; advance it
            # by the trapezoid of its speed script (exact between breakpoints)
            y_new[leader_idx] = y0[leader_idx] + 0.5 * dt * (
                profile.speed_at(t0) + profile.speed_at(t0 + dt))
        world.a = a
    elif integrator == "rk4":
        def deriv(y, v, t):
            v = with_leader_speed(v, t)
            return v, _accelerations(world, y, v, t, av_accel, profile)
        k1y, k1v = deriv(y0, v0, t0)
        k2y, k2v = deriv(y0 + 0.5 * dt * k1y, v0 + 0.5 * dt * k1v, t0 + 0.5 * dt)
        k3y, k3v = deriv(y0 + 0.5 * dt * k2y, v0 + 0.5 * dt * k2v, t0 + 0.5 * dt)
        k4y, k4v = deriv(y0 + dt * k3y, v0 + dt * k3v, t0 + dt)
        y_new = y0 + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v_new = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        world.a = k1v
    else:
        raise ValueError(f"unknown integrator {integrator!r}")

    if leader_idx is not None and profile is not None:
        v_new[leader_idx] = profile.speed_at(t0 + dt)
    np.maximum(v_new, 0.0, out=v_new)
    if world.ring_length is not None:
        y_new %= world.ring_length
    world.y = y_new
    world.v = v_new
    world.t = t0 + dt

    # Contact threshold is zero front-to-front spacing, the singular point
    # of the car-following law; the optimal-velocity profile already puts
    # its zero-speed point at spacing l_veh, so jams legitimately compress
    # below nominal vehicle length.
    for i in range(world.n):
        j = world.leader_of(i)
        if j is None:
            continue
        gap = world.spacing(i)
        if gap <= 0.0:
            raise CollisionError(
                f"collision: {world.ids[i]} into {world.ids[j]} at "
                f"t={world.t:.2f} s (spacing {gap:.3f} m)",
                follower=world.ids[i], leader=world.ids[j], t=world.t)


def apply_cut_in(world: World, event: CutInEvent,
                 driver: HumanDriverParams) -> None:
    """Insert a human vehicle ahead of the AV at the scripted gap and speed.

    Raises:
        ValueError: if the scenario has no AV or either resulting bumper
            gap would be non-positive.
    """
    av = world.av_index()
    if av is None:
        raise ValueError("cut-in event requires a controlled AV")
    if event.gap <= 0.0:
        raise ValueError(f"cut-in gap must be > 0, got {event.gap}")
    y_new = world.y[av] + event.gap + driver.l_veh
    j = world.leader_of(av)
    if j is not None:
        spacing_old = world.spacing(av)
        gap_front = spacing_old - (y_new - world.y[av]) - world.drivers[j].l_veh
        if gap_front <= 0.0:
            raise ValueError(
                f"cut-in at t={event.t:.2f} s leaves no room in front "
                f"(gap {gap_front:.3f} m)")
    if world.ring_length is not None:
        y_new %= world.ring_length
    insert = av + 1
    world.y = np.insert(world.y, insert, y_new)
    world.v = np.insert(world.v, insert, event.speed)
    world.a = np.insert(world.a, insert, 0.0)
    world.kinds.insert(insert, KIND_HUMAN)
    world.ids.insert(insert, f"cut{insert:02d}_{event.t:.0f}")
    world.drivers.insert(insert, driver)


def run(scenario: Scenario, sim: SimConfig | None = None,
        controller_params: ControllerParams | None = None,
        plan: PlanProfile | None = None) -> RunResult:
    """Roll a scenario out to its full duration.

    Returns the trajectory set plus the per-step controller log (empty when
    no AV is present).  Collision errors propagate with the last 5 s of
    recorded trajectory attached for diagnosis.
    """
    sim = sim or SimConfig()
    sim.validate()
    world = make_world(scenario)
    rng = np.random.default_rng(sim.seed)

    controller = None
    if world.av_index() is not None:
        controller = AccController(controller_params or ControllerParams())

    rows: dict[str, list[tuple[float, float, float]]] = {
        vid: [] for vid in world.ids}
    kinds = dict(zip(world.ids, world.kinds))
    log: list[Command] = []
    pending = sorted(scenario.cut_in_events, key=lambda e: e.t)

    def record() -> None:
        for i, vid in enumerate(world.ids):
            rows[vid].append((world.t, float(world.y[i]), float(world.v[i])))

    def tail_rows() -> dict[str, list[tuple[float, float, float]]]:
        horizon = world.t - 5.0
        return {vid: [r for r in hist if r[0] >= horizon]
                for vid, hist in rows.items()}

    record()
    n_steps = int(round(scenario.duration / sim.dt))
    try:
        for _ in range(n_steps):
            # half-step slack so float drift in t cannot defer an event
            while pending and pending[0].t <= world.t + 0.5 * sim.dt:
                event = pending.pop(0)
                apply_cut_in(world, event, scenario.driver)
                new_id = world.ids[world.av_index() + 1]
                rows[new_id] = []
                kinds[new_id] = KIND_HUMAN
            av_accel = None
            if controller is not None:
                av = world.av_index()
                reading = sense(world, av, scenario.sensor, rng)
                cmd = controller.step(reading, plan, sim.dt,
                                      y=float(world.y[av]))
                if cmd is None:  # not yet engaged: driver keeps following
                    av_accel = None
                else:
                    log.append(cmd)
                    av_accel = cmd.a_cmd
            integrate_step(world, sim.dt, sim.integrator, av_accel,
                           scenario.leader_profile)
            record()
    except CollisionError as exc:
        exc.tail = tail_rows()
        raise

    trajectories = []
    for vid, hist in rows.items():
        arr = np.array(hist)
        trajectories.append(Trajectory(
            vehicle_id=vid, lane=1, t=arr[:, 0], y=arr[:, 1], v=arr[:, 2],
            kind=kinds[vid]))
    av_id = None
    for vid, kind in kinds.items():
        if kind == KIND_AV:
            av_id = vid
    return RunResult(TrajectorySet(trajectories, av_id=av_id), log)


def ring_scenario(n_vehicles: int = 22, length: float = 260.0,
                  duration: float = 600.0, av_index: int | None = None,
                  perturb_index: int | None = 11, perturb_frac: float = 0.01,
                  driver: HumanDriverParams | None = None,
                  sensor: SensorSpec | None = None) -> Scenario:
    """Evenly spaced ring platoon at the uniform-flow speed.

    One vehicle's initial speed is scaled by (1 + perturb_frac) to seed the
    instability; ``av_index`` turns that slot into the controlled AV.
    """
    driver = driver or HumanDriverParams.unstable_ring()
    spacing = length / n_vehicles
    v_eq = optimal_velocity(spacing, driver)
    vehicles = []
    for i in range(n_vehicles):
        v = v_eq * (1.0 + perturb_frac) if i == perturb_index else v_eq
        kind = KIND_AV if i == av_index else KIND_HUMAN
        vehicles.append(VehicleSpec(kind=kind, y=i * spacing, v=v))
    return Scenario(topology="ring", length=length, vehicles=vehicles,
                    duration=duration, driver=driver,
                    sensor=sensor or SensorSpec())


def open_scenario(n_human: int = 40, av_position: int | None = 20,
                  cruise: float = 28.0, duration: float = 420.0,
                  driver: HumanDriverParams | None = None,
                  leader_profile: LeaderProfile | None = None,
                  sensor: SensorSpec | None = None,
                  cut_in_events: list[CutInEvent] | None = None) -> Scenario:
    """Open-road platoon at cruise equilibrium behind a scripted leader.

    ``av_position`` counts humans behind the AV (0 = rearmost); None keeps
    the platoon all-human.  The default leader script is the three-pulse
    stop-and-go profile.
    """
    driver = driver or HumanDriverParams.open_road()
    spacing = equilibrium_spacing(cruise, driver)
    total = n_human + (1 if av_position is not None else 0)
    vehicles = []
    for i in range(total):
        kind = KIND_AV if av_position is not None and i == av_position else KIND_HUMAN
        vehicles.append(VehicleSpec(kind=kind, y=i * spacing, v=cruise))
    vehicles.append(VehicleSpec(kind=KIND_LEADER, y=total * spacing, v=cruise))
    length = (total + 1) * spacing + cruise * duration + 1000.0
    return Scenario(topology="open", length=length, vehicles=vehicles,
                    duration=duration, driver=driver,
                    leader_profile=leader_profile or LeaderProfile.three_pulse(cruise=cruise),
                    sensor=sensor or SensorSpec(),
                    cut_in_events=cut_in_events or [])


def retype_av_as_human(scenario: Scenario) -> Scenario:
    """Same scenario with the controlled AV driving like everyone else."""
    vehicles = [replace(s, kind=KIND_HUMAN) if s.kind == KIND_AV else replace(s)
                for s in scenario.vehicles]
    return replace(scenario, vehicles=vehicles)
