"""Integration-level tests for the platoon simulator."""

import math

import numpy as np
import pytest

from stopgo.controller import ControllerParams
from stopgo.drivers import CollisionError, HumanDriverParams, optimal_velocity
from stopgo.simulation import (
    KIND_AV,
    KIND_HUMAN,
    KIND_LEADER,
    CutInEvent,
    LeaderProfile,
    Scenario,
    SensorSpec,
    SimConfig,
    VehicleSpec,
    World,
    apply_cut_in,
    integrate_step,
    make_world,
    open_scenario,
    retype_av_as_human,
    ring_scenario,
    run,
    sense,
)

RING = HumanDriverParams.unstable_ring()


def single_vehicle_world(v0=0.0, kind=KIND_AV):
    return World(0.0, np.array([0.0]), np.array([float(v0)]), np.zeros(1),
                 [kind], ["solo"], [RING], None)


# ---------------------------------------------------------------- profiles

def test_leader_profile_constant_and_held_ends():
    p = LeaderProfile([(10.0, 5.0), (20.0, 15.0)])
    assert p.speed_at(0.0) == 5.0
    assert p.speed_at(15.0) == 10.0
    assert p.speed_at(99.0) == 15.0
    assert LeaderProfile.constant(7.0).speed_at(123.0) == 7.0


def test_three_pulse_shape():
    p = LeaderProfile.three_pulse(cruise=28.0, low=3.0)
    speeds = [v for _, v in p.breakpoints]
    assert speeds[0] == 28.0
    assert speeds.count(3.0) == 6  # drop + hold endpoint per pulse
    assert p.speed_at(0.0) == 28.0
    assert min(speeds) == 3.0


# ---------------------------------------------------------------- stepping

def test_constant_accel_speed_and_position_exact():
    world = single_vehicle_world()
    for _ in range(20):
        integrate_step(world, 0.05, "euler", av_accel=1.0)
    assert world.v[0] == pytest.approx(1.0, abs=1e-12)
    # kinematic update integrates constant acceleration exactly
    assert world.y[0] == pytest.approx(0.5, abs=1e-12)


def test_braking_vehicle_stops_without_reversing():
    world = single_vehicle_world(v0=0.1)
    integrate_step(world, 0.05, "euler", av_accel=-6.0)
    assert world.v[0] == 0.0
    assert world.y[0] == pytest.approx(0.1 ** 2 / 12.0, abs=1e-15)
    y_stop = world.y[0]
    integrate_step(world, 0.05, "euler", av_accel=-6.0)
    assert world.v[0] == 0.0
    assert world.y[0] == y_stop  # commanded braking at standstill holds position


def test_unknown_integrator_rejected():
    world = single_vehicle_world()
    with pytest.raises(ValueError):
        integrate_step(world, 0.05, "heun")


@pytest.mark.parametrize("integrator", ["euler", "rk4"])
def test_ring_equilibrium_is_fixed_point(integrator):
    scenario = ring_scenario(duration=1.0, perturb_index=None)
    world = make_world(scenario)
    v_eq = optimal_velocity(260.0 / 22.0, RING)
    for _ in range(50):
        integrate_step(world, 0.05, integrator)
    assert np.max(np.abs(world.v - v_eq)) < 1e-12
    spacings = np.array([world.spacing(i) for i in range(world.n)])
    assert np.max(np.abs(spacings - 260.0 / 22.0)) < 1e-9


def test_euler_error_shrinks_linearly():
    def final_positions(dt, integrator):
        profile = LeaderProfile([(0.0, 28.0), (2.0, 27.0), (4.0, 25.0),
                                 (6.0, 25.5), (8.0, 27.0), (10.0, 28.0)])
        scenario = open_scenario(n_human=3, av_position=None, duration=10.0,
                                 leader_profile=profile)
        result = run(scenario, SimConfig(dt=dt, integrator=integrator))
        return np.array(sorted(tr.y[-1] for tr in result.trajectories))

    ref = final_positions(0.001, "rk4")
    err_coarse = np.max(np.abs(final_positions(0.1, "euler") - ref))
    err_fine = np.max(np.abs(final_positions(0.05, "euler") - ref))
    assert err_fine < err_coarse
    ratio = err_coarse / err_fine
    assert 1.5 < ratio < 2.8  # first-order convergence


# ---------------------------------------------------------------- invariants

def test_ring_spacings_sum_to_length():
    result = run(ring_scenario(duration=30.0), SimConfig())
    ys = np.stack([tr.y for tr in result.trajectories])  # vehicle x time
    gaps = np.diff(np.vstack([ys, ys[:1] + 260.0]), axis=0) % 260.0
    totals = gaps.sum(axis=0)
    assert np.max(np.abs(totals - 260.0)) < 1e-9


def test_no_teleport_bound():
    result = run(ring_scenario(duration=30.0), SimConfig())
    dt = 0.05
    for tr in result.trajectories:
        dy = np.diff(tr.y) % 260.0
        dv = np.diff(tr.v)
        a_bound = np.max(np.abs(dv)) / dt
        limit = tr.v[:-1] * dt + 0.5 * a_bound * dt * dt + 1e-9
        assert np.all(dy <= limit)


def test_runs_are_bit_deterministic():
    scenario = ring_scenario(duration=20.0, av_index=0)
    scenario.sensor = SensorSpec(dropout_prob=0.05)
    r1 = run(scenario, SimConfig(seed=7))
    r2 = run(scenario, SimConfig(seed=7))
    for t1, t2 in zip(r1.trajectories, r2.trajectories):
        assert np.array_equal(t1.y, t2.y) and np.array_equal(t1.v, t2.v)
    assert [c.a_cmd for c in r1.controller_log] == [
        c.a_cmd for c in r2.controller_log]


def test_disengaged_av_drives_like_a_human():
    # ring speeds stay below the 8.94 m/s engagement threshold early on
    scenario = ring_scenario(duration=20.0, av_index=3)
    params = ControllerParams(engage_enabled=True)
    with_av = run(scenario, SimConfig(), controller_params=params)
    baseline = run(retype_av_as_human(scenario), SimConfig())
    assert len(with_av.controller_log) == 0
    for t1, t2 in zip(with_av.trajectories, baseline.trajectories):
        assert np.array_equal(t1.y, t2.y)
        assert np.array_equal(t1.v, t2.v)


def test_open_platoon_returns_to_cruise():
    scenario = open_scenario(n_human=5, av_position=None, duration=90.0,
                             leader_profile=LeaderProfile.constant(28.0))
    scenario.vehicles[2].v = 26.0  # knock one vehicle off equilibrium
    result = run(scenario, SimConfig())
    final = np.array([tr.v[-1] for tr in result.trajectories])
    assert np.var(final) < 1e-4
    assert np.max(np.abs(final - 28.0)) < 0.05


# ---------------------------------------------------------------- sensing

def test_sense_reports_bumper_gap():
    world = World(0.0, np.array([0.0, 30.0]), np.array([10.0, 12.0]),
                  np.zeros(2), [KIND_AV, KIND_HUMAN], ["av", "h01"],
                  [RING, RING], None)
    reading = sense(world, 0, SensorSpec(), np.random.default_rng(0))
    assert reading.valid
    assert reading.h == pytest.approx(30.0 - RING.l_veh)
    assert reading.v_lead == 12.0
    assert reading.v_rel == pytest.approx(2.0)


def test_sense_range_limit_and_dropout():
    world = World(0.0, np.array([0.0, 200.0]), np.array([10.0, 12.0]),
                  np.zeros(2), [KIND_AV, KIND_HUMAN], ["av", "h01"],
                  [RING, RING], None)
    reading = sense(world, 0, SensorSpec(range_max=120.0),
                    np.random.default_rng(0))
    assert not reading.valid
    near = World(0.0, np.array([0.0, 30.0]), np.array([10.0, 12.0]),
                 np.zeros(2), [KIND_AV, KIND_HUMAN], ["av", "h01"],
                 [RING, RING], None)
    spec = SensorSpec(dropout_intervals=[(0.0, 1.0)])
    assert not sense(near, 0, spec, np.random.default_rng(0)).valid
    near.t = 2.0
    assert sense(near, 0, spec, np.random.default_rng(0)).valid


def test_sense_without_leader_is_invalid():
    world = single_vehicle_world(v0=5.0)
    reading = sense(world, 0, SensorSpec(), np.random.default_rng(0))
    assert not reading.valid
    assert reading.v == 5.0


# ---------------------------------------------------------------- cut-ins

def test_cut_in_inserts_vehicle_ahead_of_av():
    scenario = open_scenario(n_human=6, av_position=3, duration=12.0,
                             leader_profile=LeaderProfile.constant(28.0),
                             cut_in_events=[CutInEvent(t=5.0, gap=20.0,
                                                       speed=28.0)])
    result = run(scenario, SimConfig())
    cut = [tr for tr in result.trajectories if tr.vehicle_id.startswith("cut")]
    assert len(cut) == 1
    assert cut[0].t[0] == pytest.approx(5.05, abs=1e-6)
    av = result.trajectories.av
    i = np.searchsorted(av.t, cut[0].t[0])
    # inserted front-to-front spacing = requested bumper gap + vehicle length
    assert cut[0].y[0] - av.y[i] == pytest.approx(20.0 + 4.5, abs=0.5)


def test_cut_in_inside_safety_gap_forces_full_braking():
    scenario = open_scenario(n_human=6, av_position=3, duration=8.0,
                             leader_profile=LeaderProfile.constant(28.0),
                             cut_in_events=[CutInEvent(t=5.0, gap=3.5,
                                                       speed=28.0)])
    result = run(scenario, SimConfig())
    after = [c for c in result.controller_log if c.t >= 5.0 - 0.026]
    assert after[0].a_cmd == -6.0  # degenerate-gap override


def test_apply_cut_in_validation():
    world = World(0.0, np.array([0.0, 30.0]), np.array([10.0, 10.0]),
                  np.zeros(2), [KIND_AV, KIND_HUMAN], ["av", "h01"],
                  [RING, RING], None)
    with pytest.raises(ValueError):
        apply_cut_in(world, CutInEvent(1.0, 0.0, 10.0), RING)
    with pytest.raises(ValueError):
        # 30 m spacing cannot absorb a 28 m gap plus two vehicle lengths
        apply_cut_in(world, CutInEvent(1.0, 28.0, 10.0), RING)
    humans_only = World(0.0, np.array([0.0, 30.0]), np.array([10.0, 10.0]),
                        np.zeros(2), [KIND_HUMAN, KIND_HUMAN], ["a", "b"],
                        [RING, RING], None)
    with pytest.raises(ValueError):
        apply_cut_in(humans_only, CutInEvent(1.0, 10.0, 10.0), RING)


# ---------------------------------------------------------------- failures

def test_collision_carries_diagnostics():
    # a near-unresponsive driver carries cruise speed into a stopped leader
    weak = HumanDriverParams(a_ftl=0.1, b_ov=0.05, v_max=30.0, d0=20.0,
                             l_veh=4.5)
    vehicles = [VehicleSpec(KIND_HUMAN, 0.0, 30.0),
                VehicleSpec(KIND_LEADER, 30.0, 0.0)]
    scenario = Scenario(topology="open", length=1000.0, vehicles=vehicles,
                        duration=30.0, driver=weak,
                        leader_profile=LeaderProfile.constant(0.0))
    with pytest.raises(CollisionError) as excinfo:
        run(scenario, SimConfig())
    err = excinfo.value
    assert err.follower == "h00" and err.leader == "lead"
    assert err.t is not None and err.t < 5.0
    assert set(err.tail) == {"h00", "lead"}
    for rows in err.tail.values():
        assert rows and rows[-1][0] - rows[0][0] <= 5.0 + 1e-9


def test_scenario_validation():
    two_avs = [VehicleSpec(KIND_AV, 0.0, 5.0), VehicleSpec(KIND_AV, 20.0, 5.0)]
    with pytest.raises(ValueError):
        Scenario("ring", 100.0, two_avs, 10.0).validate()
    with pytest.raises(ValueError):
        Scenario("loop", 100.0, [VehicleSpec(KIND_HUMAN, 0.0, 5.0)],
                 10.0).validate()
    lead_mid = [VehicleSpec(KIND_LEADER, 0.0, 5.0),
                VehicleSpec(KIND_HUMAN, 20.0, 5.0)]
    with pytest.raises(ValueError):
        Scenario("open", 100.0, lead_mid, 10.0,
                 leader_profile=LeaderProfile.constant(5.0)).validate()
    ring_lead = [VehicleSpec(KIND_HUMAN, 0.0, 5.0),
                 VehicleSpec(KIND_LEADER, 20.0, 5.0)]
    with pytest.raises(ValueError):
        Scenario("ring", 100.0, ring_lead, 10.0,
                 leader_profile=LeaderProfile.constant(5.0)).validate()
    no_profile = [VehicleSpec(KIND_HUMAN, 0.0, 5.0),
                  VehicleSpec(KIND_LEADER, 20.0, 5.0)]
    with pytest.raises(ValueError):
        Scenario("open", 100.0, no_profile, 10.0).validate()


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0).validate()
    with pytest.raises(ValueError):
        SimConfig(integrator="verlet").validate()


# ---------------------------------------------------------------- results

def test_run_without_av_has_empty_log():
    result = run(ring_scenario(duration=5.0), SimConfig())
    assert result.controller_log == []
    with pytest.raises(KeyError):
        _ = result.trajectories.av


def test_trajectory_set_accessors():
    result = run(ring_scenario(duration=5.0, av_index=2), SimConfig())
    assert result.trajectories.av.vehicle_id == "av"
    with pytest.raises(KeyError):
        result.trajectories.get("nope")
    lo, hi = result.trajectories.time_span()
    assert lo == 0.0 and hi == pytest.approx(5.0)
    assert len(result.trajectories) == 22
    assert all(len(tr.t) == 101 for tr in result.trajectories)
