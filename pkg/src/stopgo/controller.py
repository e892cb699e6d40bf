"""Longitudinal smoothing controller for a single automated vehicle.

The commanded acceleration is the minimum of three limit accelerations:

* a safety barrier that keeps the ego below the speed from which it can
  still stop behind a hard-braking leader,
* a relaxation toward a target speed (local running-mean estimate, or a
  server-provided downstream speed when a fresh plan is available),
* an anticipation term that reacts to the leader's current acceleration.

All functions here are deterministic and side-effect free except for
``command_accel``, which advances the per-vehicle ``ControllerState``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field


class ControllerError(Exception):
    """Base class for controller usage errors."""


class NotEngagedError(ControllerError):
    """Raised when a command is requested while the controller is disengaged."""


class NotInitializedError(ControllerError):
    """Raised when controller memory is queried before the first sample."""


@dataclass
class ControllerParams:
    """Full parameter vector of the controller.

    Units: accelerations m/s^2, speeds m/s, distances m, times s.
    ``a_min`` and ``a_l_min`` are negative (braking capacities of the ego
    and of the assumed worst-case leader).
    """

    a_min: float = -6.0          # ego maximal braking, < 0
    a_l_min: float = -8.0        # assumed leader maximal braking, < 0
    s0: float = 4.0              # minimum safety gap, m
    k: float = 1.0               # proportional gain, 1/s
    c1: float = 1.0              # catching-up weight
    c2: float = 1.0              # gap-surplus scaling
    delta1: float = 1.8          # target time gap, s
    tau: float = 60.0            # running-mean window / wave-period estimate, s
    alpha0: float = 0.8          # planning-mode lower clip factor, in (0, 1)
    alpha1: float = 1.2          # planning-mode upper clip factor, > 1
    v_ref: float = 31.3          # reference upper-bound speed (speed limit), m/s
    a_max: float = 1.5           # maximum commanded acceleration, m/s^2
    k2: float = 0.1              # speed-up branch gain, s/m
    h_correction: float = 2.0    # gap ramp rate during signal loss, m/s
    eps_v: float = 0.1           # speed guard, m/s
    eps_a: float = 0.05          # deceleration-branch trigger, m/s^2
    eps_h: float = 0.1           # degenerate-gap guard, m
    t_filter: float = 0.5        # leader-acceleration filter time constant, s
    plan_staleness: float = 60.0  # max age of a usable plan, s
    # True: planning-mode clip exactly as the nested max prints it.
    # False: clip the downstream speed into [alpha0*v_lead, min(alpha1*v_lead, v_ref)].
    planning_clip_literal: bool = True
    engage_enabled: bool = False
    engage_speed: float = 8.94   # 20 mph

    def validate(self) -> None:
        if not self.a_min < 0:
            raise ValueError(f"a_min must be < 0, got {self.a_min}")
        if not self.a_l_min < 0:
            raise ValueError(f"a_l_min must be < 0, got {self.a_l_min}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if not 0 < self.alpha0 < 1 < self.alpha1:
            raise ValueError(
                f"need 0 < alpha0 < 1 < alpha1, got {self.alpha0}, {self.alpha1}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.a_max > 0:
            raise ValueError(f"a_max must be > 0, got {self.a_max}")
        for name in ("c1", "c2", "delta1", "h_correction", "eps_v", "eps_a",
                     "eps_h", "t_filter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class SensorReading:
    """One time-step of ego measurements.

    ``valid`` is False when the front sensor returned nothing this step; the
    gap and leader-speed fields are then ignored in favor of held values.
    ``a`` is the measured ego acceleration; it is carried for logging only.
    """

    t: float
    v: float
    v_lead: float = 0.0
    h: float = 0.0
    v_rel: float = 0.0
    a: float = 0.0
    valid: bool = True


@dataclass
class PlanProfile:
    """Downstream target-speed profile issued by a planner.

    ``bins`` is an ordered list of ``(lo, hi, v_down)`` entries.  ``by``
    selects whether the intervals index time (s) or ego position (m).
    """

    bins: list[tuple[float, float, float]]
    issued_at: float = 0.0
    by: str = "time"  # "time" | "position"

    def __post_init__(self) -> None:
        if self.by not in ("time", "position"):
            raise ValueError(f"plan keyed by time or position, got {self.by!r}")
        prev_hi = -math.inf
        for lo, hi, v_down in self.bins:
            if hi <= lo or v_down < 0:
                raise ValueError(f"bad plan bin ({lo}, {hi}, {v_down})")
            if lo < prev_hi:
                raise ValueError("plan bins overlap")
            prev_hi = hi

    def lookup(self, t: float, y: float | None = None) -> float | None:
        """Return v_down for the current time/position, or None if uncovered."""
        key = t if self.by == "time" else y
        if key is None:
            return None
        for lo, hi, v_down in self.bins:
            if lo <= key < hi:
                return v_down
        return None


@dataclass
class ControllerState:
    """Persistent controller memory for one vehicle.

    The lead-speed buffer stores ``(t, v_lead, cumulative trapezoid
    integral)`` so the running mean is O(1) per step.  Held values carry the
    last valid measurement through signal-loss intervals.
    """

    lead_speed_buffer: deque = field(default_factory=deque)
    held_v_lead: float = 0.0
    held_h: float = 0.0
    t_last_valid: float = math.nan
    a_lead_est: float = 0.0
    engaged: bool = True
    t_first_sample: float = math.nan
    signal_lost: bool = False

    @property
    def cold(self) -> bool:
        """True until two samples exist (no finite-difference yet)."""
        return len(self.lead_speed_buffer) < 2


@dataclass
class Command:
    """Breakdown of one commanded step (effective inputs + module outputs)."""

    t: float
    h: float
    v: float
    v_lead: float
    a_safe: float
    a_target: float
    a_mpc: float
    a_cmd: float
    mode: str
    signal_valid: bool


def safe_speed(h: float, v_lead: float, params: ControllerParams) -> float:
    """Highest ego speed from which a stop behind a hard-braking leader is possible.

    sqrt(2|a_min| (h - s0 + v_lead^2 / (2|a_l_min|))), clamped to 0 when the
    radicand is non-positive (already inside the unsafe zone).
    """
    radicand = 2.0 * abs(params.a_min) * (
        h - params.s0 + 0.5 * v_lead * v_lead / abs(params.a_l_min))
    if radicand <= 0.0:
        return 0.0
    return math.sqrt(radicand)


def safe_speed_rate(h: float, v: float, v_lead: float, a_lead_est: float,
                    params: ControllerParams) -> float:
    """Time derivative of the safe speed (chain rule on its definition).

    Uses dh/dt = v_lead - v and the filtered leader-acceleration estimate.
    Zeroed when the safe speed is at or below the eps_v floor; there the
    degenerate-gap override governs instead.
    """
    v_safe = safe_speed(h, v_lead, params)
    if v_safe <= params.eps_v:
        return 0.0
    return abs(params.a_min) * (
        (v_lead - v) + v_lead * a_lead_est / abs(params.a_l_min)) / v_safe


def safe_accel(v: float, v_safe: float, dv_safe_dt: float,
               params: ControllerParams) -> float:
    """Barrier acceleration: -k (v - v_safe) + dv_safe/dt."""
    return -params.k * (v - v_safe) + dv_safe_dt


def target_accel(v: float, v_target: float, params: ControllerParams) -> float:
    """Relaxation toward the target speed: -k (v - v_target)."""
    return -params.k * (v - v_target)


def target_speed_local(v_bar_lead: float, h: float, v: float,
                       params: ControllerParams) -> float:
    """Local-mode target speed: mean leader speed plus a catch-up correction.

    v_bar_lead + c1 * max(0, c2 (h - delta1 v)) / max(1, v)^2.  The surplus
    term closes gaps opened while trailing the mean; the denominator keeps
    it gentle at speed and bounded near standstill.
    """
    surplus = max(0.0, params.c2 * (h - params.delta1 * v))
    return v_bar_lead + params.c1 * surplus / max(1.0, v) ** 2


def target_speed_planning(v_down: float, v_lead: float,
                          params: ControllerParams,
                          clip_upper: bool = True) -> float:
    """Planning-mode target speed from the downstream profile value.

    The default form is the nested max exactly as designed:
    max(max(v_down, alpha0 v_lead), min(alpha1 v_lead, v_ref)).  With
    ``planning_clip_literal`` False the outer max becomes a min, so the
    downstream speed really is clipped to within a factor of the leader
    speed.  ``clip_upper`` False (signal lost) drops the alpha1 v_lead
    term, leaving v_ref as the only cap.
    """
    lower = max(v_down, params.alpha0 * v_lead)
    upper = params.v_ref if not clip_upper else min(
        params.alpha1 * v_lead, params.v_ref)
    if params.planning_clip_literal:
        return max(lower, upper)
    return min(lower, upper)


def lead_speed_running_mean(buffer, t: float, params: ControllerParams) -> float:
    """Trapezoidal running mean of the buffered leader speed.

    Averages over everything seen so far while the elapsed time is within
    tau, and over the trailing tau-window afterwards (left edge obtained by
    linear interpolation between the two bracketing samples).

    Args:
        buffer: sequence of (t, v_lead, cumulative_integral) tuples, ordered
            by time; normally ``ControllerState.lead_speed_buffer``.
        t: current time, s.

    Raises:
        NotInitializedError: if the buffer is empty.
    """
    if len(buffer) == 0:
        raise NotInitializedError("lead-speed buffer is empty")
    t0, v0, i0 = buffer[0]
    tn, vn, i_n = buffer[-1]
    # Held-last extension covers a query slightly past the newest sample.
    i_end = i_n + vn * max(0.0, t - tn)
    elapsed = max(t, tn) - t0
    if elapsed <= 0.0:
        return vn
    if elapsed <= params.tau:
        return (i_end - i0) / elapsed
    # Trailing window [t - tau, t]: find the first sample at/after the cut
    # and interpolate the integral at the cut itself.
    cut = max(t, tn) - params.tau
    lo = 0
    hi = len(buffer) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if buffer[mid][0] < cut:
            lo = mid + 1
        else:
            hi = mid
    t_r, v_r, i_r = buffer[lo]
    if t_r == cut:
        return (i_end - i_r) / params.tau
    t_l, v_l, i_l = buffer[lo - 1]
    w = (cut - t_l) / (t_r - t_l)
    v_cut = v_l + w * (v_r - v_l)
    i_cut = i_l + 0.5 * (v_l + v_cut) * (cut - t_l)
    return (i_end - i_cut) / params.tau


def estimate_lead_accel(buffer, params: ControllerParams,
                        prev_estimate: float = 0.0) -> tuple[float, bool]:
    """Low-pass-filtered finite difference of the buffered leader speed.

    First-order filter with time constant ``t_filter`` applied to the raw
    backward difference of the two newest samples.  Returns ``(estimate,
    cold)``; cold means fewer than two samples, where the estimate is 0.
    """
    if len(buffer) < 2:
        return 0.0, True
    t1, v1, _ = buffer[-2]
    t2, v2, _ = buffer[-1]
    dt = t2 - t1
    if dt <= 0.0:
        return prev_estimate, False
    raw = (v2 - v1) / dt
    alpha = 1.0 - math.exp(-dt / params.t_filter) if params.t_filter > 0 else 1.0
    return prev_estimate + alpha * (raw - prev_estimate), False


def mpc_min_brake(h: float, v: float, v_lead: float, a_lead: float,
                  params: ControllerParams) -> float:
    """Mildest constant deceleration that still stops behind the braking leader.

    Only meaningful on the deceleration branch (a_lead < -eps_a); calling it
    elsewhere is a branch-selection bug and raises.  A near-stationary
    leader contributes no stopping distance (its quadratic term is zeroed).
    """
    if a_lead >= -params.eps_a:
        raise ValueError(
            f"mpc_min_brake requires a decelerating leader, got a_lead={a_lead}")
    lead_term = 0.0
    if v_lead >= params.eps_v:
        lead_term = 0.5 * v_lead * v_lead / (-a_lead)
    return -(0.5 * v * v) / (h - params.s0 + lead_term)


def mpc_accel(h: float, v: float, v_lead: float, a_lead: float,
              params: ControllerParams) -> float:
    """Anticipation acceleration reacting to the leader's current behavior.

    Deceleration system (a_lead < -eps_a): minimum braking when it still
    clears the safety distance, else follow the leader's proportional slow-
    down, else a gap-consuming fallback.  Speed-up system otherwise, built
    to join the deceleration branches continuously.  A leader below eps_v
    replaces the v/v_lead scaling with the minimum-braking value.  The gap
    margin h - s0 is floored at eps_h so the function stays total.
    """
    margin = max(h - params.s0, params.eps_h)
    if a_lead < -params.eps_a:
        a_min_brake = mpc_min_brake(params.s0 + margin, v, v_lead, a_lead,
                                    params)
        if v_lead >= params.eps_v:
            follow = a_lead * v / v_lead
        else:
            follow = a_min_brake
        p1 = a_min_brake - follow
        p2 = v_lead - v
        if p1 > 0.0:
            return a_min_brake
        if p2 >= 0.0:
            return follow
        return a_lead - (v - v_lead) ** 2 / (2.0 * margin)
    p2 = v_lead - v
    if p2 < 0.0:
        return a_lead - (v - v_lead) ** 2 / (2.0 * margin)
    return min(params.a_max, a_lead * (1.0 + params.k2 * p2))


def apply_signal_loss(state: ControllerState, dt: float,
                      params: ControllerParams) -> tuple[float, float]:
    """Advance the held gap/speed through one lost step.

    The held leader speed stays frozen; the held gap ramps up by
    dt * h_correction so the safe and target speeds recover gradually
    instead of locking the ego behind a stale, pessimistic measurement.
    Returns the updated (held_h, held_v_lead).
    """
    state.held_h += dt * params.h_correction
    state.signal_lost = True
    return state.held_h, state.held_v_lead


def _check_finite(reading: SensorReading) -> None:
    for name in ("t", "v", "v_lead", "h", "v_rel", "a"):
        value = getattr(reading, name)
        if not math.isfinite(value):
            raise ValueError(f"non-finite sensor input: {name}={value}")


def _buffer_append(state: ControllerState, t: float, v_lead: float,
                   params: ControllerParams) -> None:
    buf = state.lead_speed_buffer
    if buf:
        t_prev, v_prev, i_prev = buf[-1]
        if t <= t_prev:
            return
        i_new = i_prev + 0.5 * (v_prev + v_lead) * (t - t_prev)
    else:
        i_new = 0.0
        state.t_first_sample = t
    buf.append((t, v_lead, i_new))
    # Keep one sample beyond the tau window for left-edge interpolation.
    cut = t - params.tau
    while len(buf) > 2 and buf[1][0] <= cut:
        buf.popleft()


def command_accel(reading: SensorReading, state: ControllerState,
                  params: ControllerParams, plan: PlanProfile | None = None,
                  dt: float = 0.05, y: float | None = None) -> Command:
    """One full controller step: returns the command breakdown, updates state.

    Orchestrates signal-loss handling, the leader-acceleration estimate,
    mode selection (planning iff a fresh plan covers the current step, else
    local) and the three module accelerations; the command is their minimum
    clamped to [a_min, a_max].  A gap at or below s0 + eps_h overrides
    everything with full braking.

    Args:
        reading: current sensor measurements (held values used when invalid).
        state: persistent controller memory, advanced in place.
        plan: optional downstream speed profile.
        dt: controller period, s.
        y: ego position, m; only needed for position-keyed plans.

    Raises:
        NotEngagedError: if the controller is not engaged.
        ValueError: on non-finite input, naming the offending field.
    """
    if not state.engaged:
        raise NotEngagedError("controller is not engaged")
    _check_finite(reading)

    if reading.valid:
        state.held_v_lead = reading.v_lead
        state.held_h = reading.h
        state.t_last_valid = reading.t
        state.signal_lost = False
        h = reading.h
        v_lead = reading.v_lead
    else:
        h, v_lead = apply_signal_loss(state, dt, params)
    v = reading.v

    _buffer_append(state, reading.t, v_lead, params)
    state.a_lead_est, est_cold = estimate_lead_accel(
        state.lead_speed_buffer, params, state.a_lead_est)
    # with no finite-difference history yet, the barrier rate term assumes
    # the leader is at its braking limit rather than trusting the zero
    # estimate; one conservative step beats engaging into a closing gap
    rate_est = params.a_l_min if est_cold else state.a_lead_est

    v_down = None
    if plan is not None and reading.t - plan.issued_at < params.plan_staleness:
        v_down = plan.lookup(reading.t, y)
    mode = "planning" if v_down is not None else "local"

    if h <= params.s0 + params.eps_h:
        a = params.a_min
        return Command(reading.t, h, v, v_lead, a, a, a, a, mode,
                       reading.valid)

    v_safe = safe_speed(h, v_lead, params)
    dvs = safe_speed_rate(h, v, v_lead, rate_est, params)
    a_safe = safe_accel(v, v_safe, dvs, params)

    if mode == "planning":
        v_target = target_speed_planning(
            v_down, v_lead, params, clip_upper=not state.signal_lost)
    else:
        v_bar = lead_speed_running_mean(state.lead_speed_buffer, reading.t,
                                        params)
        v_target = target_speed_local(v_bar, h, v, params)
    a_target = target_accel(v, v_target, params)

    a_mpc = mpc_accel(h, v, v_lead, state.a_lead_est, params)

    a_cmd = min(a_safe, a_target, a_mpc)
    a_cmd = min(max(a_cmd, params.a_min), params.a_max)
    return Command(reading.t, h, v, v_lead, a_safe, a_target, a_mpc, a_cmd,
                   mode, reading.valid)


class AccController:
    """Convenience wrapper owning one params + state pair.

    ``step`` applies engagement gating when enabled: below the engagement
    speed the controller stays disengaged and returns None.
    """

    def __init__(self, params: ControllerParams | None = None):
        self.params = params or ControllerParams()
        self.params.validate()
        self.state = ControllerState(engaged=not self.params.engage_enabled)

    def step(self, reading: SensorReading, plan: PlanProfile | None = None,
             dt: float = 0.05, y: float | None = None) -> Command | None:
        if self.params.engage_enabled and not self.state.engaged:
            if reading.v > self.params.engage_speed:
                self.state.engaged = True
            else:
                return None
        return command_accel(reading, self.state, self.params, plan, dt, y)
