"""Straight-line reimplementations of the controller formulas.

Everything here takes plain floats and standard containers, shares no code
with the package, and favors obviousness over speed.  Used as the reference
side of the formula-oracle suite.
"""

import math


def safe_speed(h, v_lead, a_min, a_l_min, s0):
    inner = h - s0 + v_lead * v_lead / (2.0 * abs(a_l_min))
    r = 2.0 * abs(a_min) * inner
    if r <= 0.0:
        return 0.0
    return math.sqrt(r)


def safe_speed_rate(h, v, v_lead, a_lead_est, a_min, a_l_min, s0, eps_v):
    vs = safe_speed(h, v_lead, a_min, a_l_min, s0)
    if vs <= eps_v:
        return 0.0
    num = (v_lead - v) + v_lead * a_lead_est / abs(a_l_min)
    return abs(a_min) * num / max(vs, eps_v)


def safe_accel(v, v_safe, dv_safe_dt, k):
    return -k * (v - v_safe) + dv_safe_dt


def target_accel(v, v_target, k):
    return -k * (v - v_target)


def target_speed_local(v_bar_lead, h, v, c1, c2, delta1):
    surplus = c2 * (h - delta1 * v)
    if surplus < 0.0:
        surplus = 0.0
    denom = max(1.0, v)
    return v_bar_lead + c1 * surplus / (denom * denom)


def target_speed_planning(v_down, v_lead, alpha0, alpha1, v_ref,
                          literal=True, clip_upper=True):
    lower = max(v_down, alpha0 * v_lead)
    if clip_upper:
        upper = min(alpha1 * v_lead, v_ref)
    else:
        upper = v_ref
    if literal:
        return max(lower, upper)
    return min(lower, upper)


def running_mean(samples, t, tau):
    """Trapezoid mean over the trailing tau-window of a piecewise-linear signal.

    samples: list of (t_i, v_i), strictly increasing t_i.  A query past the
    last sample extends it as a constant.
    """
    ts = [s[0] for s in samples]
    vs = [s[1] for s in samples]
    t_end = max(t, ts[-1])
    if t_end > ts[-1]:
        ts = ts + [t_end]
        vs = vs + [vs[-1]]

    def value_at(x):
        if x <= ts[0]:
            return vs[0]
        for i in range(1, len(ts)):
            if x <= ts[i]:
                w = (x - ts[i - 1]) / (ts[i] - ts[i - 1])
                return vs[i - 1] + w * (vs[i] - vs[i - 1])
        return vs[-1]

    lo = max(ts[0], t_end - tau)
    if t_end - ts[0] <= 0.0:
        return vs[-1]
    nodes = [lo] + [x for x in ts if lo < x < t_end] + [t_end]
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        total += 0.5 * (value_at(a) + value_at(b)) * (b - a)
    return total / (t_end - lo)


def lead_accel_filter(samples, t_filter):
    """Replay the low-pass filter over consecutive finite differences.

    samples: list of (t_i, v_i), strictly increasing.  Returns (estimate,
    cold); cold when fewer than two samples.
    """
    if len(samples) < 2:
        return 0.0, True
    est = 0.0
    for (t1, v1), (t2, v2) in zip(samples[:-1], samples[1:]):
        dt = t2 - t1
        raw = (v2 - v1) / dt
        alpha = 1.0 - math.exp(-dt / t_filter) if t_filter > 0 else 1.0
        est = est + alpha * (raw - est)
    return est, False


def mpc_min_brake(h, v, v_lead, a_lead, s0, eps_v):
    lead_term = 0.0
    if v_lead >= eps_v:
        lead_term = v_lead * v_lead / (2.0 * (-a_lead))
    return -(v * v / 2.0) / (h - s0 + lead_term)


def mpc_accel(h, v, v_lead, a_lead, s0, eps_v, eps_a, eps_h, a_max, k2):
    margin = h - s0
    if margin < eps_h:
        margin = eps_h
    if a_lead < -eps_a:
        amb = mpc_min_brake(s0 + margin, v, v_lead, a_lead, s0, eps_v)
        if v_lead >= eps_v:
            follow = a_lead * v / v_lead
        else:
            follow = amb
        p1 = amb - follow
        p2 = v_lead - v
        if p1 > 0.0:
            return amb
        if p2 >= 0.0:
            return follow
        return a_lead - (v - v_lead) ** 2 / (2.0 * margin)
    p2 = v_lead - v
    if p2 < 0.0:
        return a_lead - (v - v_lead) ** 2 / (2.0 * margin)
    return min(a_max, a_lead * (1.0 + k2 * p2))


class CommandReplay:
    """Plain-python replay of the full per-step command pipeline.

    Keeps its own copies of the held values, sample history and filter
    state; feed readings in time order and compare the returned tuple
    against the package's Command fields.
    """

    def __init__(self, p):
        # p: dict of parameter floats (a_min, a_l_min, s0, k, c1, c2,
        # delta1, tau, alpha0, alpha1, v_ref, a_max, k2, h_correction,
        # eps_v, eps_a, eps_h, t_filter, plan_staleness, literal)
        self.p = p
        self.samples = []
        self.held_h = 0.0
        self.held_v_lead = 0.0
        self.est = 0.0
        self.lost = False

    def step(self, t, v, v_lead, h, valid, dt, plan=None, y=None):
        p = self.p
        if valid:
            self.held_h = h
            self.held_v_lead = v_lead
            self.lost = False
            h_eff, vl_eff = h, v_lead
        else:
            self.held_h += dt * p["h_correction"]
            self.lost = True
            h_eff, vl_eff = self.held_h, self.held_v_lead

        if not self.samples or t > self.samples[-1][0]:
            self.samples.append((t, vl_eff))
        cold = len(self.samples) < 2
        if not cold:
            t1, v1 = self.samples[-2]
            t2, v2 = self.samples[-1]
            ddt = t2 - t1
            raw = (v2 - v1) / ddt
            alpha = 1.0 - math.exp(-ddt / p["t_filter"]) if p["t_filter"] > 0 else 1.0
            self.est = self.est + alpha * (raw - self.est)
        rate_est = p["a_l_min"] if cold else self.est

        v_down = None
        if plan is not None and t - plan["issued_at"] < p["plan_staleness"]:
            key = t if plan["by"] == "time" else y
            if key is not None:
                for lo, hi, vd in plan["bins"]:
                    if lo <= key < hi:
                        v_down = vd
                        break
        mode = "planning" if v_down is not None else "local"

        if h_eff <= p["s0"] + p["eps_h"]:
            a = p["a_min"]
            return (t, h_eff, v, vl_eff, a, a, a, a, mode, valid)

        a_s = safe_accel(
            v, safe_speed(h_eff, vl_eff, p["a_min"], p["a_l_min"], p["s0"]),
            safe_speed_rate(h_eff, v, vl_eff, rate_est, p["a_min"],
                            p["a_l_min"], p["s0"], p["eps_v"]),
            p["k"])
        if mode == "planning":
            v_t = target_speed_planning(v_down, vl_eff, p["alpha0"],
                                        p["alpha1"], p["v_ref"],
                                        p["literal"], not self.lost)
        else:
            v_bar = running_mean(self.samples, t, p["tau"])
            v_t = target_speed_local(v_bar, h_eff, v, p["c1"], p["c2"],
                                     p["delta1"])
        a_t = target_accel(v, v_t, p["k"])
        a_m = mpc_accel(h_eff, v, vl_eff, self.est, p["s0"], p["eps_v"],
                        p["eps_a"], p["eps_h"], p["a_max"], p["k2"])
        a_cmd = min(a_s, a_t, a_m)
        a_cmd = min(max(a_cmd, p["a_min"]), p["a_max"])
        return (t, h_eff, v, vl_eff, a_s, a_t, a_m, a_cmd, mode, valid)


def params_dict(cp):
    """Flatten a ControllerParams-like object into the replay's dict."""
    return {
        "a_min": cp.a_min, "a_l_min": cp.a_l_min, "s0": cp.s0, "k": cp.k,
        "c1": cp.c1, "c2": cp.c2, "delta1": cp.delta1, "tau": cp.tau,
        "alpha0": cp.alpha0, "alpha1": cp.alpha1, "v_ref": cp.v_ref,
        "a_max": cp.a_max, "k2": cp.k2, "h_correction": cp.h_correction,
        "eps_v": cp.eps_v, "eps_a": cp.eps_a, "eps_h": cp.eps_h,
        "t_filter": cp.t_filter, "plan_staleness": cp.plan_staleness,
        "literal": cp.planning_clip_literal,
    }
