"""Time-domain integration of the switched GFL/GFM system.

Fixed-step RK4 over the nonlinear subsystem models, scripted grid-condition
scenarios, switching policies (none, SCR threshold, CSI with hysteresis),
and bumpless mode transfer: physical states are carried across a switch
unchanged while the incoming controller's integrators are back-solved so
its current and inverter-voltage references match the outgoing controller's
at the instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .equilibrium import solve_equilibrium
from .model import (
    GFL_DIM,
    GFM_DIM,
    GflGains,
    GfmGains,
    Setpoint,
    SystemParams,
    gfl_derivatives,
    gfm_derivatives,
    power_outputs,
)
from .smallsignal import Linearization

__all__ = [
    "SimError",
    "GFL",
    "GFM",
    "Event",
    "Scenario",
    "NoSwitch",
    "ScrThreshold",
    "CsiBased",
    "TraceRecord",
    "rk4_step",
    "integrate",
    "bumpless_transfer",
    "decide_switch",
    "simulate",
    "linear_response",
    "rmse",
    "classify_trace",
    "switch_times",
    "trace_arrays",
    "save_trace",
    "load_trace",
    "save_scenario",
    "load_scenario",
]

GFL = 1
GFM = 2

DT_DEFAULT = 2e-5          # resolves the fastest ICL mode with >= 50 steps
POLICY_DT = 1e-3
DIVERGENCE_LIMIT = 1e3
EPS_H_DEFAULT = 0.05

_EVENT_KEYS = {"scr", "x_over_r", "v_g", "p_ref", "q_ref", "vd_ref", "vq_ref",
               "step_p_ref", "step_q_ref"}


class SimError(RuntimeError):
    """Raised for invalid scenarios, policies, or transfer solves."""


@dataclass(frozen=True)
class Event:
    """A scripted change of grid condition or setpoint at a given time."""

    time: float
    key: str
    value: float

    def __post_init__(self):
        if self.key not in _EVENT_KEYS:
            raise SimError(f"unknown event key {self.key!r}")


@dataclass(frozen=True)
class Scenario:
    duration: float
    dt: float = DT_DEFAULT
    sigma0: int = GFL
    events: tuple = ()

    def __post_init__(self):
        if self.duration <= 0 or self.dt <= 0:
            raise SimError("duration and dt must be positive")
        if self.sigma0 not in (GFL, GFM):
            raise SimError("sigma0 must be 1 (GFL) or 2 (GFM)")
        times = [e.time for e in self.events]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise SimError("event times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.duration):
            raise SimError("event times must lie within [0, duration]")


@dataclass(frozen=True)
class NoSwitch:
    pass


@dataclass(frozen=True)
class ScrThreshold:
    """Traditional baseline: GFL on strong grids, GFM below the threshold."""

    threshold: float = 3.5

    def __post_init__(self):
        if self.threshold <= 0:
            raise SimError("threshold must be positive")


@dataclass(frozen=True)
class CsiBased:
    """Hysteresis comparison of per-mode CSI evaluators.

    ``j_fns`` maps sigma -> callable(scr, x_over_r) -> J, built from frozen
    normalization contexts so online values are comparable over time.
    """

    j_fns: dict
    epsilon_h: float = EPS_H_DEFAULT

    def __post_init__(self):
        if self.epsilon_h < 0:
            raise SimError("hysteresis threshold must be non-negative")
        if set(self.j_fns) != {GFL, GFM}:
            raise SimError("j_fns must provide evaluators for modes 1 and 2")


@dataclass(frozen=True)
class TraceRecord:
    t: float
    sigma: int
    x: np.ndarray
    p: float
    q: float
    v_a: float
    j_active: float = math.nan
    j_target: float = math.nan


# ---------------------------------------------------------------------------
# integration


def rk4_step(f, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of dx/dt = f(x)."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(mode, state, params: SystemParams, gains, sp: Setpoint,
              dt: float) -> np.ndarray:
    """One fixed RK4 step of the requested subsystem."""
    if dt <= 0:
        raise SimError("dt must be positive")
    deriv = gfl_derivatives if mode in ("gfl", GFL) else gfm_derivatives
    return rk4_step(lambda x: deriv(x, params, gains, sp), np.asarray(state, float), dt)


# ---------------------------------------------------------------------------
# controller reference extraction (mirrors the model control laws)


def _gfl_refs(x, params, gains, sp):
    """(omega, i_ld_ref, i_lq_ref, e_d, e_q) of the GFL controller at x."""
    zeta, _, gamma_d, gamma_q, xi_d, xi_q, i_d, i_q, i_ld, i_lq, v_d, v_q = x
    omega = gains.kp_pll * v_q + gains.ki_pll * zeta
    p, q = power_outputs(v_d, v_q, i_d, i_q)
    i_ld_ref = gains.kp_o1 * (sp.p_ref - p) + gains.ki_o1 * gamma_d
    i_lq_ref = gains.kp_o1 * (q - sp.q_ref) + gains.ki_o1 * gamma_q
    e_d = (v_d - omega * params.l_f * i_lq
           + gains.kp_i1 * (i_ld_ref - i_ld) + gains.ki_i1 * xi_d)
    e_q = (v_q + omega * params.l_f * i_ld
           + gains.kp_i1 * (i_lq_ref - i_lq) + gains.ki_i1 * xi_q)
    return omega, i_ld_ref, i_lq_ref, e_d, e_q


def _gfm_refs(x, params, gains, sp):
    """(omega, i_ld_ref, i_lq_ref, e_d, e_q) of the GFM controller at x."""
    (_, omega, e_int, gamma_d, gamma_q, xi_d, xi_q,
     i_d, i_q, i_ld, i_lq, v_d, v_q) = x
    p, q = power_outputs(v_d, v_q, i_d, i_q)
    u_rvl = gains.k_u * (sp.vd_ref - v_d) + gains.k_q * (sp.q_ref - q)
    e_ref = sp.vd_ref + gains.kp_q * u_rvl + gains.ki_q * e_int
    i_ld_ref = (i_d - omega * params.c_f * v_q
                + gains.kp_o2 * (e_ref - v_d) + gains.ki_o2 * gamma_d)
    i_lq_ref = (i_q + omega * params.c_f * v_d
                + gains.kp_o2 * (sp.vq_ref - v_q) + gains.ki_o2 * gamma_q)
    e_d = (v_d - omega * params.l_f * i_lq
           + gains.kp_i2 * (i_ld_ref - i_ld) + gains.ki_i2 * xi_d)
    e_q = (v_q + omega * params.l_f * i_ld
           + gains.kp_i2 * (i_lq_ref - i_lq) + gains.ki_i2 * xi_q)
    return omega, i_ld_ref, i_lq_ref, e_d, e_q


def _solve_integrator(numerator: float, ki: float, label: str) -> float:
    """Back-solve ki * state = numerator for the incoming integrator."""
    if ki != 0.0:
        return numerator / ki
    if abs(numerator) < 1e-12:
        return 0.0
    raise SimError(f"singular integrator solve: {label} is zero but must "
                   f"absorb a mismatch of {numerator:.3e}")


def bumpless_transfer(state, mode_from: int, mode_to: int,
                      params: SystemParams, gains_gfl: GflGains,
                      gains_gfm: GfmGains, sp: Setpoint) -> np.ndarray:
    """Map the running mode's state onto the incoming mode's state space.

    Physical states (delta, currents, voltages) are copied; the incoming
    frequency state reproduces the outgoing instantaneous frequency; the
    incoming integrators are solved so that i_ld_ref, i_lq_ref, e_d, e_q
    are continuous across the instant (each appears affinely).
    """
    x = np.asarray(state, float)
    if not np.all(np.isfinite(x)):
        raise SimError("cannot transfer a non-finite state")
    if mode_from == mode_to:
        return x.copy()
    if mode_from == GFL and mode_to == GFM:
        if x.shape != (GFL_DIM,):
            raise SimError("GFL state must have 12 components")
        omega, i_ld_ref, i_lq_ref, e_d, e_q = _gfl_refs(x, params, gains_gfl, sp)
        _, delta = x[0], x[1]
        i_d, i_q, i_ld, i_lq, v_d, v_q = x[6:12]
        g = gains_gfm
        p, q = power_outputs(v_d, v_q, i_d, i_q)
        # pin the RVL so e_ref lands on v_d (zero OVL d-error at the instant)
        u_rvl = g.k_u * (sp.vd_ref - v_d) + g.k_q * (sp.q_ref - q)
        e_int = _solve_integrator(v_d - sp.vd_ref - g.kp_q * u_rvl, g.ki_q, "ki_q")
        gamma_d = _solve_integrator(
            i_ld_ref - i_d + omega * params.c_f * v_q, g.ki_o2, "ki_o2")
        gamma_q = _solve_integrator(
            i_lq_ref - i_q - omega * params.c_f * v_d
            - g.kp_o2 * (sp.vq_ref - v_q), g.ki_o2, "ki_o2")
        xi_d = _solve_integrator(
            e_d - v_d + omega * params.l_f * i_lq
            - g.kp_i2 * (i_ld_ref - i_ld), g.ki_i2, "ki_i2")
        xi_q = _solve_integrator(
            e_q - v_q - omega * params.l_f * i_ld
            - g.kp_i2 * (i_lq_ref - i_lq), g.ki_i2, "ki_i2")
        return np.array([delta, omega, e_int, gamma_d, gamma_q, xi_d, xi_q,
                         i_d, i_q, i_ld, i_lq, v_d, v_q])
    if mode_from == GFM and mode_to == GFL:
        if x.shape != (GFM_DIM,):
            raise SimError("GFM state must have 13 components")
        omega, i_ld_ref, i_lq_ref, e_d, e_q = _gfm_refs(x, params, gains_gfm, sp)
        delta = x[0]
        i_d, i_q, i_ld, i_lq, v_d, v_q = x[7:13]
        g = gains_gfl
        p, q = power_outputs(v_d, v_q, i_d, i_q)
        zeta = _solve_integrator(omega - g.kp_pll * v_q, g.ki_pll, "ki_pll")
        gamma_d = _solve_integrator(
            i_ld_ref - g.kp_o1 * (sp.p_ref - p), g.ki_o1, "ki_o1")
        gamma_q = _solve_integrator(
            i_lq_ref - g.kp_o1 * (q - sp.q_ref), g.ki_o1, "ki_o1")
        xi_d = _solve_integrator(
            e_d - v_d + omega * params.l_f * i_lq
            - g.kp_i1 * (i_ld_ref - i_ld), g.ki_i1, "ki_i1")
        xi_q = _solve_integrator(
            e_q - v_q - omega * params.l_f * i_ld
            - g.kp_i1 * (i_lq_ref - i_lq), g.ki_i1, "ki_i1")
        return np.array([zeta, delta, gamma_d, gamma_q, xi_d, xi_q,
                         i_d, i_q, i_ld, i_lq, v_d, v_q])
    raise SimError(f"unsupported transfer {mode_from} -> {mode_to}")


# ---------------------------------------------------------------------------
# switching policies


def decide_switch(policy, sigma: int, scr: float, x_over_r: float,
                  j_active: float = math.nan,
                  j_target: float = math.nan) -> int:
    """Next mode under the given policy; hysteresis prevents chattering."""
    if isinstance(policy, NoSwitch):
        return sigma
    if isinstance(policy, ScrThreshold):
        return GFL if scr >= policy.threshold else GFM
    if isinstance(policy, CsiBased):
        if j_target > j_active + policy.epsilon_h:
            return GFM if sigma == GFL else GFL
        return sigma
    raise SimError(f"unknown policy {policy!r}")


# ---------------------------------------------------------------------------
# simulation loop


def _phase_a(t, delta, v_d, v_q, params):
    """Peak-invariant inverse Park at theta = delta + omega_base*omega0*t."""
    theta = delta + params.omega_base * params.omega0 * t
    return v_d * math.cos(theta) - v_q * math.sin(theta)


def simulate(scenario: Scenario, policy, params: SystemParams,
             gains_gfl: GflGains, gains_gfm: GfmGains, sp: Setpoint,
             x0=None, record_every: int = 1) -> list:
    """Run the scripted scenario and return the recorded trace.

    Starts from the sigma0 equilibrium unless x0 is given. Events fire at
    their scheduled step; the policy is polled every 1 ms and a mode change
    triggers a bumpless transfer. Divergence (non-finite state or infinity
    norm above 1e3) halts integration and is recorded, not raised.
    """
    sigma = scenario.sigma0
    if x0 is None:
        mode = "gfl" if sigma == GFL else "gfm"
        x = solve_equilibrium(mode, params, gains_gfl if sigma == GFL else gains_gfm, sp).x
    else:
        x = np.asarray(x0, float).copy()

    dt = scenario.dt
    n_steps = int(round(scenario.duration / dt))
    policy_stride = max(1, int(round(POLICY_DT / dt)))
    events = list(scenario.events)
    next_event = 0
    gains_by = {GFL: gains_gfl, GFM: gains_gfm}
    deriv_by = {GFL: gfl_derivatives, GFM: gfm_derivatives}

    records = []

    def j_pair(sig):
        if isinstance(policy, CsiBased):
            other = GFM if sig == GFL else GFL
            ja = policy.j_fns[sig](params.scr, params.x_over_r)
            jt = policy.j_fns[other](params.scr, params.x_over_r)
            return ja, jt
        return math.nan, math.nan

    def record(step, t, ja, jt):
        if step % record_every:
            return
        delta = x[1] if sigma == GFL else x[0]
        v_d, v_q = x[-2], x[-1]
        i_d, i_q = (x[6], x[7]) if sigma == GFL else (x[7], x[8])
        p, q = power_outputs(v_d, v_q, i_d, i_q)
        records.append(TraceRecord(
            t=t, sigma=sigma, x=x.copy(), p=p, q=q,
            v_a=_phase_a(t, delta, v_d, v_q, params),
            j_active=ja, j_target=jt))

    ja, jt = j_pair(sigma)
    record(0, 0.0, ja, jt)
    half = 0.5 * dt
    for step in range(n_steps):
        t = step * dt
        while next_event < len(events) and events[next_event].time <= t + half:
            ev = events[next_event]
            next_event += 1
            if ev.key in ("scr", "x_over_r", "v_g"):
                params = params.replace(**{ev.key: ev.value})
            elif ev.key.startswith("step_"):
                name = ev.key[5:]
                sp = sp.replace(**{name: getattr(sp, name) + ev.value})
            else:
                sp = sp.replace(**{ev.key: ev.value})
        if step % policy_stride == 0:
            ja, jt = j_pair(sigma)
            new_sigma = decide_switch(policy, sigma, params.scr,
                                      params.x_over_r, ja, jt)
            if new_sigma != sigma:
                x = bumpless_transfer(x, sigma, new_sigma, params,
                                      gains_gfl, gains_gfm, sp)
                sigma = new_sigma
                ja, jt = j_pair(sigma)
        f = deriv_by[sigma]
        g = gains_by[sigma]
        x = rk4_step(lambda s: f(s, params, g, sp), x, dt)
        t_next = (step + 1) * dt
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            # divergence is evidence, not an error: clamp and stop
            x = np.nan_to_num(x, nan=DIVERGENCE_LIMIT,
                              posinf=DIVERGENCE_LIMIT, neginf=-DIVERGENCE_LIMIT)
            record(0, t_next, ja, jt)
            break
        record(step + 1, t_next, ja, jt)
    return records


# ---------------------------------------------------------------------------
# linear reference response


def linear_response(model: Linearization, input_step, duration: float,
                    dt: float):
    """Response of dx/dt = A dx + B du to a constant step du from t = 0.

    Exact zero-order-hold propagation through the matrix exponential of the
    augmented system. Returns (times, dx) with dx[i] the deviation at
    times[i].
    """
    du = np.asarray(input_step, float)
    a, b = model.a, model.b
    n = a.shape[0]
    if du.shape != (b.shape[1],):
        raise SimError(f"input step must have {b.shape[1]} components")
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = a
    aug[:n, n] = b @ du
    phi = expm(aug * dt)
    steps = int(round(duration / dt))
    out = np.empty((steps + 1, n))
    z = np.zeros(n + 1)
    z[n] = 1.0
    out[0] = 0.0
    for i in range(steps):
        z = phi @ z
        out[i + 1] = z[:n]
    return np.arange(steps + 1) * dt, out


def rmse(series_a, series_b) -> float:
    a = np.asarray(series_a, float)
    b = np.asarray(series_b, float)
    if a.shape != b.shape:
        raise SimError(f"series shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# trace utilities


def trace_arrays(trace) -> dict:
    """Column arrays (t, sigma, p, q, v_a, j_active, j_target) of a trace."""
    return {
        "t": np.array([r.t for r in trace]),
        "sigma": np.array([r.sigma for r in trace]),
        "p": np.array([r.p for r in trace]),
        "q": np.array([r.q for r in trace]),
        "v_a": np.array([r.v_a for r in trace]),
        "j_active": np.array([r.j_active for r in trace]),
        "j_target": np.array([r.j_target for r in trace]),
    }


def switch_times(trace) -> list:
    """(time, from_mode, to_mode) for every mode change in the trace."""
    out = []
    for prev, cur in zip(trace, trace[1:]):
        if cur.sigma != prev.sigma:
            out.append((cur.t, prev.sigma, cur.sigma))
    return out


def is_divergent(trace, scenario: Scenario) -> bool:
    """True when the run halted early or pinned at the divergence limit."""
    if not trace:
        return True
    last = trace[-1]
    if last.t < scenario.duration - scenario.dt:
        return True
    return bool(np.max(np.abs(last.x)) >= DIVERGENCE_LIMIT)


def classify_trace(trace, t_start: float = 0.0, scenario: Scenario = None,
                   n_windows: int = 8) -> str:
    """Verdict on the active-power waveform after t_start.

    Splits the record into windows and measures the oscillation amplitude per
    window after removing the window's linear trend (slow aperiodic settling
    must not mask a persistent oscillation). The exponential rate fitted to
    the amplitude sequence decides: decay is "stable", near-zero rate with
    persistent amplitude is "sustained-oscillation", growth or an early halt
    is "divergent".
    """
    if scenario is not None and is_divergent(trace, scenario):
        return "divergent"
    t = np.array([r.t for r in trace])
    p = np.array([r.p for r in trace])
    keep = t >= t_start
    t, p = t[keep], p[keep]
    if len(t) < 4 * n_windows:
        raise SimError("trace too short to classify")
    edges = np.linspace(t[0], t[-1], n_windows + 1)
    amps, centers = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (t >= lo) & (t <= hi)
        tw, w = t[m], p[m]
        if len(w) >= 4:
            resid = w - np.polyval(np.polyfit(tw, w, 1), tw)
            amps.append(np.ptp(resid))
            centers.append(0.5 * (lo + hi))
    amps = np.array(amps)
    centers = np.array(centers)
    if np.max(amps[len(amps) // 2:]) < 1e-6:
        return "stable"
    usable = amps > 1e-12
    if usable.sum() < 3:
        return "stable"
    rate = np.polyfit(centers[usable], np.log(amps[usable]), 1)[0]
    if rate > 0.05:
        return "divergent"
    if rate < -0.05:
        return "stable"
    return "sustained-oscillation"


# ---------------------------------------------------------------------------
# text I/O


def save_scenario(scenario: Scenario, path):
    with open(path, "w") as fh:
        fh.write("# scenario v1\n")
        fh.write(f"duration {scenario.duration:.17g}\n")
        fh.write(f"dt {scenario.dt:.17g}\n")
        fh.write(f"sigma0 {scenario.sigma0}\n")
        for ev in scenario.events:
            fh.write(f"event {ev.time:.17g} {ev.key} {ev.value:.17g}\n")


def load_scenario(path) -> Scenario:
    duration = dt = None
    sigma0 = GFL
    events = []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            parts = ln.split()
            if parts[0] == "duration":
                duration = float(parts[1])
            elif parts[0] == "dt":
                dt = float(parts[1])
            elif parts[0] == "sigma0":
                sigma0 = int(parts[1])
            elif parts[0] == "event":
                events.append(Event(float(parts[1]), parts[2], float(parts[3])))
            else:
                raise SimError(f"unknown scenario line {parts[0]!r}")
    if duration is None:
        raise SimError("scenario file missing duration")
    return Scenario(duration=duration, dt=dt if dt else DT_DEFAULT,
                    sigma0=sigma0, events=tuple(events))


def save_trace(trace, path):
    """Comma-separated rows: t, sigma, P, Q, v_a, J_active, J_target."""
    with open(path, "w") as fh:
        fh.write("t,sigma,p,q,v_a,j_active,j_target\n")
        for r in trace:
            fh.write(f"{r.t:.17g},{r.sigma},{r.p:.17g},{r.q:.17g},"
                     f"{r.v_a:.17g},{r.j_active:.17g},{r.j_target:.17g}\n")


def load_trace(path):
    rows = []
    with open(path) as fh:
        next(fh)
        for ln in fh:
            t, sigma, p, q, v_a, ja, jt = ln.strip().split(",")
            rows.append(TraceRecord(
                t=float(t), sigma=int(sigma), x=np.empty(0), p=float(p),
                q=float(q), v_a=float(v_a), j_active=float(ja),
                j_target=float(jt)))
    return rows
