"""Nonlinear per-unit models of the GFL and GFM inverter subsystems.

Both subsystems share the same LC-filtered voltage-source inverter tied to an
infinite bus through a line impedance parameterized by short-circuit ratio
(SCR) and X/R ratio.  The grid-following (GFL) subsystem synchronizes through
a PLL and regulates power with a power-current dual loop (12 states); the
grid-forming (GFM) subsystem synchronizes through a virtual-synchronous-
generator swing law and regulates voltage with a voltage-current dual loop
(13 states).

Conventions:
    * All electrical quantities are per-unit; time is in seconds.  Electrical
      right-hand sides (filter and line) therefore carry an ``omega_base``
      factor, and the angle state evolves as d(delta)/dt =
      omega_base * (omega - omega0) with omega in p.u.
    * Controller integrator states accumulate p.u. errors directly (no
      omega_base factor), so integral gains act in 1/s of real time.
    * Modulation is ideal: the inverter AC-side voltage equals its reference
      instantaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "OMEGA_BASE_DEFAULT",
    "ModelError",
    "SystemParams",
    "GflGains",
    "GfmGains",
    "Setpoint",
    "GflState",
    "GfmState",
    "GFL_DIM",
    "GFM_DIM",
    "grid_impedance",
    "power_outputs",
    "gfl_derivatives",
    "gfm_derivatives",
]

OMEGA_BASE_DEFAULT = 100.0 * math.pi  # 50 Hz base, rad/s

GFL_DIM = 12
GFM_DIM = 13


class ModelError(ValueError):
    """Invalid model parameters or state."""


def grid_impedance(scr: float, x_over_r: float, v_g: float = 1.0) -> tuple[float, float]:
    """Per-unit line resistance and inductance for a given grid strength.

    The impedance magnitude is ``v_g**2 / scr`` and is split so that the
    reactance-to-resistance ratio equals ``x_over_r`` exactly.

    Returns (r_g, l_g).
    """
    if scr <= 0.0 or x_over_r <= 0.0 or v_g <= 0.0:
        raise ModelError(f"scr, x_over_r, v_g must be positive, got ({scr}, {x_over_r}, {v_g})")
    z_mag = v_g * v_g / scr
    denom = math.hypot(1.0, x_over_r)
    r_g = z_mag / denom
    l_g = z_mag * x_over_r / denom
    return r_g, l_g


@dataclass(frozen=True)
class SystemParams:
    """Filter and grid-connection parameters (per-unit)."""

    r_f: float = 6.89e-4
    l_f: float = 0.54
    c_f: float = 0.067
    scr: float = 5.0
    x_over_r: float = 5.0
    v_g: float = 1.0
    omega0: float = 1.0
    omega_base: float = OMEGA_BASE_DEFAULT

    def __post_init__(self):
        if self.l_f <= 0 or self.c_f <= 0:
            raise ModelError("filter inductance and capacitance must be positive")
        if self.scr <= 0 or self.x_over_r <= 0 or self.v_g <= 0 or self.omega_base <= 0:
            raise ModelError("scr, x_over_r, v_g, omega_base must be positive")

    @property
    def r_g(self) -> float:
        return grid_impedance(self.scr, self.x_over_r, self.v_g)[0]

    @property
    def l_g(self) -> float:
        return grid_impedance(self.scr, self.x_over_r, self.v_g)[1]

    def replace(self, **changes) -> "SystemParams":
        return _replace(self, changes)


@dataclass(frozen=True)
class GflGains:
    """PLL, outer power loop (OPL) and inner current loop (ICL) gains."""

    kp_pll: float = 0.5
    ki_pll: float = 1.0 / math.pi
    kp_o1: float = 0.01
    ki_o1: float = 1.0 / math.pi
    kp_i1: float = 1.0
    ki_i1: float = 10.0 / math.pi

    def __post_init__(self):
        if any(getattr(self, f.name) < 0 for f in fields(self)):
            raise ModelError("GFL gains must be non-negative")

    def replace(self, **changes) -> "GflGains":
        return _replace(self, changes)


@dataclass(frozen=True)
class GfmGains:
    """VSG swing, reactive-voltage loop (RVL), outer voltage loop (OVL) and
    inner current loop (ICL) gains.

    ``k_omega``, ``k_u``, ``k_q``, ``kp_q``, ``ki_q`` are not constrained by
    the hardware ratings, so they default to a calibrated set: with
    ki_i2 = 500 and SCR = 4 the ICL stability boundary sits at
    kp_i2 = 6.73 (k_u bisected to place the crossing, other knobs nominal).
    """

    j_virt: float = 1.0 / (100.0 * math.pi)
    k_d: float = 20.0
    k_omega: float = 0.0
    k_u: float = 1.92
    k_q: float = 1.0
    kp_q: float = 0.1
    ki_q: float = 10.0 / math.pi
    kp_o2: float = 1.0
    ki_o2: float = 1.0 / math.pi
    kp_i2: float = 10.0
    ki_i2: float = 1.0 / math.pi

    def __post_init__(self):
        if self.j_virt <= 0:
            raise ModelError("virtual inertia must be positive")
        others = [f.name for f in fields(self) if f.name != "j_virt"]
        if any(getattr(self, n) < 0 for n in others):
            raise ModelError("GFM gains must be non-negative")

    def replace(self, **changes) -> "GfmGains":
        return _replace(self, changes)


@dataclass(frozen=True)
class Setpoint:
    """Power and voltage references (per-unit)."""

    p_ref: float = 1.0
    q_ref: float = 0.0
    vd_ref: float = 1.0
    vq_ref: float = 0.0
    #: sanity bound on reference magnitudes; lift it for deliberate stress runs
    max_abs: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "max_abs":
                continue
            if abs(getattr(self, f.name)) > self.max_abs:
                raise ModelError(f"setpoint {f.name} exceeds sanity bound {self.max_abs}")

    def replace(self, **changes) -> "Setpoint":
        return _replace(self, changes)


def _replace(obj, changes):
    cur = {f.name: getattr(obj, f.name) for f in fields(obj)}
    cur.update(changes)
    return type(obj)(**cur)


@dataclass(frozen=True)
class GflState:
    """GFL state vector: PLL integrator, frame angle, OPL/ICL integrators,
    line current, inverter current and GCP voltage in dq coordinates."""

    zeta: float
    delta: float
    gamma_d: float
    gamma_q: float
    xi_d: float
    xi_q: float
    i_d: float
    i_q: float
    i_ld: float
    i_lq: float
    v_d: float
    v_q: float

    def __array__(self, dtype=None, copy=None):
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=dtype or float)

    def as_array(self) -> np.ndarray:
        return self.__array__()

    @classmethod
    def from_array(cls, x) -> "GflState":
        x = np.asarray(x, dtype=float)
        if x.shape != (GFL_DIM,):
            raise ModelError(f"GFL state must have {GFL_DIM} components, got shape {x.shape}")
        return cls(*x)


@dataclass(frozen=True)
class GfmState:
    """GFM state vector: frame angle, VSG speed, RVL integrator, OVL/ICL
    integrators, line current, inverter current and GCP voltage in dq."""

    delta: float
    omega: float
    e_int: float
    gamma_d: float
    gamma_q: float
    xi_d: float
    xi_q: float
    i_d: float
    i_q: float
    i_ld: float
    i_lq: float
    v_d: float
    v_q: float

    def __array__(self, dtype=None, copy=None):
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=dtype or float)

    def as_array(self) -> np.ndarray:
        return self.__array__()

    @classmethod
    def from_array(cls, x) -> "GfmState":
        x = np.asarray(x, dtype=float)
        if x.shape != (GFM_DIM,):
            raise ModelError(f"GFM state must have {GFM_DIM} components, got shape {x.shape}")
        return cls(*x)


def power_outputs(v_d: float, v_q: float, i_d: float, i_q: float) -> tuple[float, float]:
    """Active and reactive power at the GCP from dq voltage and line current."""
    return v_d * i_d + v_q * i_q, v_q * i_d - v_d * i_q


def gfl_derivatives(state, params: SystemParams, gains: GflGains, sp: Setpoint) -> np.ndarray:
    """Right-hand side of the 12th-order GFL subsystem.

    ``state`` may be a :class:`GflState` or a length-12 array ordered as the
    GflState fields.  Pure function: no mutation, bit-identical on repeat.
    """
    x = np.asarray(state, dtype=float)
    (zeta, delta, gamma_d, gamma_q, xi_d, xi_q,
     i_d, i_q, i_ld, i_lq, v_d, v_q) = x

    wb = params.omega_base
    r_g, l_g = grid_impedance(params.scr, params.x_over_r, params.v_g)

    # PLL: dq frame tracks the GCP voltage by driving v_q to zero
    omega = gains.kp_pll * v_q + gains.ki_pll * zeta

    p_out = v_d * i_d + v_q * i_q
    q_out = v_q * i_d - v_d * i_q

    # outer power loop -> current references
    err_p = sp.p_ref - p_out
    err_q = q_out - sp.q_ref
    i_ld_ref = gains.kp_o1 * err_p + gains.ki_o1 * gamma_d
    i_lq_ref = gains.kp_o1 * err_q + gains.ki_o1 * gamma_q

    # inner current loop with filter cross-coupling feedforward
    err_ild = i_ld_ref - i_ld
    err_ilq = i_lq_ref - i_lq
    e_d = v_d - omega * params.l_f * i_lq + gains.kp_i1 * err_ild + gains.ki_i1 * xi_d
    e_q = v_q + omega * params.l_f * i_ld + gains.kp_i1 * err_ilq + gains.ki_i1 * xi_q

    v_gd = params.v_g * math.cos(delta)
    v_gq = -params.v_g * math.sin(delta)

    return np.array([
        v_q,                                                          # d zeta
        wb * (omega - params.omega0),                                 # d delta
        err_p,                                                        # d gamma_d
        err_q,                                                        # d gamma_q
        err_ild,                                                      # d xi_d
        err_ilq,                                                      # d xi_q
        wb / l_g * (v_d - v_gd + omega * l_g * i_q - r_g * i_d),      # d i_d
        wb / l_g * (v_q - v_gq - omega * l_g * i_d - r_g * i_q),      # d i_q
        wb / params.l_f * (e_d - v_d + omega * params.l_f * i_lq - params.r_f * i_ld),
        wb / params.l_f * (e_q - v_q - omega * params.l_f * i_ld - params.r_f * i_lq),
        wb / params.c_f * (i_ld - i_d + omega * params.c_f * v_q),    # d v_d
        wb / params.c_f * (i_lq - i_q - omega * params.c_f * v_d),    # d v_q
    ])


def gfm_derivatives(state, params: SystemParams, gains: GfmGains, sp: Setpoint) -> np.ndarray:
    """Right-hand side of the 13th-order GFM subsystem.

    ``state`` may be a :class:`GfmState` or a length-13 array ordered as the
    GfmState fields.
    """
    x = np.asarray(state, dtype=float)
    (delta, omega, e_int, gamma_d, gamma_q, xi_d, xi_q,
     i_d, i_q, i_ld, i_lq, v_d, v_q) = x

    wb = params.omega_base
    w0 = params.omega0
    r_g, l_g = grid_impedance(params.scr, params.x_over_r, params.v_g)

    p_out = v_d * i_d + v_q * i_q
    q_out = v_q * i_d - v_d * i_q

    # VSG swing: inertia + damping + primary frequency droop
    d_omega = ((sp.p_ref - p_out) / w0
               - (gains.k_d + gains.k_omega / w0) * (omega - w0)) / gains.j_virt

    # reactive power-voltage loop -> voltage magnitude reference
    u_rvl = gains.k_u * (sp.vd_ref - v_d) + gains.k_q * (sp.q_ref - q_out)
    e_ref = sp.vd_ref + gains.kp_q * u_rvl + gains.ki_q * e_int

    # outer voltage loop with capacitor-current feedforward
    err_vd = e_ref - v_d
    err_vq = sp.vq_ref - v_q
    i_ld_ref = i_d - omega * params.c_f * v_q + gains.kp_o2 * err_vd + gains.ki_o2 * gamma_d
    i_lq_ref = i_q + omega * params.c_f * v_d + gains.kp_o2 * err_vq + gains.ki_o2 * gamma_q

    # inner current loop with filter cross-coupling feedforward
    err_ild = i_ld_ref - i_ld
    err_ilq = i_lq_ref - i_lq
    e_d = v_d - omega * params.l_f * i_lq + gains.kp_i2 * err_ild + gains.ki_i2 * xi_d
    e_q = v_q + omega * params.l_f * i_ld + gains.kp_i2 * err_ilq + gains.ki_i2 * xi_q

    v_gd = params.v_g * math.cos(delta)
    v_gq = -params.v_g * math.sin(delta)

    return np.array([
        wb * (omega - w0),                                            # d delta
        d_omega,                                                      # d omega
        u_rvl,                                                        # d e_int
        err_vd,                                                       # d gamma_d
        err_vq,                                                       # d gamma_q
        err_ild,                                                      # d xi_d
        err_ilq,                                                      # d xi_q
        wb / l_g * (v_d - v_gd + omega * l_g * i_q - r_g * i_d),      # d i_d
        wb / l_g * (v_q - v_gq - omega * l_g * i_d - r_g * i_q),      # d i_q
        wb / params.l_f * (e_d - v_d + omega * params.l_f * i_lq - params.r_f * i_ld),
        wb / params.l_f * (e_q - v_q - omega * params.l_f * i_ld - params.r_f * i_lq),
        wb / params.c_f * (i_ld - i_d + omega * params.c_f * v_q),    # d v_d
        wb / params.c_f * (i_lq - i_q - omega * params.c_f * v_d),    # d v_q
    ])
