"""Equilibrium solving for the GFL and GFM subsystems.

A damped Newton iteration on the full nonlinear right-hand side, started from
a closed-form flat start: physical states from a unity-voltage phasor guess,
controller integrators back-solved so that every loop sits at zero error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    GFL_DIM,
    GFM_DIM,
    GflGains,
    GflState,
    GfmGains,
    GfmState,
    Setpoint,
    SystemParams,
    gfl_derivatives,
    gfm_derivatives,
    grid_impedance,
)
from .numdiff import jacobian

__all__ = [
    "EquilibriumError",
    "EquilibriumResult",
    "newton_solve",
    "gfl_flat_start",
    "gfm_flat_start",
    "solve_equilibrium",
]

TOL_DEFAULT = 1e-10
MAX_ITER_DEFAULT = 200
MAX_HALVINGS = 30


class EquilibriumError(RuntimeError):
    """Newton failed to converge; carries the final residual max-norm."""

    def __init__(self, message: str, residual_norm: float, iterations: int):
        super().__init__(f"{message} (residual {residual_norm:.3e} after {iterations} iterations)")
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass(frozen=True)
class EquilibriumResult:
    mode: str            # "gfl" or "gfm"
    x: np.ndarray        # equilibrium state vector
    residual_norm: float  # max-norm of the RHS at x
    iterations: int
    converged: bool = True  # True only when residual_norm < the solve tolerance

    @property
    def state(self):
        return GflState.from_array(self.x) if self.mode == "gfl" else GfmState.from_array(self.x)


def newton_solve(f, x0, tol: float = TOL_DEFAULT, max_iter: int = MAX_ITER_DEFAULT):
    """Damped Newton root finder with step halving.

    Returns (x, residual_norm, iterations).  Raises EquilibriumError if the
    residual max-norm cannot be driven below ``tol`` or a step cannot improve
    it after MAX_HALVINGS halvings.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = np.asarray(f(x), dtype=float)
    norm = float(np.max(np.abs(fx)))
    for it in range(max_iter):
        if norm < tol:
            return x, norm, it
        if not np.isfinite(norm):
            raise EquilibriumError("residual is not finite", norm, it)
        jac = jacobian(f, x)
        try:
            step = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            raise EquilibriumError("singular Jacobian in Newton step", norm, it) from None
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            x_new = x + lam * step
            f_new = np.asarray(f(x_new), dtype=float)
            n_new = float(np.max(np.abs(f_new)))
            if np.isfinite(n_new) and (n_new < norm or n_new < tol):
                x, fx, norm = x_new, f_new, n_new
                break
            lam *= 0.5
        else:
            raise EquilibriumError("damped step made no progress", norm, it)
    if norm < tol:
        return x, norm, max_iter
    raise EquilibriumError("iteration limit reached", norm, max_iter)


def _phasor_guess(params: SystemParams, p: float, q: float, v_guess: float):
    """Line current and angle for injecting (p, q) at GCP voltage v_guess."""
    r_g, l_g = grid_impedance(params.scr, params.x_over_r, params.v_g)
    x_g = params.omega0 * l_g
    v = max(v_guess, 0.2)
    i_d = p / v
    i_q = -q / v
    a = r_g * p + x_g * q
    b = x_g * p - r_g * q
    delta = math.atan2(b, v * v - a)
    return i_d, i_q, delta


def gfl_flat_start(params: SystemParams, gains: GflGains, sp: Setpoint) -> np.ndarray:
    """Closed-form initial guess: unity GCP voltage, integrators back-solved."""
    i_d, i_q, delta = _phasor_guess(params, sp.p_ref, sp.q_ref, 1.0)
    v_d, v_q = 1.0, 0.0
    w = params.omega0
    i_ld = i_d - w * params.c_f * v_q
    i_lq = i_q + w * params.c_f * v_d
    # zero integral gains leave the integrator state indeterminate; guess 0
    # and let Newton report the singular Jacobian
    div = lambda num, den: num / den if den != 0.0 else 0.0
    zeta = div(params.omega0, gains.ki_pll)
    gamma_d = div(i_ld, gains.ki_o1)
    gamma_q = div(i_lq, gains.ki_o1)
    xi_d = div(params.r_f * i_ld, gains.ki_i1)
    xi_q = div(params.r_f * i_lq, gains.ki_i1)
    return np.array([zeta, delta, gamma_d, gamma_q, xi_d, xi_q,
                     i_d, i_q, i_ld, i_lq, v_d, v_q])


def gfm_flat_start(params: SystemParams, gains: GfmGains, sp: Setpoint) -> np.ndarray:
    """Closed-form initial guess at v_d = vd_ref, v_q = vq_ref."""
    v_d, v_q = sp.vd_ref, sp.vq_ref
    i_d, i_q, delta = _phasor_guess(params, sp.p_ref, sp.q_ref, v_d)
    w = params.omega0
    i_ld = i_d - w * params.c_f * v_q
    i_lq = i_q + w * params.c_f * v_d
    e_int = 0.0
    div = lambda num, den: num / den if den != 0.0 else 0.0
    gamma_d = div(i_ld - i_d + w * params.c_f * v_q, gains.ki_o2)
    gamma_q = div(i_lq - i_q - w * params.c_f * v_d, gains.ki_o2)
    xi_d = div(params.r_f * i_ld, gains.ki_i2)
    xi_q = div(params.r_f * i_lq, gains.ki_i2)
    return np.array([delta, w, e_int, gamma_d, gamma_q, xi_d, xi_q,
                     i_d, i_q, i_ld, i_lq, v_d, v_q])


def solve_equilibrium(mode: str, params: SystemParams, gains, sp: Setpoint,
                      x0=None, tol: float = TOL_DEFAULT,
                      max_iter: int = MAX_ITER_DEFAULT) -> EquilibriumResult:
    """Solve f(x) = 0 for the requested subsystem.

    mode is "gfl" or "gfm"; gains must match the mode.  The frame angle of
    the solution is wrapped to (-pi, pi].
    """
    if mode == "gfl":
        if not isinstance(gains, GflGains):
            raise TypeError("gfl mode requires GflGains")
        f = lambda x: gfl_derivatives(x, params, gains, sp)
        x_start = gfl_flat_start(params, gains, sp) if x0 is None else np.asarray(x0, float)
        angle_idx = 1
        dim = GFL_DIM
    elif mode == "gfm":
        if not isinstance(gains, GfmGains):
            raise TypeError("gfm mode requires GfmGains")
        f = lambda x: gfm_derivatives(x, params, gains, sp)
        x_start = gfm_flat_start(params, gains, sp) if x0 is None else np.asarray(x0, float)
        angle_idx = 0
        dim = GFM_DIM
    else:
        raise ValueError(f"mode must be 'gfl' or 'gfm', got {mode!r}")
    if x_start.shape != (dim,):
        raise ValueError(f"initial guess must have shape ({dim},)")

    x, norm, its = newton_solve(f, x_start, tol=tol, max_iter=max_iter)

    # the RHS depends on the angle only through cos/sin, so wrapping is exact
    wrapped = math.remainder(x[angle_idx], 2.0 * math.pi)
    if wrapped != x[angle_idx]:
        x = x.copy()
        x[angle_idx] = wrapped
        norm = float(np.max(np.abs(f(x))))
    return EquilibriumResult(mode=mode, x=x, residual_norm=norm, iterations=its,
                             converged=bool(norm < tol))
