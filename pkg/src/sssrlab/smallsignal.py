"""Linearization and small-signal stability assessment.

State matrices come from central finite differences of the nonlinear
right-hand sides at an equilibrium, so eigenvalues are in rad/s of real
time.  Classification uses the margin band half-width eps: an operating
point is stable when every eigenvalue real part lies strictly below -eps,
marginal inside [-eps, 0], unstable above zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import EquilibriumResult, solve_equilibrium
from .model import Setpoint, gfl_derivatives, gfm_derivatives
from .numdiff import jacobian

__all__ = [
    "EPS_MARGIN",
    "GFL_INPUTS",
    "GFM_INPUTS",
    "Linearization",
    "LinearModel",
    "StabilityReport",
    "linearize",
    "stability_report",
    "classify",
    "margin",
]

EPS_MARGIN = 0.01

GFL_INPUTS = ("p_ref", "q_ref")
GFM_INPUTS = ("p_ref", "q_ref", "vd_ref", "vq_ref")


@dataclass(frozen=True)
class Linearization:
    mode: str
    a: np.ndarray        # state matrix, rad/s
    b: np.ndarray        # input matrix over the mode's reference inputs
    x_eq: np.ndarray
    inputs: tuple


#: alias used in configuration and serialized output
LinearModel = Linearization


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray  # sorted by real part, descending
    rightmost: complex       # eigenvalue closest to (or beyond) the imaginary axis
    max_real: float          # Re(rightmost)
    margin: float            # -max_real, positive means stable
    margin_mu: float         # |Re(rightmost)|, unsigned axis distance
    classification: str      # "stable" | "marginal" | "unstable"
    dominant_freq_hz: float  # oscillation frequency of the rightmost mode
    dominant_damping: float  # damping ratio of the rightmost mode


def _dispatch(mode):
    if mode == "gfl":
        return gfl_derivatives, GFL_INPUTS
    if mode == "gfm":
        return gfm_derivatives, GFM_INPUTS
    raise ValueError(f"mode must be 'gfl' or 'gfm', got {mode!r}")


def linearize(mode: str, params, gains, sp: Setpoint, x_eq=None) -> Linearization:
    """State and input matrices at an equilibrium.

    ``x_eq`` may be a state vector, an EquilibriumResult, or None (the
    equilibrium is then solved first).  Input columns follow
    GFL_INPUTS / GFM_INPUTS order.
    """
    rhs, input_names = _dispatch(mode)
    if x_eq is None:
        x_eq = solve_equilibrium(mode, params, gains, sp).x
    elif isinstance(x_eq, EquilibriumResult):
        if not x_eq.converged:
            raise ValueError("cannot linearize around a non-converged equilibrium "
                             f"(residual {x_eq.residual_norm:.3e})")
        if x_eq.mode != mode:
            raise ValueError(f"equilibrium is for mode {x_eq.mode!r}, requested {mode!r}")
        x_eq = np.asarray(x_eq.x, dtype=float)
    else:
        x_eq = np.asarray(x_eq, dtype=float)

    a = jacobian(lambda x: rhs(x, params, gains, sp), x_eq)

    u0 = np.array([getattr(sp, name) for name in input_names])

    def f_of_u(u):
        sp_u = sp.replace(**dict(zip(input_names, u)))
        return rhs(x_eq, params, gains, sp_u)

    b = jacobian(f_of_u, u0)
    return Linearization(mode=mode, a=a, b=b, x_eq=x_eq, inputs=input_names)


def classify(max_real: float, eps: float = EPS_MARGIN) -> str:
    if max_real > 0.0:
        return "unstable"
    if max_real >= -eps:
        return "marginal"
    return "stable"


def stability_report(model, eps: float = EPS_MARGIN) -> StabilityReport:
    """Eigenvalue summary of a linearization (or bare state matrix)."""
    a = model.a if isinstance(model, Linearization) else model
    eig = np.linalg.eigvals(np.asarray(a, dtype=float))
    order = np.argsort(-eig.real, kind="stable")
    eig = eig[order]
    lead = eig[0]
    mag = abs(lead)
    max_real = float(lead.real)
    return StabilityReport(
        eigenvalues=eig,
        rightmost=complex(lead),
        max_real=max_real,
        margin=-max_real,
        margin_mu=abs(max_real),
        classification=classify(max_real, eps),
        dominant_freq_hz=float(abs(lead.imag) / (2.0 * np.pi)),
        dominant_damping=float(-lead.real / mag) if mag > 0 else 1.0,
    )


def margin(mode: str, params, gains, sp: Setpoint, x_eq=None) -> float:
    """Signed stability margin -max Re(eig(A)); positive means stable.

    Raises EquilibriumError when no equilibrium exists.
    """
    lin = linearize(mode, params, gains, sp, x_eq=x_eq)
    return stability_report(lin.a).margin
