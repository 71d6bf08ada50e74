"""Equilibrium solver tests against an independent phasor-circuit oracle.

At a GFL equilibrium the frame angle is stationary, so the PLL forces
v_q = 0 and the outer loop forces (P, Q) = (P_ref, Q_ref).  The grid circuit
then reduces to a single-machine phasor problem whose GCP voltage magnitude
satisfies a quadratic in V**2.  That closed form, plus back-solved
integrators, predicts the entire 12-state solution without running Newton.
The GFM oracle adds one scalar root find for the reactive droop.
"""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from sssrlab.equilibrium import (
    EquilibriumError,
    gfl_flat_start,
    newton_solve,
    solve_equilibrium,
)
from sssrlab.model import (
    GflGains,
    GfmGains,
    Setpoint,
    SystemParams,
    gfl_derivatives,
    gfm_derivatives,
    grid_impedance,
)


def phasor_solution(params, p, q):
    """GCP voltage magnitude and frame angle for a (p, q) injection, v_q = 0."""
    r_g, l_g = grid_impedance(params.scr, params.x_over_r, params.v_g)
    x_g = params.omega0 * l_g
    a = r_g * p + x_g * q
    b = x_g * p - r_g * q
    # V^4 - (2a + vg^2) V^2 + (a^2 + b^2) = 0, take the high-voltage branch
    bb = 2.0 * a + params.v_g ** 2
    disc = bb * bb - 4.0 * (a * a + b * b)
    if disc < 0:
        raise ValueError("no feasible operating point")
    v2 = 0.5 * (bb + math.sqrt(disc))
    v = math.sqrt(v2)
    delta = math.atan2(b, v2 - a)
    return v, delta


def oracle_gfl_state(params, gains, sp):
    v, delta = phasor_solution(params, sp.p_ref, sp.q_ref)
    i_d = sp.p_ref / v
    i_q = -sp.q_ref / v
    i_ld = i_d
    i_lq = i_q + params.omega0 * params.c_f * v
    return np.array([
        params.omega0 / gains.ki_pll,
        delta,
        i_ld / gains.ki_o1,
        i_lq / gains.ki_o1,
        params.r_f * i_ld / gains.ki_i1,
        params.r_f * i_lq / gains.ki_i1,
        i_d, i_q, i_ld, i_lq, v, 0.0,
    ])


def oracle_gfm_state(params, gains, sp):
    # reactive droop couples Q to the circuit: solve k_u*(vd_ref - V(Q)) +
    # k_q*(q_ref - Q) = 0, monotone decreasing in Q
    def droop_residual(q):
        v, _ = phasor_solution(params, sp.p_ref, q)
        return gains.k_u * (sp.vd_ref - v) + gains.k_q * (sp.q_ref - q)

    # scan for a feasible sign-change bracket before root finding: far-out Q
    # values can exceed the circuit's transfer capability
    qs, vals = [], []
    for qq in np.linspace(-1.5, 1.5, 301):
        try:
            vals.append(droop_residual(qq))
            qs.append(qq)
        except ValueError:
            continue
    sign_change = [i for i in range(len(qs) - 1) if vals[i] * vals[i + 1] <= 0]
    assert sign_change, "droop residual has no root in scanned range"
    i = sign_change[0]
    q = brentq(droop_residual, qs[i], qs[i + 1], xtol=1e-14)
    v, delta = phasor_solution(params, sp.p_ref, q)
    i_d = sp.p_ref / v
    i_q = -q / v
    i_ld = i_d
    i_lq = i_q + params.omega0 * params.c_f * v
    return np.array([
        delta,
        params.omega0,
        (v - sp.vd_ref) / gains.ki_q,
        (i_ld - i_d) / gains.ki_o2,
        (i_lq - i_q - params.omega0 * params.c_f * v) / gains.ki_o2,
        params.r_f * i_ld / gains.ki_i2,
        params.r_f * i_lq / gains.ki_i2,
        i_d, i_q, i_ld, i_lq, v, 0.0,
    ])


SETPOINTS = [Setpoint(), Setpoint(p_ref=0.5, q_ref=0.3), Setpoint(p_ref=-0.4, q_ref=-0.2),
             Setpoint(p_ref=0.9, q_ref=-0.3)]
GRIDS = [SystemParams(), SystemParams(scr=2.0, x_over_r=3.0), SystemParams(scr=10.0, x_over_r=8.0)]


@pytest.mark.parametrize("params", GRIDS)
@pytest.mark.parametrize("sp", SETPOINTS)
def test_gfl_equilibrium_matches_phasor_oracle(params, sp):
    gains = GflGains()
    res = solve_equilibrium("gfl", params, gains, sp)
    assert res.residual_norm <= 1e-10
    np.testing.assert_allclose(res.x, oracle_gfl_state(params, gains, sp),
                               rtol=1e-8, atol=1e-9)


@pytest.mark.parametrize("params", GRIDS)
@pytest.mark.parametrize("sp", SETPOINTS)
def test_gfm_equilibrium_matches_phasor_oracle(params, sp):
    gains = GfmGains()
    res = solve_equilibrium("gfm", params, gains, sp)
    assert res.residual_norm <= 1e-10
    np.testing.assert_allclose(res.x, oracle_gfm_state(params, gains, sp),
                               rtol=1e-8, atol=1e-9)


def test_gfl_regulation_is_exact():
    sp = Setpoint(p_ref=0.7, q_ref=0.1)
    res = solve_equilibrium("gfl", SystemParams(), GflGains(), sp)
    s = res.state
    p = s.v_d * s.i_d + s.v_q * s.i_q
    q = s.v_q * s.i_d - s.v_d * s.i_q
    assert p == pytest.approx(sp.p_ref, abs=1e-10)
    assert q == pytest.approx(sp.q_ref, abs=1e-10)
    assert s.v_q == pytest.approx(0.0, abs=1e-10)


def test_gfm_droop_balance():
    params, gains = SystemParams(), GfmGains()
    sp = Setpoint(p_ref=0.8, q_ref=0.2)
    s = solve_equilibrium("gfm", params, gains, sp).state
    q = s.v_q * s.i_d - s.v_d * s.i_q
    # RVL equilibrium: voltage error and reactive error cancel through the droop
    assert gains.k_u * (sp.vd_ref - s.v_d) + gains.k_q * (sp.q_ref - q) == pytest.approx(0.0, abs=1e-10)
    assert s.omega == pytest.approx(params.omega0, abs=1e-12)
    assert s.v_q == pytest.approx(sp.vq_ref, abs=1e-10)


def test_warm_start_converges_fast():
    params, gains, sp = SystemParams(), GflGains(), Setpoint()
    res = solve_equilibrium("gfl", params, gains, sp)
    x0 = res.x + 1e-4 * np.sin(np.arange(12))
    res2 = solve_equilibrium("gfl", params, gains, sp, x0=x0)
    assert res2.iterations <= 3
    np.testing.assert_allclose(res2.x, res.x, rtol=0, atol=1e-8)


def test_residual_is_rhs_maxnorm():
    params, gains, sp = SystemParams(), GfmGains(), Setpoint()
    res = solve_equilibrium("gfm", params, gains, sp)
    f = gfm_derivatives(res.x, params, gains, sp)
    assert float(np.max(np.abs(f))) == res.residual_norm


def test_infeasible_setpoint_raises():
    # beyond maximum power transfer of a very weak grid: no equilibrium exists
    params = SystemParams(scr=0.6, x_over_r=5.0)
    with pytest.raises(EquilibriumError) as exc:
        solve_equilibrium("gfl", params, GflGains(), Setpoint(p_ref=1.9))
    assert exc.value.residual_norm > 0


def test_mode_and_shape_validation():
    with pytest.raises(ValueError):
        solve_equilibrium("vsm", SystemParams(), GflGains(), Setpoint())
    with pytest.raises(TypeError):
        solve_equilibrium("gfl", SystemParams(), GfmGains(), Setpoint())
    with pytest.raises(ValueError):
        solve_equilibrium("gfl", SystemParams(), GflGains(), Setpoint(), x0=np.zeros(13))


def test_angle_wrapped_to_principal_branch():
    params, gains, sp = SystemParams(), GflGains(), Setpoint()
    ref = solve_equilibrium("gfl", params, gains, sp)
    x0 = ref.x.copy()
    x0[1] += 2.0 * math.pi        # same physics, shifted branch
    res = solve_equilibrium("gfl", params, gains, sp, x0=x0)
    assert -math.pi < res.state.delta <= math.pi
    assert res.state.delta == pytest.approx(ref.state.delta, abs=1e-8)
    assert res.residual_norm <= 1e-10


def test_newton_solve_on_scalar_system():
    # sanity on a tiny system with known root
    f = lambda x: np.array([x[0] ** 3 - 8.0])
    x, norm, its = newton_solve(f, np.array([5.0]))
    assert x[0] == pytest.approx(2.0, rel=1e-12)
    assert norm <= 1e-10


def test_converged_flag_tracks_tolerance():
    res = solve_equilibrium("gfl", SystemParams(), GflGains(), Setpoint())
    assert res.converged
    assert res.residual_norm < 1e-10


def test_singular_jacobian_raises():
    # rank-deficient system: Jacobian is exactly singular away from the root
    f = lambda x: np.array([x[0] + x[1] - 1.0, 2.0 * (x[0] + x[1]) - 2.0 + 1e-3])
    with pytest.raises(EquilibriumError, match="singular"):
        newton_solve(f, np.zeros(2))


def test_flat_start_close_to_solution():
    params, gains, sp = SystemParams(), GflGains(), Setpoint()
    res = solve_equilibrium("gfl", params, gains, sp)
    assert np.max(np.abs(gfl_flat_start(params, gains, sp) - res.x)) < 0.2
    assert res.iterations <= 10
