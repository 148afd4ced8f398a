import math

import numba
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmsim import control as C
from gfmsim.control import (
    MmcController,
    MmcControllerGains,
    OnshoreFrequencyWiredWtgController,
    WtgController,
    WtgControllerGains,
    locality_audit,
    mmc_kernel,
)
from gfmsim.exceptions import AuditError, InvalidInputError
from gfmsim.linsys import TransferFunction, freq_response, step_response
from gfmsim.tuning import design_compensator

DT = 50e-6
W_STAR = 35e6
U_STAR = 640e3


def mmc_gains(**kw):
    base = dict(K_H=5e-7, K_D=0.1, K_R=3.84e4, R_v=46.08, T_v=0.021, K_pUdc=0.024,
                K_iUdc=6.0, K_pIdc=130.0, K_iIdc=2048.0, W_t_star=W_STAR, U_mid_star=U_STAR)
    base.update(kw)
    return MmcControllerGains(**base)


def wtg_gains(**kw):
    base = dict(K_Hlink=1e-6, K_Dlink=0.3, R_vw=2.42, T_vw=0.015, P_set=800e6,
                W_link_star=45.04e6, U_link_o=132e3)
    base.update(kw)
    return WtgControllerGains(**base)


def meas(W=W_STAR, i=(0.0, 0.0), U_dc=U_STAR, I_dc=0.0, U_set=391e3):
    return {"W_t": W, "i_s_dq": i, "U_dc": U_dc, "I_dc": I_dc, "U_ac_setpoint": U_set}


def wmeas(W=45.04e6, U=132e3, I_msc=0.0, I_gsc=0.0, i=(0.0, 0.0)):
    return {"W_link": W, "U_link": U, "I_MSC": I_msc, "I_GSC": I_gsc, "i_w_dq": i,
            "U_ac_setpoint": 9e4}


# -- construction --------------------------------------------------------------

def test_unstable_compensator_rejected():
    with pytest.raises(InvalidInputError):
        mmc_gains(cmp_num=(1.0,), cmp_den=(1.0, -0.1, 1e-4))


def test_improper_compensator_rejected():
    with pytest.raises(InvalidInputError):
        mmc_gains(cmp_num=(1.0, 1.0, 1.0), cmp_den=(1.0,))


def test_bad_dc_sign_rejected():
    with pytest.raises(InvalidInputError):
        mmc_gains(dc_sign=0.5)


# -- MMC controller ------------------------------------------------------------

def test_equilibrium_hold():
    c = MmcController(mmc_gains()).reset()
    theta0 = c.state[C.S_THETA]
    out = c.step(meas(), DT)
    assert c.delta_f == 0.0
    assert c.state[C.S_THETA] - theta0 == pytest.approx(2 * math.pi * 50 * DT)
    assert out["u_sum0_cmd"] == pytest.approx(U_STAR / 2)
    assert out["u_diff_dq_cmd"] == (391e3, 0.0)


def test_constant_energy_error_integrates_to_angle():
    w, T = 1e5, 0.2
    c = MmcController(mmc_gains(K_D=0.0)).reset()
    for _ in range(int(round(T / DT))):
        c.step(meas(W=W_STAR + w), DT)
    K_H = c.gains.K_H
    assert c.state[C.S_ANG] == pytest.approx(2 * math.pi * K_H * w * T, rel=1e-9)


@numba.njit(cache=True)
def _drive_sine(g, st, omega, amp, dt, n, out_angle):
    buf = np.zeros(3)
    for k in range(n):
        W = g[C.G_WSTAR] + amp * np.sin(omega * (k + 1) * dt)
        mmc_kernel(g, st, W, 0.0, 0.0, g[C.G_UMID], 0.0, 1.0, dt, buf)
        out_angle[k] = st[C.S_ANG]


@pytest.mark.parametrize("omega", [1.0, 2 * math.pi * 50 / 10])
def test_discrete_energy_to_angle_matches_pi(omega):
    g = mmc_gains()
    c = MmcController(g).reset()
    periods = 2
    n = int(round(periods * 2 * math.pi / omega / DT))
    ang = np.zeros(n)
    amp = 1e5
    _drive_sine(c._g, c.state, omega, amp, DT, n, ang)
    t = (np.arange(n) + 1) * DT
    A = np.column_stack([np.sin(omega * t), np.cos(omega * t), np.ones(n)])
    coef, *_ = np.linalg.lstsq(A, ang, rcond=None)
    measured = complex(coef[0], coef[1]) / amp   # response to sin as (in-phase, quadrature)
    ctrl = TransferFunction([2 * math.pi * g.K_H, g.K_H * g.K_D], [0.0, 1.0])
    expected = freq_response(ctrl, omega)
    got = complex(measured.real, measured.imag)
    assert abs(got) == pytest.approx(abs(expected), rel=0.01)
    assert math.degrees(abs(np.angle(got / expected))) < 1.0


def test_virtual_resistance_is_high_pass():
    g = mmc_gains()
    c = MmcController(g).reset()
    i = (1000.0, -400.0)
    first = c.step(meas(i=i), DT)["u_diff_dq_cmd"]
    initial = math.hypot(first[0] - 391e3, first[1])
    n = int(round(10 * g.T_v / DT))
    for _ in range(n):
        out = c.step(meas(i=i), DT)["u_diff_dq_cmd"]
    contrib = math.hypot(out[0] - 391e3, out[1])
    # backward Euler decays slightly slower than the continuous filter
    assert contrib <= initial * math.exp(-10) * 1.05
    for _ in range(3 * n):
        out = c.step(meas(i=i), DT)["u_diff_dq_cmd"]
    assert math.hypot(out[0] - 391e3, out[1]) < 1e-9 * initial + 1e-9


def test_discrete_compensator_tracks_continuous_step():
    cmp = design_compensator(4.8e-5, 0.0729, 4.375, 1000.0)
    g = mmc_gains(K_pUdc=1.0, K_iUdc=0.0, K_R=0.0, dc_sign=1.0, R_dc=0.0,
                  cmp_num=tuple(cmp.num.coeffs), cmp_den=tuple(cmp.den.coeffs))
    c = MmcController(g).reset()
    t_end = 0.01
    n = int(round(t_end / DT))
    ref = np.zeros(n)
    for k in range(n):
        c.step(meas(U_dc=U_STAR - 1.0), DT)
        ref[k] = c.state[C.S_IREF]
    ts = step_response(cmp, t_end, DT / 10)
    expected = np.interp((np.arange(n) + 1) * DT, ts.t, ts.y)
    # backward Euler lags by about one sample on the 0.1 ms poles
    assert np.max(np.abs(ref - expected)[n // 10:]) < 0.05
    assert ref[-1] == pytest.approx(1.0, rel=1e-3)


def test_nan_measurement_holds_last_output():
    c = MmcController(mmc_gains()).reset()
    good = c.step(meas(W=W_STAR + 1e3), DT)
    bad = c.step(meas(W=float("nan")), DT)
    assert c.fault
    assert bad["u_diff_dq_cmd"] == good["u_diff_dq_cmd"]
    assert bad["u_sum0_cmd"] == good["u_sum0_cmd"]


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-2e3, 2e3), st.floats(-1e4, 1e4)),
                min_size=1, max_size=30))
def test_controller_is_deterministic(seq):
    outs = []
    for _ in range(2):
        c = MmcController(mmc_gains()).reset()
        outs.append([c.step(meas(W=W_STAR + dw, i=(i, -i), U_dc=U_STAR + du), DT)["u_sum0_cmd"]
                     for dw, i, du in seq])
    assert outs[0] == outs[1]


def test_reset_gives_steady_dc_loop():
    R_d, I_inj = 2.048, 1200.0
    g = mmc_gains(dc_sign=1.0, R_dc=4.375)
    U_dc = U_STAR + 0.5 * 4.375 * I_inj
    c = MmcController(g).reset(I_inj=I_inj, R_d=R_d)
    for _ in range(100):
        out = c.step(meas(U_dc=U_dc, I_dc=I_inj), DT)
    # u_sum0 = (U_dc + R_d I_inj)/2 keeps the DC current steady
    assert out["u_sum0_cmd"] == pytest.approx(0.5 * (U_dc + R_d * I_inj), rel=1e-12)


# -- WTG controller ------------------------------------------------------------

def test_wtg_balanced_currents_give_zero_rocof():
    c = WtgController(wtg_gains(K_Hw=8e7)).reset()
    c.step(wmeas(I_msc=6000.0, I_gsc=6000.0), DT)
    assert c.rocof_est == 0.0


def test_wtg_droop_arithmetic():
    K_Rw = 1000e6 / (0.05 * 50)
    assert K_Rw == pytest.approx(4e8)
    g = wtg_gains(K_Rw=K_Rw)
    c = WtgController(g).reset()
    dW = -0.2 / g.K_Hlink
    out = c.step(wmeas(W=g.W_link_star + dW), DT)
    assert c.delta_f == pytest.approx(-0.2)
    assert out["P_MSC_cmd"] - g.P_set == pytest.approx(80e6, rel=1e-9)


def test_wtg_rocof_matches_link_voltage_slope():
    g = wtg_gains()
    c = WtgController(g).reset()
    I_msc, I_gsc = 6100.0, 6000.0
    dU_dt = (I_msc - I_gsc) / 5.17e-3
    c.step(wmeas(I_msc=I_msc, I_gsc=I_gsc), DT)
    assert c.rocof_est == pytest.approx(g.K_Hlink * 5.17e-3 * 132e3 * dU_dt, rel=0.01)


def test_wtg_nan_sets_fault():
    c = WtgController(wtg_gains()).reset()
    c.step(wmeas(I_msc=float("inf")), DT)
    assert c.fault


# -- locality audit ------------------------------------------------------------

def test_audit_passes_for_mmc():
    assert locality_audit(MmcController(mmc_gains())).passed


def test_audit_passes_for_wtg():
    assert locality_audit(WtgController(wtg_gains())).passed


def test_audit_rejects_wired_controller():
    with pytest.raises(AuditError) as exc:
        locality_audit(OnshoreFrequencyWiredWtgController(wtg_gains(K_Rw=4e8)))
    assert "f_on" in exc.value.offending


def test_audit_leaves_state_untouched():
    c = MmcController(mmc_gains()).reset(angle=0.3)
    before = c.state.copy()
    locality_audit(c)
    assert np.array_equal(before, c.state)
