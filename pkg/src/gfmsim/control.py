"""Discrete-time holistic grid-forming controllers for the MMCs and the WTG.

Each controller is a thin Python object around a numba step kernel operating on
flat ``float64`` gain and state arrays; the simulation engine calls the same
kernels directly.  Integrators and filters use backward Euler at the step size.

The energy-to-angle path realizes ``K_H (2 pi + K_D s) / s`` without a
differentiator: the angle is an integral of ``2 pi K_H dW`` plus a proportional
term ``K_H K_D dW``.  The frequency deviation reported as ``delta_f`` is the
non-differentiated part ``K_H dW``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from ._validation import check_positive
from .exceptions import AuditError, InvalidInputError
from .linsys import Polynomial, TransferFunction, poles

__all__ = [
    "MmcControllerGains",
    "WtgControllerGains",
    "MmcController",
    "WtgController",
    "OnshoreFrequencyWiredWtgController",
    "AuditReport",
    "locality_audit",
    "LOCAL_SIGNALS",
]

TWO_PI = 2.0 * math.pi

# MMC gain-array layout
(G_KH, G_KD, G_KR, G_RV, G_TV, G_KPU, G_KIU, G_KPI, G_KII, G_FSTAR, G_FN, G_UMID,
 G_WSTAR, G_HALF_RDC, G_DC_SIGN, G_CB0, G_CB1, G_CB2, G_CA0, G_CA1) = range(20)
N_MMC_GAINS = 20

# MMC state-array layout
(S_THETA, S_ANG_INT, S_ANG, S_LP_D, S_LP_Q, S_UDC_INT, S_IDC_INT, S_CMP1, S_CMP2,
 S_DF, S_FAULT, S_VD, S_VQ, S_USUM, S_EDC, S_UMID_HAT, S_IREF) = range(17)
N_MMC_STATE = 17

# WTG gain-array layout
(W_KH, W_KD, W_RV, W_TV, W_KHW, W_KRW, W_PSET, W_WSTAR, W_FSTAR, W_FN, W_ULINK) = range(11)
N_WTG_GAINS = 11

# WTG state-array layout
(T_THETA, T_ANG_INT, T_ANG, T_LP_D, T_LP_Q, T_DF, T_ROCOF, T_FAULT, T_VD, T_VQ,
 T_PCMD, T_PFR) = range(12)
N_WTG_STATE = 12


@dataclass(frozen=True)
class MmcControllerGains:
    """Gains and setpoints of one MMC controller (SI units).

    ``dc_sign`` maps the measured DC current to the current injected into the
    line: ``-1`` when the measurement is positive into the converter (onshore),
    ``+1`` when positive out of it (offshore).
    """

    K_H: float
    K_D: float
    K_R: float
    R_v: float
    T_v: float
    K_pUdc: float
    K_iUdc: float
    K_pIdc: float
    K_iIdc: float
    cmp_num: tuple = (16.0,)
    cmp_den: tuple = (16.0,)
    f_star: float = 50.0
    f_N: float = 50.0
    U_mid_star: float = 640e3
    W_t_star: float = 35e6
    R_dc: float = 0.0
    dc_sign: float = -1.0

    def __post_init__(self):
        check_positive("K_H", self.K_H)
        check_positive("K_D", self.K_D, strict=False)
        check_positive("T_v", self.T_v)
        num = Polynomial(self.cmp_num)
        den = Polynomial(self.cmp_den)
        if den.degree > 2 or num.degree > den.degree:
            raise InvalidInputError("compensator must be proper with denominator degree <= 2")
        if den.degree >= 1 and np.any(poles(TransferFunction(num, den)).real >= 0):
            raise InvalidInputError("compensator denominator must be strictly stable")
        if self.dc_sign not in (-1.0, 1.0):
            raise InvalidInputError("dc_sign must be +1 or -1")

    @property
    def compensator(self) -> TransferFunction:
        return TransferFunction(self.cmp_num, self.cmp_den)

    def to_array(self) -> np.ndarray:
        tf = self.compensator
        b = np.zeros(3)
        a = np.zeros(3)
        b[: tf.num.coeffs.size] = tf.num.coeffs
        a[: tf.den.coeffs.size] = tf.den.coeffs
        if tf.den.degree == 0:
            ca0, ca1, cb = 0.0, 0.0, (b[0], 0.0, 0.0)
        elif tf.den.degree == 1:
            raise InvalidInputError("first-order compensators are not supported; use degree 0 or 2")
        else:
            ca0, ca1, cb = a[0], a[1], (b[0], b[1], b[2])
        g = np.zeros(N_MMC_GAINS)
        g[G_KH], g[G_KD], g[G_KR] = self.K_H, self.K_D, self.K_R
        g[G_RV], g[G_TV] = self.R_v, self.T_v
        g[G_KPU], g[G_KIU], g[G_KPI], g[G_KII] = self.K_pUdc, self.K_iUdc, self.K_pIdc, self.K_iIdc
        g[G_FSTAR], g[G_FN], g[G_UMID], g[G_WSTAR] = self.f_star, self.f_N, self.U_mid_star, self.W_t_star
        g[G_HALF_RDC], g[G_DC_SIGN] = 0.5 * self.R_dc, self.dc_sign
        g[G_CB0], g[G_CB1], g[G_CB2], g[G_CA0], g[G_CA1] = cb[0], cb[1], cb[2], ca0, ca1
        return g


@dataclass(frozen=True)
class WtgControllerGains:
    K_Hlink: float
    K_Dlink: float
    R_vw: float
    T_vw: float
    K_Hw: float = 0.0
    K_Rw: float = 0.0
    P_set: float = 800e6
    W_link_star: float = 45.04e6
    U_link_o: float = 132e3
    f_star: float = 50.0
    f_N: float = 50.0

    def __post_init__(self):
        check_positive("K_Hlink", self.K_Hlink)
        check_positive("K_Dlink", self.K_Dlink, strict=False)
        check_positive("T_vw", self.T_vw)
        check_positive("K_Hw", self.K_Hw, strict=False)
        check_positive("K_Rw", self.K_Rw, strict=False)

    def to_array(self) -> np.ndarray:
        g = np.zeros(N_WTG_GAINS)
        g[W_KH], g[W_KD], g[W_RV], g[W_TV] = self.K_Hlink, self.K_Dlink, self.R_vw, self.T_vw
        g[W_KHW], g[W_KRW], g[W_PSET], g[W_WSTAR] = self.K_Hw, self.K_Rw, self.P_set, self.W_link_star
        g[W_FSTAR], g[W_FN], g[W_ULINK] = self.f_star, self.f_N, self.U_link_o
        return g


# -- kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def _sync_and_vr(K_H, K_D, R_v, T_v, f_star, f_N, dW, i_d, i_q, U_set, dt, st, i_theta,
                 i_int, i_ang, i_lpd, i_lpq):
    """Energy-PI angle update and virtual-resistance voltage command (local frame)."""
    two_pi = 2.0 * np.pi
    st[i_int] += dt * (two_pi * (f_star - f_N) + two_pi * K_H * dW)
    st[i_ang] = st[i_int] + K_H * K_D * dW
    th = st[i_theta] + dt * two_pi * (f_star + K_H * dW)
    st[i_theta] = th - two_pi * np.floor((th + np.pi) / two_pi)
    if st[i_theta] <= -np.pi:
        st[i_theta] += two_pi
    a = dt / (T_v + dt)
    st[i_lpd] += a * (i_d - st[i_lpd])
    st[i_lpq] += a * (i_q - st[i_lpq])
    v_d = U_set - R_v * (i_d - st[i_lpd])
    v_q = -R_v * (i_q - st[i_lpq])
    return v_d, v_q


@numba.njit(cache=True)
def mmc_kernel(g, st, W_t, i_d, i_q, U_dc, I_dc, U_set, dt, out):
    """One MMC controller step.

    Writes ``out = [v_d, v_q, u_sum0]`` with ``v`` in the controller's own
    frame; the frame angle relative to a nominal-frequency reference is left in
    ``st[S_ANG]``.
    """
    if not (np.isfinite(W_t) and np.isfinite(i_d) and np.isfinite(i_q)
            and np.isfinite(U_dc) and np.isfinite(I_dc) and np.isfinite(U_set)):
        st[S_FAULT] = 1.0
        out[0], out[1], out[2] = st[S_VD], st[S_VQ], st[S_USUM]
        return
    dW = W_t - g[G_WSTAR]
    v_d, v_q = _sync_and_vr(g[G_KH], g[G_KD], g[G_RV], g[G_TV], g[G_FSTAR], g[G_FN], dW,
                            i_d, i_q, U_set, dt, st, S_THETA, S_ANG_INT, S_ANG, S_LP_D, S_LP_Q)
    df = g[G_KH] * dW
    st[S_DF] = df

    i_inj = g[G_DC_SIGN] * I_dc
    u_mid_hat = U_dc - g[G_HALF_RDC] * i_inj
    e_dc = g[G_UMID] + g[G_KR] * df - u_mid_hat
    st[S_UMID_HAT] = u_mid_hat
    st[S_EDC] = e_dc
    st[S_UDC_INT] += dt * g[G_KIU] * e_dc
    pi_out = g[G_KPU] * e_dc + st[S_UDC_INT]

    # Compensator, controllable canonical form, backward Euler.
    a0, a1 = g[G_CA0], g[G_CA1]
    b0, b1, b2 = g[G_CB0], g[G_CB1], g[G_CB2]
    if a0 == 0.0 and a1 == 0.0:
        i_ref = b0 * pi_out
    else:
        r1 = st[S_CMP1]
        r2 = st[S_CMP2] + dt * pi_out
        det = 1.0 + dt * a1 + dt * dt * a0
        x1 = ((1.0 + dt * a1) * r1 + dt * r2) / det
        x2 = (-dt * a0 * r1 + r2) / det
        st[S_CMP1], st[S_CMP2] = x1, x2
        i_ref = (b0 - a0 * b2) * x1 + (b1 - a1 * b2) * x2 + b2 * pi_out
    st[S_IREF] = i_ref

    err = i_ref - i_inj
    st[S_IDC_INT] += dt * g[G_KII] * err
    y = g[G_KPI] * err + st[S_IDC_INT]
    u_sum0 = 0.5 * (U_dc + y)

    st[S_VD], st[S_VQ], st[S_USUM] = v_d, v_q, u_sum0
    out[0], out[1], out[2] = v_d, v_q, u_sum0


@numba.njit(cache=True)
def wtg_kernel(g, st, W_link, U_link, I_MSC, I_GSC, i_d, i_q, U_set, dt, out):
    """One WTG controller step; writes ``out = [v_d, v_q, P_MSC_cmd]``."""
    if not (np.isfinite(W_link) and np.isfinite(U_link) and np.isfinite(I_MSC)
            and np.isfinite(I_GSC) and np.isfinite(i_d) and np.isfinite(i_q)):
        st[T_FAULT] = 1.0
        out[0], out[1], out[2] = st[T_VD], st[T_VQ], st[T_PCMD]
        return
    dW = W_link - g[W_WSTAR]
    v_d, v_q = _sync_and_vr(g[W_KH], g[W_KD], g[W_RV], g[W_TV], g[W_FSTAR], g[W_FN], dW,
                            i_d, i_q, U_set, dt, st, T_THETA, T_ANG_INT, T_ANG, T_LP_D, T_LP_Q)
    df = g[W_KH] * dW
    rocof = g[W_KH] * g[W_ULINK] * (I_MSC - I_GSC)
    p_fr = -(g[W_KHW] * rocof + g[W_KRW] * df)
    p_cmd = g[W_PSET] + p_fr
    st[T_DF], st[T_ROCOF], st[T_PFR] = df, rocof, p_fr
    st[T_VD], st[T_VQ], st[T_PCMD] = v_d, v_q, p_cmd
    out[0], out[1], out[2] = v_d, v_q, p_cmd


# -- controller objects ----------------------------------------------------

LOCAL_SIGNALS = {
    "mmc": frozenset({"W_t", "i_s_dq", "U_dc", "I_dc", "U_ac_setpoint"}),
    "wtg": frozenset({"W_link", "U_link", "I_MSC", "I_GSC", "i_w_dq", "U_ac_setpoint"}),
}


class _Controller:
    KIND = ""
    INPUTS: tuple = ()

    def _read(self, meas: Mapping, key):
        return meas[key]

    @property
    def fault(self) -> bool:
        return bool(self.state[self._fault_index])


class MmcController(_Controller):
    """Holistic GFM MMC controller: energy PI, virtual resistance, DC droop and PIs."""

    KIND = "mmc"
    INPUTS = ("W_t", "i_s_dq", "U_dc", "I_dc", "U_ac_setpoint")
    _fault_index = S_FAULT

    def __init__(self, gains: MmcControllerGains):
        self.gains = gains
        self._g = gains.to_array()
        self.state = np.zeros(N_MMC_STATE)
        self._out = np.zeros(3)

    def reset(self, angle: float = 0.0, i_dq=(0.0, 0.0), I_inj: float = 0.0, R_d: float = 0.0):
        """Set every internal state to the equilibrium matching a steady operating point."""
        st = np.zeros(N_MMC_STATE)
        st[S_ANG_INT] = st[S_ANG] = angle
        st[S_THETA] = math.remainder(angle, TWO_PI)
        st[S_LP_D], st[S_LP_Q] = i_dq
        st[S_UDC_INT] = I_inj
        g = self._g
        if g[G_CA0] != 0.0:
            # Steady compensator state for constant input I_inj: x1 = u/a0.
            st[S_CMP1] = I_inj / g[G_CA0]
        st[S_IREF] = I_inj
        st[S_IDC_INT] = R_d * I_inj
        self.state = st
        return self

    def step(self, meas: Mapping, dt: float) -> dict:
        dt = check_positive("dt", dt)
        i_d, i_q = self._read(meas, "i_s_dq")
        mmc_kernel(self._g, self.state, float(self._read(meas, "W_t")), float(i_d), float(i_q),
                   float(self._read(meas, "U_dc")), float(self._read(meas, "I_dc")),
                   float(self._read(meas, "U_ac_setpoint")), dt, self._out)
        return {"u_diff_dq_cmd": (self._out[0], self._out[1]), "u_sum0_cmd": self._out[2],
                "angle": self.state[S_ANG], "theta": self.state[S_THETA]}

    @property
    def delta_f(self) -> float:
        return float(self.state[S_DF])


class WtgController(_Controller):
    """WTG grid-side controller synchronized by DC-link energy, with FCR and inertia terms."""

    KIND = "wtg"
    INPUTS = ("W_link", "U_link", "I_MSC", "I_GSC", "i_w_dq", "U_ac_setpoint")
    _fault_index = T_FAULT

    def __init__(self, gains: WtgControllerGains):
        self.gains = gains
        self._g = gains.to_array()
        self.state = np.zeros(N_WTG_STATE)
        self._out = np.zeros(3)

    def reset(self, angle: float = 0.0, i_dq=(0.0, 0.0)):
        st = np.zeros(N_WTG_STATE)
        st[T_ANG_INT] = st[T_ANG] = angle
        st[T_THETA] = math.remainder(angle, TWO_PI)
        st[T_LP_D], st[T_LP_Q] = i_dq
        st[T_PCMD] = self.gains.P_set
        self.state = st
        return self

    def step(self, meas: Mapping, dt: float) -> dict:
        dt = check_positive("dt", dt)
        i_d, i_q = self._read(meas, "i_w_dq")
        wtg_kernel(self._g, self.state, float(self._read(meas, "W_link")),
                   float(self._read(meas, "U_link")), float(self._read(meas, "I_MSC")),
                   float(self._read(meas, "I_GSC")), float(i_d), float(i_q),
                   float(self._read(meas, "U_ac_setpoint")), dt, self._out)
        return {"u_gsc_dq_cmd": (self._out[0], self._out[1]), "P_MSC_cmd": self._out[2],
                "angle": self.state[T_ANG], "theta": self.state[T_THETA]}

    @property
    def delta_f(self) -> float:
        return float(self.state[T_DF])

    @property
    def rocof_est(self) -> float:
        return float(self.state[T_ROCOF])


class OnshoreFrequencyWiredWtgController(WtgController):
    """Negative-test controller: droops on the onshore frequency instead of its own."""

    INPUTS = WtgController.INPUTS + ("f_on",)

    def step(self, meas: Mapping, dt: float) -> dict:
        out = super().step(meas, dt)
        df_remote = float(self._read(meas, "f_on")) - self.gains.f_N
        p_cmd = self.gains.P_set - self.gains.K_Rw * df_remote
        self._out[2] = p_cmd
        out["P_MSC_cmd"] = p_cmd
        return out


# -- locality audit ---------------------------------------------------------

class _RecordingMeasurements(Mapping):
    def __init__(self, values: dict):
        self._values = values
        self.accessed: list[str] = []

    def __getitem__(self, key):
        if key not in self.accessed:
            self.accessed.append(key)
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)


# Everything a controller could conceivably be wired to in the benchmark.
_PROBE_SIGNALS = {
    "W_t": 35e6, "i_s_dq": (0.0, 0.0), "U_dc": 640e3, "I_dc": 0.0, "U_ac_setpoint": 1.0,
    "W_link": 45e6, "U_link": 132e3, "I_MSC": 0.0, "I_GSC": 0.0, "i_w_dq": (0.0, 0.0),
    "f_on": 50.0, "f_off": 50.0, "f_machine": 50.0, "U_mid": 640e3, "P_ac_on": 0.0,
    "W_t_on": 35e6, "W_t_off": 35e6,
}


@dataclass
class AuditReport:
    controller: str
    kind: str
    declared: tuple
    accessed: list
    offending: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.offending

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.controller}: reads {', '.join(self.accessed)}"
        if self.offending:
            text += f"; non-local: {', '.join(self.offending)}"
        return text


def locality_audit(controller, raise_on_failure: bool = True) -> AuditReport:
    """Check that a controller consumes only signals measured at its own terminal.

    The controller is stepped once on a copy of its state with a mapping that
    records every key it reads; both the declared ``INPUTS`` and the keys
    actually read are checked against :data:`LOCAL_SIGNALS`.
    """
    allowed = LOCAL_SIGNALS.get(controller.KIND)
    if allowed is None:
        raise InvalidInputError(f"unknown controller kind {controller.KIND!r}")
    saved = controller.state.copy()
    probe = _RecordingMeasurements(dict(_PROBE_SIGNALS))
    try:
        controller.step(probe, 50e-6)
    finally:
        controller.state = saved
    seen = list(dict.fromkeys(list(controller.INPUTS) + probe.accessed))
    offending = [k for k in seen if k not in allowed]
    report = AuditReport(type(controller).__name__, controller.KIND, tuple(controller.INPUTS),
                         probe.accessed, offending)
    if offending and raise_on_failure:
        raise AuditError(report.to_text(), offending)
    return report


def gains_dict(gains) -> dict:
    return asdict(gains)
