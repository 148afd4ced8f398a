"""Averaged dq-frame plant models.

Every AC quantity is a space vector in a frame rotating at a constant angular
speed ``omega``; ``x_d + j x_q`` with amplitude-invariant scaling, so active
power is ``1.5 * (u_d i_d + u_q i_q)``.  The numba kernels at the bottom are the
ones the simulation engine calls; the dataclass-level functions wrap them for
direct use and testing.

Sign conventions
----------------
* AC branch current flows out of the converter towards the remote source.
* MMC DC current ``I_dc`` is positive flowing from the line into the converter.
* WTG machine-side power ``P_MSC`` charges the DC link, grid-side ``P_GSC``
  discharges it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ._validation import check_positive
from .exceptions import InvalidInputError

__all__ = [
    "TheveninGrid",
    "SyncMachine",
    "MachineState",
    "MmcParams",
    "MmcState",
    "WtgParams",
    "WtgState",
    "HvdcLine",
    "HvdcLineState",
    "mmc_ac_derivative",
    "mmc_dc_derivative",
    "mmc_energy_derivative",
    "ac_power",
    "wtg_derivative",
    "link_voltage",
    "hvdc_line_derivative",
    "sync_machine_derivative",
]


@dataclass(frozen=True)
class TheveninGrid:
    U_th: float
    R_th: float
    L_th: float
    driven_by_machine: bool = True

    def __post_init__(self):
        check_positive("U_th", self.U_th)
        check_positive("R_th", self.R_th, strict=False)
        check_positive("L_th", self.L_th, strict=False)


@dataclass(frozen=True)
class SyncMachine:
    """Equivalent onshore machine: swing equation plus first-order governor droop."""

    H: float = 2.0
    droop: float = 0.05
    T_gov: float = 0.5
    S_base: float = 3.6e9
    f_N: float = 50.0

    def __post_init__(self):
        check_positive("H", self.H)
        check_positive("T_gov", self.T_gov)
        check_positive("S_base", self.S_base)
        if not 0 < self.droop <= 1:
            raise InvalidInputError(f"droop={self.droop} outside (0, 1]")


@dataclass
class MachineState:
    delta: float
    omega_pu: float
    P_m: float


@dataclass(frozen=True)
class MmcParams:
    R_s: float
    L_s: float
    R_d: float
    L_d: float
    C_eq: float
    U_eq_nom: float

    def __post_init__(self):
        for k in ("R_s", "L_s", "R_d", "L_d", "C_eq", "U_eq_nom"):
            check_positive(k, getattr(self, k))

    @property
    def W_t_nom(self) -> float:
        return 0.5 * self.C_eq * self.U_eq_nom ** 2

    @classmethod
    def from_energy(cls, R_s, L_s, R_d, L_d, W_t_nom, U_eq_nom) -> "MmcParams":
        return cls(R_s, L_s, R_d, L_d, 2.0 * W_t_nom / U_eq_nom ** 2, U_eq_nom)


@dataclass
class MmcState:
    i_s_d: float
    i_s_q: float
    I_dc: float
    W_t: float


@dataclass(frozen=True)
class WtgParams:
    R_GSC: float
    L_GSC: float
    R_thw: float
    L_thw: float
    C_link: float
    U_link_nom: float
    T_msc: float = 0.05

    def __post_init__(self):
        check_positive("C_link", self.C_link)
        check_positive("U_link_nom", self.U_link_nom)
        check_positive("L_GSC", self.L_GSC)
        check_positive("T_msc", self.T_msc, strict=False)

    @property
    def R_w(self) -> float:
        return self.R_GSC + self.R_thw

    @property
    def L_w(self) -> float:
        return self.L_GSC + self.L_thw

    @property
    def W_link_nom(self) -> float:
        return 0.5 * self.C_link * self.U_link_nom ** 2


@dataclass
class WtgState:
    i_w_d: float
    i_w_q: float
    W_link: float
    P_MSC: float


@dataclass(frozen=True)
class HvdcLine:
    R_dc: float
    L_dc: float
    C_dc: float

    def __post_init__(self):
        for k in ("R_dc", "L_dc", "C_dc"):
            check_positive(k, getattr(self, k))

    @property
    def resonance_rad_s(self) -> float:
        return math.sqrt(16.0 / (self.C_dc * self.L_dc))

    def as_array(self) -> np.ndarray:
        return np.array([self.R_dc, self.L_dc, self.C_dc])


@dataclass
class HvdcLineState:
    U_dc_on: float
    U_mid: float
    U_dc_off: float
    i_sec1: float
    i_sec2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.U_dc_on, self.U_mid, self.U_dc_off, self.i_sec1, self.i_sec2])


# -- kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def branch_didt(R, L, omega, u_d, u_q, e_d, e_q, i_d, i_q):
    """Current derivative of an R-L branch driven by ``u`` against ``e``."""
    did = (u_d - e_d - R * i_d + omega * L * i_q) / L
    diq = (u_q - e_q - R * i_q - omega * L * i_d) / L
    return did, diq


@numba.njit(cache=True)
def dc_didt(R_d, L_d, I_dc, u_sum0, U_dc):
    return (-2.0 * u_sum0 + U_dc - R_d * I_dc) / L_d


@numba.njit(cache=True)
def line_derivative(R_dc, L_dc, C_dc, x, I_on, I_off, out):
    """Two pi-sections; ``x = [U_on, U_mid, U_off, i1, i2]``.

    ``i1`` flows offshore to midpoint, ``i2`` midpoint to onshore; ``I_on`` and
    ``I_off`` are currents injected into the line at its two ends.
    """
    c_end = C_dc / 4.0
    c_mid = C_dc / 2.0
    l_sec = L_dc / 2.0
    r_sec = R_dc / 2.0
    out[0] = (I_on + x[4]) / c_end
    out[1] = (x[3] - x[4]) / c_mid
    out[2] = (I_off - x[3]) / c_end
    out[3] = (x[2] - x[1] - r_sec * x[3]) / l_sec
    out[4] = (x[1] - x[0] - r_sec * x[4]) / l_sec


@numba.njit(cache=True)
def machine_derivative(H, droop, T_gov, S_base, omega_N, P_set, delta, omega_pu, P_m, P_e):
    ddelta = (omega_pu - 1.0) * omega_N
    domega = (P_m - P_e) / (2.0 * H * S_base)
    dPm = ((P_set - (omega_pu - 1.0) * S_base / droop) - P_m) / T_gov
    return ddelta, domega, dPm


# -- dataclass-level wrappers ---------------------------------------------

def _rot(d, q, angle):
    c, s = math.cos(angle), math.sin(angle)
    return c * d - s * q, s * d + c * q


def mmc_ac_derivative(params: MmcParams, state: MmcState, u_diff_dq, u_th: float,
                      theta_diff: float, theta_th: float, omega: float,
                      grid: TheveninGrid | None = None) -> tuple[float, float]:
    """``d/dt (i_s_d, i_s_q)`` in the converter frame at angle ``theta_diff``.

    The Thevenin source of amplitude ``u_th`` sits at ``theta_th``; when ``grid``
    is given its impedance is added to the converter's series impedance.
    """
    omega = check_positive("omega", omega)
    R, L = params.R_s, params.L_s
    if grid is not None:
        R, L = R + grid.R_th, L + grid.L_th
    e_d, e_q = _rot(u_th, 0.0, theta_th - theta_diff)
    return branch_didt(R, L, omega, float(u_diff_dq[0]), float(u_diff_dq[1]), e_d, e_q,
                       state.i_s_d, state.i_s_q)


def mmc_dc_derivative(params: MmcParams, state: MmcState, u_sum0_cmd: float, U_dc_terminal: float) -> float:
    """``d I_dc / dt`` with ``I_dc`` flowing from the line into the converter."""
    return dc_didt(params.R_d, params.L_d, state.I_dc, u_sum0_cmd, U_dc_terminal)


def mmc_energy_derivative(state: MmcState, P_dc: float, P_ac: float) -> float:
    return P_dc - P_ac


def ac_power(u_dq, i_dq) -> float:
    return 1.5 * (u_dq[0] * i_dq[0] + u_dq[1] * i_dq[1])


def wtg_derivative(params: WtgParams, state: WtgState, u_gsc_dq, u_thw: float, angles,
                   omega: float, P_MSC_cmd: float) -> tuple[float, float, float, float]:
    """``d/dt (i_w_d, i_w_q, W_link, P_MSC)``; ``angles = (theta_gsc, theta_thw)``."""
    omega = check_positive("omega", omega)
    theta_gsc, theta_thw = angles
    e_d, e_q = _rot(u_thw, 0.0, theta_thw - theta_gsc)
    did, diq = branch_didt(params.R_w, params.L_w, omega, float(u_gsc_dq[0]), float(u_gsc_dq[1]),
                           e_d, e_q, state.i_w_d, state.i_w_q)
    P_gsc = ac_power(u_gsc_dq, (state.i_w_d, state.i_w_q))
    dW = state.P_MSC - P_gsc
    if params.T_msc > 0:
        dP = (P_MSC_cmd - state.P_MSC) / params.T_msc
    else:
        dP = 0.0
    return did, diq, dW, dP


def link_voltage(W_link: float, C_link: float) -> float:
    return math.sqrt(2.0 * W_link / C_link)


def hvdc_line_derivative(params: HvdcLine, state: HvdcLineState, I_dc_on_inject: float,
                         I_dc_off_inject: float) -> np.ndarray:
    out = np.empty(5)
    line_derivative(params.R_dc, params.L_dc, params.C_dc, state.as_array(),
                    float(I_dc_on_inject), float(I_dc_off_inject), out)
    return out


def sync_machine_derivative(params: SyncMachine, state: MachineState, P_e: float,
                            P_set: float = 0.0) -> tuple[float, float, float]:
    return machine_derivative(params.H, params.droop, params.T_gov, params.S_base,
                              2 * math.pi * params.f_N, P_set, state.delta, state.omega_pu,
                              state.P_m, P_e)
