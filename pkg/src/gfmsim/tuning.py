"""Closed-form loop-shaping rules for the holistic GFM controllers.

All rules reduce each loop to one shaping factor ``h``: the open loop has a
``-40 dB/dec`` slope below ``omega_L``, ``-20 dB/dec`` between ``omega_L`` and
``omega_H = h * omega_L``, and the crossover is placed at ``sqrt(omega_L * omega_H)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive
from .acpower import VirtualResistanceParams
from .exceptions import InstabilityError, InvalidInputError
from .linsys import (
    Polynomial,
    StabilityMargins,
    TimeSeries,
    TransferFunction,
    feedback_unity,
    poles,
    ramp_response,
    series,
    step_response,
)

log = logging.getLogger(__name__)

__all__ = [
    "TuningInputs",
    "TuningReport",
    "default_virtual_resistance",
    "tune_energy_loop",
    "build_gnrg",
    "response_targets",
    "tune_dc_current",
    "design_compensator",
    "tune_dc_voltage",
    "build_gudc",
    "assembled_dc_loop",
    "tune_droop",
    "bandwidth_bounds",
    "step_metrics",
    "HolisticTuner",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TuningInputs:
    omega_N: float
    omega_s: float
    h_ac: float
    h_dc: float
    gpac_dc_gain: float
    L_d: float
    R_d: float
    C_dc: float
    L_dc: float
    R_dc: float
    delta_U_dcm: float
    delta_f_m_on: float
    delta_f_m_off: float

    def __post_init__(self):
        if not self.h_ac > 1 or not self.h_dc > 1:
            raise InvalidInputError("shaping factors must exceed 1")
        check_positive("omega_s", self.omega_s)


@dataclass
class TuningReport:
    inputs: dict
    gains: dict
    margins: dict[str, StabilityMargins]
    crossover_placement_error: dict[str, float]
    bandwidth_bounds: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["# tuning report"]
        for k, v in self.inputs.items():
            lines.append(f"input {k} = {v!r}")
        for k, m in self.margins.items():
            lines.append(
                f"loop {k}: PM = {m.phase_margin_deg:.2f} deg, wc = {m.gain_crossover_rad_s:.4g} rad/s, "
                f"GM = {m.gain_margin_db:.2f} dB, placement error = "
                f"{100 * self.crossover_placement_error[k]:.1f} %")
        for k, v in self.bandwidth_bounds.items():
            lines.append(f"bound {k} = {v:.4g} rad/s")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def default_virtual_resistance(omega_N: float, Z_base: float,
                               T_v: float | None = None) -> VirtualResistanceParams:
    """``R_v = 0.2`` p.u. scaled to ohms; ``T_v`` defaults to ``7.5 / omega_N``.

    An explicit ``T_v`` outside ``[5/omega_N, 10/omega_N]`` is accepted with a
    logged warning.
    """
    omega_N = check_positive("omega_N", omega_N)
    Z_base = check_positive("Z_base", Z_base)
    lo, hi = 5.0 / omega_N, 10.0 / omega_N
    if T_v is None:
        T_v = 7.5 / omega_N
    elif not lo <= T_v <= hi:
        log.warning("T_v=%g outside the recommended [%.4g, %.4g] s", T_v, lo, hi)
    check_positive("T_v", T_v)
    return VirtualResistanceParams(0.2 * Z_base, T_v)


def tune_energy_loop(h: float, gpac_dc_gain: float, omega_N: float) -> tuple[float, float]:
    """Energy-to-frequency PI gains ``(K_H, K_D)``.

    Parameters
    ----------
    h : float
        Shaping factor, ``> 1``.
    gpac_dc_gain : float
        ``G_Pac(0)`` in W/rad.
    omega_N : float
        Nominal angular frequency, rad/s.
    """
    if not h > 1:
        raise InvalidInputError("h must exceed 1")
    g0 = check_positive("gpac_dc_gain", gpac_dc_gain)
    omega_N = check_positive("omega_N", omega_N)
    K_H = omega_N ** 2 / (TWO_PI * g0 * h ** 1.5)
    K_D = TWO_PI * h / omega_N
    return K_H, K_D


def build_gnrg(K_H: float, K_D: float, gpac: TransferFunction) -> TransferFunction:
    """Energy-loop open loop ``K_H (2 pi + K_D s) / s^2 * G_Pac``."""
    check_positive("K_H", K_H)
    check_positive("K_D", K_D)
    ctrl = TransferFunction([TWO_PI * K_H, K_H * K_D], [0.0, 0.0, 1.0])
    return series(ctrl, gpac)


def _check_closed_loop(tf: TransferFunction) -> TransferFunction:
    cl = feedback_unity(tf)
    p = poles(cl)
    if np.any(p.real >= 0):
        raise InstabilityError("closed loop has right-half-plane poles", p)
    return cl


def step_metrics(ts: TimeSeries, final: float | None = None, band: float = 0.02) -> dict:
    """Overshoot (fraction), peak time and settling time into ``band`` of ``final``."""
    y, t = ts.y, ts.t
    final = ts.final if final is None else final
    k = int(np.argmax(y)) if final >= 0 else int(np.argmin(y))
    overshoot = (y[k] - final) / final if final else 0.0
    outside = np.flatnonzero(np.abs(y - final) > band * abs(final))
    settle = float(t[outside[-1] + 1]) if outside.size and outside[-1] + 1 < t.size else (
        float(t[0]) if not outside.size else math.inf)
    return {"overshoot": float(max(overshoot, 0.0)), "peak_time": float(t[k]),
            "settling_time": settle, "final": float(final)}


def response_targets(gnrg: TransferFunction, gpac: TransferFunction, t_end: float = 0.2,
                     dt: float | None = None) -> tuple[TimeSeries, TimeSeries]:
    """Time-domain targets of the energy loop.

    Returns
    -------
    y_ac_ac, y_dc_ac : TimeSeries
        Ramp response of ``(G_Pac/s)/(1+G_nrg)`` and step response of the
        complementary sensitivity; ``info`` carries overshoot and settling.
    """
    cl = _check_closed_loop(gnrg)
    dt = t_end / 4000 if dt is None else dt
    y_dc = step_response(cl, t_end, dt)
    dist = TransferFunction(gpac.num * gnrg.den, gpac.den * (gnrg.den + gnrg.num) * Polynomial([0, 1]))
    y_ac = ramp_response(dist, t_end, dt)
    y_dc.info.update(step_metrics(y_dc, 1.0))
    slope = np.gradient(y_ac.y, y_ac.t)
    y_ac.info.update({"final_slope": float(slope[-1])})
    return y_ac, y_dc


def tune_dc_current(L_d: float, R_d: float, omega_idc: float,
                    omega_s: float | None = None) -> tuple[float, float, list[str]]:
    """Pole-cancelling PI for the MMC DC current: ``(K_p, K_i, warnings)``."""
    L_d = check_positive("L_d", L_d)
    R_d = check_positive("R_d", R_d)
    omega_idc = check_positive("omega_idc", omega_idc)
    warnings = []
    if omega_s is not None and omega_idc > omega_s / 10:
        warnings.append(f"omega_idc={omega_idc:g} exceeds omega_s/10={omega_s / 10:g}")
    return L_d * omega_idc, R_d * omega_idc, warnings


def dc_current_closed_loop(K_p: float, K_i: float, L_d: float, R_d: float) -> TransferFunction:
    pi = TransferFunction([K_i, K_p], [0.0, 1.0])
    plant = TransferFunction([1.0], [R_d, L_d])
    return feedback_unity(series(pi, plant))


def design_compensator(C_dc: float, L_dc: float, R_dc: float, omega_idc: float) -> TransferFunction:
    """Notch-like compensator cancelling the line's midpoint resonance."""
    for name, v in (("C_dc", C_dc), ("L_dc", L_dc), ("R_dc", R_dc), ("omega_idc", omega_idc)):
        check_positive(name, v)
    num = Polynomial([16.0, C_dc * R_dc, C_dc * L_dc])
    lag = Polynomial([1.0, 0.1 / omega_idc])
    return TransferFunction(num, lag * lag * 16.0)


def tune_dc_voltage(C_dc: float, omega_idc: float, h: float) -> tuple[float, float]:
    """DC-voltage PI ``(K_p, K_i)`` for shaping factor ``h``."""
    if not h > 1:
        raise InvalidInputError("h must exceed 1")
    C_dc = check_positive("C_dc", C_dc)
    omega_idc = check_positive("omega_idc", omega_idc)
    return C_dc * omega_idc / math.sqrt(h), C_dc * omega_idc ** 2 / h ** 1.5


def build_gudc(K_p: float, K_i: float, C_dc: float, omega_idc: float) -> TransferFunction:
    """Simplified DC-voltage open loop with current-loop and compensator lags."""
    den = Polynomial([0.0, 0.0, C_dc]) * Polynomial([1.0, 1.0 / omega_idc])
    lag = Polynomial([1.0, 0.1 / omega_idc])
    return TransferFunction([K_i, K_p], den * lag * lag)


def assembled_dc_loop(K_p: float, K_i: float, cmp: TransferFunction, omega_idc: float,
                      C_dc: float, L_dc: float, R_dc: float) -> TransferFunction:
    """DC-voltage open loop assembled block by block, then pole-zero reduced.

    The two-section line seen from one terminal's injected current to the
    midpoint voltage, with no current at the far end, is
    ``16/(C s (C L s^2 + C R s + 16))``; ``cmp`` cancels its resonant pair.
    """
    from .linsys import cancel

    pi = TransferFunction([K_i, K_p], [0.0, 1.0])
    inner = TransferFunction([omega_idc], [omega_idc, 1.0])
    line = TransferFunction([16.0], Polynomial([0.0, C_dc]) * Polynomial([16.0, C_dc * R_dc, C_dc * L_dc]))
    return cancel(series(series(series(pi, cmp), inner), line), rtol=1e-6)


def tune_droop(delta_U_dcm: float, delta_f_m: float) -> float:
    """Frequency-to-DC-voltage droop gain in V/Hz."""
    return check_positive("delta_U_dcm", delta_U_dcm) / check_positive("delta_f_m", delta_f_m)


def bandwidth_bounds(omega_N: float, omega_s: float, h_ac: float, h_dc: float) -> dict:
    """Upper crossover bounds for the AC energy loop and the DC voltage loop."""
    warnings = []
    if h_ac < 5:
        warnings.append(f"h_ac={h_ac:g} below 5; phase margin may fall under 30 deg")
    if h_dc < 4:
        warnings.append(f"h_dc={h_dc:g} below 4; phase margin may fall under 30 deg")
    omega_idc = omega_s / 10
    return {"ac_bound": omega_N / math.sqrt(h_ac), "dc_bound": omega_idc / math.sqrt(h_dc),
            "warnings": warnings}


class HolisticTuner(BaseEstimator):
    """Estimator-style wrapper running the whole tuning chain on a benchmark system.

    ``fit(system)`` stores ``gains_`` (a :class:`~gfmsim.config.GainSet`) and
    ``report_`` (a :class:`TuningReport`).  ``predict(loop)`` returns the open
    loop transfer function of one tuned loop.

    Parameters
    ----------
    h_ac, h_dc, h_wtg : float
        Shaping factors of the MMC energy loops, the DC-voltage loop and the WTG
        DC-link energy loop.
    omega_s : float
        Controller sampling rate in rad/s; ``omega_idc = omega_s / 10``.
    """

    def __init__(self, h_ac=5.0, h_dc=4.0, h_wtg=15.0, omega_s=1e4,
                 delta_U_dcm=19.2e3, delta_f_m_on=0.5, delta_f_m_off=0.5):
        self.h_ac = h_ac
        self.h_dc = h_dc
        self.h_wtg = h_wtg
        self.omega_s = omega_s
        self.delta_U_dcm = delta_U_dcm
        self.delta_f_m_on = delta_f_m_on
        self.delta_f_m_off = delta_f_m_off

    def fit(self, system, y=None):
        from .benchmark import tune_system

        for name in ("h_ac", "h_dc", "h_wtg"):
            if not getattr(self, name) > 1:
                raise InvalidInputError(f"{name} must exceed 1")
        self.gains_, self.report_, self.loops_ = tune_system(system, **self.get_params())
        return self

    def predict(self, loop: str) -> TransferFunction:
        if not hasattr(self, "loops_"):
            raise InvalidInputError("HolisticTuner is not fitted")
        try:
            return self.loops_[loop]
        except KeyError:
            raise InvalidInputError(f"unknown loop {loop!r}; choose from {sorted(self.loops_)}") from None
