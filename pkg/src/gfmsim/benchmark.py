"""Benchmark system definition and the end-to-end tuning chain.

Plant parameters not printed in the source tables are back-solved so that the
closed-form tuning rules reproduce the printed controller gains; each default
below carries a short provenance note.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .acpower import (
    AcLinkParameters,
    PerUnitBase,
    UnitSystem,
    VirtualResistanceParams,
    gpac,
    gpac_dc_gain,
    operating_point,
    per_unit_base,
    solve_delta_for_power,
)
from .control import MmcControllerGains, WtgControllerGains
from .exceptions import InvalidInputError
from .linsys import TransferFunction, margins
from .plant import HvdcLine, MmcParams, SyncMachine, TheveninGrid, WtgParams
from .tuning import (
    TuningReport,
    bandwidth_bounds,
    build_gnrg,
    build_gudc,
    default_virtual_resistance,
    design_compensator,
    tune_dc_current,
    tune_dc_voltage,
    tune_droop,
    tune_energy_loop,
)

__all__ = ["OnshoreConfig", "MmcConfig", "OwppConfig", "TuningConfig", "BenchmarkSystem",
           "GainSet", "tune_system", "fcr_preset", "inertia_preset", "without_support",
           "OWPP_PRESETS", "plant_gpac", "loops_from_gains", "loop_corner_frequencies", "LOOPS"]

F_N = 50.0
OMEGA_N = 2 * math.pi * F_N


def _L(pu: float, U_N: float, S_N: float) -> float:
    return pu * U_N ** 2 / S_N / OMEGA_N


def _R(pu: float, U_N: float, S_N: float) -> float:
    return pu * U_N ** 2 / S_N


@dataclass(frozen=True)
class OnshoreConfig:
    f_N: float = F_N
    S_base: float = 3.6e9          # four 900 MVA units of the two-area grid lumped into one
    H: float = 2.0                 # reduced machine inertia of the benchmark
    droop: float = 0.05
    T_gov: float = 0.5             # first-order governor lag, a modelling choice
    machine_loading: float = 0.5   # P_m before the event, fraction of S_base
    U_th: float = math.sqrt(2 / 3) * 480e3   # amplitude, 1 p.u. at the onshore MMC base
    R_th: float = _R(0.01, 480e3, 1e9)
    L_th: float = _L(0.20, 480e3, 1e9)      # brings the onshore AC loop to 0.35 p.u.


@dataclass(frozen=True)
class MmcConfig:
    S_N: float = 1e9
    U_N: float = 480e3
    R_s: float = _R(0.005, 480e3, 1e9)
    L_s: float = _L(0.15, 480e3, 1e9)
    R_d: float = 2.048             # K_iIdc / omega_idc for K_iIdc = 2048
    L_d: float = 0.13              # K_pIdc / omega_idc for K_pIdc = 130
    W_t_nom: float = 35e6          # 35 kJ/MVA stored energy
    U_eq_nom: float = 640e3
    T_v: float = 0.021             # onshore reference gain set


@dataclass(frozen=True)
class OwppConfig:
    """Aggregated WTG; AC quantities at the WTG voltage level ``U_N``."""

    S_N: float = 1e9
    U_N: float = 110e3
    R_GSC: float = 0.019
    L_GSC: float = 3e-3
    R_thw: float = _R(0.005, 110e3, 1e9)
    L_thw: float = _L(0.35 - 0.15, 110e3, 1e9) - 3e-3  # offshore AC loop totals 0.35 p.u.
    C_link: float = 5.17e-3
    U_link_nom: float = 132e3
    T_msc: float = 0.05
    P_set: float = 800e6
    T_v: float = 0.015             # WTG reference gain set
    K_Hw: float = 0.0
    K_Rw: float = 0.0


@dataclass(frozen=True)
class HvdcLineConfig:
    R_dc: float = 4.375            # C_dc R_dc = 2.1e-4 in the printed compensator
    L_dc: float = 0.0729           # C_dc L_dc = 3.5e-6 in the printed compensator
    C_dc: float = 4.8e-5           # K_pUdc sqrt(h) / omega_idc with K_pUdc = 0.024, h = 4
    U_mid_star: float = 640e3


@dataclass(frozen=True)
class TuningConfig:
    h_ac: float = 5.0
    h_dc: float = 4.0
    h_wtg: float = 15.0
    omega_s: float = 1e4           # omega_idc = omega_s / 10 = 1000 rad/s
    delta_U_dcm: float = 19.2e3    # 3 % of 640 kV
    delta_f_m_on: float = 0.5
    delta_f_m_off: float = 0.5


@dataclass(frozen=True)
class BenchmarkSystem:
    onshore: OnshoreConfig = field(default_factory=OnshoreConfig)
    mmc_on: MmcConfig = field(default_factory=MmcConfig)
    mmc_off: MmcConfig = field(default_factory=lambda: MmcConfig(
        U_N=510e3, R_s=_R(0.005, 510e3, 1e9), L_s=_L(0.15, 510e3, 1e9), T_v=0.017))
    hvdc_line: HvdcLineConfig = field(default_factory=HvdcLineConfig)
    owpp: OwppConfig = field(default_factory=OwppConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)

    # -- derived plant objects -------------------------------------------
    @property
    def omega_N(self) -> float:
        return 2 * math.pi * self.onshore.f_N

    def base(self, which: str) -> PerUnitBase:
        cfg = {"on": self.mmc_on, "off": self.mmc_off, "wtg": self.owpp}[which]
        return per_unit_base(cfg.S_N, cfg.U_N, self.onshore.f_N)

    @property
    def turns_ratio(self) -> float:
        """Offshore MMC voltage over WTG voltage; refers WTG quantities to the MMC side."""
        return self.mmc_off.U_N / self.owpp.U_N

    def machine(self) -> SyncMachine:
        o = self.onshore
        return SyncMachine(o.H, o.droop, o.T_gov, o.S_base, o.f_N)

    def grid(self) -> TheveninGrid:
        o = self.onshore
        return TheveninGrid(o.U_th, o.R_th, o.L_th)

    def mmc(self, which: str) -> MmcParams:
        c = self.mmc_on if which == "on" else self.mmc_off
        return MmcParams.from_energy(c.R_s, c.L_s, c.R_d, c.L_d, c.W_t_nom, c.U_eq_nom)

    def wtg(self) -> WtgParams:
        w = self.owpp
        return WtgParams(w.R_GSC, w.L_GSC, w.R_thw, w.L_thw, w.C_link, w.U_link_nom, w.T_msc)

    def line(self) -> HvdcLine:
        h = self.hvdc_line
        return HvdcLine(h.R_dc, h.L_dc, h.C_dc)

    # -- AC links as seen by each grid-forming source --------------------
    def onshore_link(self) -> AcLinkParameters:
        """SI link from the onshore MMC to the Thevenin source."""
        b = self.base("on")
        return AcLinkParameters(self.mmc_on.R_s + self.onshore.R_th, self.mmc_on.L_s + self.onshore.L_th,
                                self.omega_N, b.U_b, self.onshore.U_th, UnitSystem.SI, self.omega_N)

    def offshore_link(self) -> AcLinkParameters:
        """SI link from the WTG (referred to the MMC side) to the offshore MMC."""
        n2 = self.turns_ratio ** 2
        w = self.wtg()
        b = self.base("off")
        return AcLinkParameters(self.mmc_off.R_s + w.R_w * n2, self.mmc_off.L_s + w.L_w * n2,
                                self.omega_N, b.U_b, b.U_b, UnitSystem.SI, self.omega_N)


@dataclass(frozen=True)
class GainSet:
    mmc_on: MmcControllerGains
    mmc_off: MmcControllerGains
    wtg: WtgControllerGains
    provenance: dict = field(default_factory=dict, compare=False)

    def with_wtg(self, **changes) -> "GainSet":
        return replace(self, wtg=replace(self.wtg, **changes))


def _dispatch_points(system: BenchmarkSystem):
    """Steady operating points in per-unit for the three grid-forming sources."""
    from .sim import steady_dispatch

    sd = steady_dispatch(system)
    S = system.mmc_on.S_N
    out = {}
    for key, link, P, base in (
            ("on", system.onshore_link(), sd["P_ac_on"], system.base("on")),
            ("off", system.offshore_link(), -sd["P_gsc"] + sd["loss_off_ac"], system.base("off")),
            ("wtg", system.offshore_link(), sd["P_gsc"], system.base("off"))):
        pu = link.to_per_unit(base)
        if key == "off":
            # The MMC is the absorbing end; swap roles so u is the MMC.
            pu = replace(pu, U=pu.E, E=pu.U)
        d = solve_delta_for_power(pu, P / S)
        out[key] = (pu, operating_point(pu, d))
    return out, sd


def tune_system(system: BenchmarkSystem, h_ac=None, h_dc=None, h_wtg=None, omega_s=None,
                delta_U_dcm=None, delta_f_m_on=None, delta_f_m_off=None):
    """Run every tuning rule on ``system``.

    Returns ``(GainSet, TuningReport, loops)`` where ``loops`` maps
    ``gnrg_on``/``gnrg_off``/``gnrg_wtg``/``gudc`` to open-loop transfer functions.
    """
    t = system.tuning
    h_ac = t.h_ac if h_ac is None else h_ac
    h_dc = t.h_dc if h_dc is None else h_dc
    h_wtg = t.h_wtg if h_wtg is None else h_wtg
    omega_s = t.omega_s if omega_s is None else omega_s
    delta_U_dcm = t.delta_U_dcm if delta_U_dcm is None else delta_U_dcm
    delta_f_m_on = t.delta_f_m_on if delta_f_m_on is None else delta_f_m_on
    delta_f_m_off = t.delta_f_m_off if delta_f_m_off is None else delta_f_m_off
    for name, h in (("h_ac", h_ac), ("h_dc", h_dc), ("h_wtg", h_wtg)):
        if not h > 1:
            raise InvalidInputError(f"{name} must exceed 1")

    wN = system.omega_N
    omega_idc = omega_s / 10.0
    warnings: list[str] = []
    points, sd = _dispatch_points(system)
    line = system.line()

    K_pI, K_iI, w = tune_dc_current(system.mmc_on.L_d, system.mmc_on.R_d, omega_idc, omega_s)
    warnings += w
    cmp = design_compensator(line.C_dc, line.L_dc, line.R_dc, omega_idc)
    K_pU, K_iU = tune_dc_voltage(line.C_dc, omega_idc, h_dc)
    K_R_on = tune_droop(delta_U_dcm, delta_f_m_on)
    K_R_off = tune_droop(delta_U_dcm, delta_f_m_off)
    bounds = bandwidth_bounds(wN, omega_s, h_ac, h_dc)
    warnings += bounds.pop("warnings")
    if h_wtg < 5:
        warnings.append(f"h_wtg={h_wtg:g} below 5; phase margin may fall under 30 deg")

    loops: dict[str, TransferFunction] = {}
    mmc_gains = {}
    placement = {}
    g0 = {}
    for key, cfg, h in (("on", system.mmc_on, h_ac), ("off", system.mmc_off, h_ac),
                        ("wtg", system.owpp, h_wtg)):
        pu, op = points[key]
        base = system.base("off" if key == "wtg" else key)
        if not 5.0 / wN <= cfg.T_v <= 10.0 / wN:
            warnings.append(f"T_v for {key} = {cfg.T_v:g} s outside [{5 / wN:.4g}, {10 / wN:.4g}] s")
        vr_pu = default_virtual_resistance(wN, 1.0, cfg.T_v)
        G = gpac(pu, vr_pu, op, base) * base.S_N
        g0[key] = gpac_dc_gain(pu, op) * base.S_N
        K_H, K_D = tune_energy_loop(h, g0[key], wN)
        loops[f"gnrg_{key}"] = build_gnrg(K_H, K_D, G)
        mmc_gains[key] = (K_H, K_D)

    loops["gudc"] = build_gudc(K_pU, K_iU, line.C_dc, omega_idc)
    m = {}
    for name, tf in loops.items():
        m[name] = margins(tf, 1e-2, 1e5)
        if name == "gudc":
            target = omega_idc / math.sqrt(h_dc)
        else:
            h = h_wtg if name.endswith("wtg") else h_ac
            target = wN / math.sqrt(h)
        placement[name] = abs(m[name].gain_crossover_rad_s / target - 1.0)
        if m[name].phase_margin_deg < 25:
            warnings.append(f"{name}: phase margin {m[name].phase_margin_deg:.1f} deg below 25 deg")

    U_mid = system.hvdc_line.U_mid_star
    common = dict(K_pUdc=K_pU, K_iUdc=K_iU, K_pIdc=K_pI, K_iIdc=K_iI,
                  cmp_num=tuple(float(c) for c in cmp.num.coeffs),
                  cmp_den=tuple(float(c) for c in cmp.den.coeffs),
                  f_star=system.onshore.f_N, f_N=system.onshore.f_N, U_mid_star=U_mid,
                  R_dc=line.R_dc)
    z_on, z_off = system.base("on").Z_b, system.base("off").Z_b
    on = MmcControllerGains(K_H=mmc_gains["on"][0], K_D=mmc_gains["on"][1], K_R=K_R_on,
                            R_v=0.2 * z_on, T_v=system.mmc_on.T_v,
                            W_t_star=system.mmc_on.W_t_nom, dc_sign=-1.0, **common)
    off = MmcControllerGains(K_H=mmc_gains["off"][0], K_D=mmc_gains["off"][1], K_R=K_R_off,
                             R_v=0.2 * z_off, T_v=system.mmc_off.T_v,
                             W_t_star=system.mmc_off.W_t_nom, dc_sign=1.0, **common)
    ow = system.owpp
    wtg = WtgControllerGains(K_Hlink=mmc_gains["wtg"][0], K_Dlink=mmc_gains["wtg"][1],
                             R_vw=0.2 * system.base("wtg").Z_b, T_vw=ow.T_v, K_Hw=ow.K_Hw,
                             K_Rw=ow.K_Rw, P_set=ow.P_set,
                             W_link_star=0.5 * ow.C_link * ow.U_link_nom ** 2,
                             U_link_o=ow.U_link_nom, f_star=system.onshore.f_N,
                             f_N=system.onshore.f_N)
    inputs = {"h_ac": h_ac, "h_dc": h_dc, "h_wtg": h_wtg, "omega_s": omega_s,
              "omega_idc": omega_idc, "delta_U_dcm": delta_U_dcm,
              "delta_f_m_on": delta_f_m_on, "delta_f_m_off": delta_f_m_off,
              "gpac_dc_gain_on": g0["on"], "gpac_dc_gain_off": g0["off"],
              "gpac_dc_gain_wtg": g0["wtg"], "P_set": ow.P_set,
              "delta_o_on": points["on"][1].delta_o, "delta_o_off": points["off"][1].delta_o,
              "delta_o_wtg": points["wtg"][1].delta_o}
    gains = GainSet(on, off, wtg, provenance=inputs)
    report = TuningReport(inputs=inputs, gains={"mmc_on": on, "mmc_off": off, "wtg": wtg},
                          margins=m, crossover_placement_error=placement,
                          bandwidth_bounds=bounds, warnings=warnings)
    return gains, report, loops


OWPP_RATED = 1e9
OWPP_DROOP = 0.05
OWPP_TWO_H = 4.0


def fcr_preset(gains: GainSet, S_N: float = OWPP_RATED, f_N: float = F_N) -> GainSet:
    """5 % droop on the OWPP rating, no inertial term."""
    return gains.with_wtg(K_Rw=S_N / (OWPP_DROOP * f_N), K_Hw=0.0)


def inertia_preset(gains: GainSet, S_N: float = OWPP_RATED, f_N: float = F_N) -> GainSet:
    """Synthetic inertia with ``2H = 4 s`` on the OWPP rating, no droop term."""
    return gains.with_wtg(K_Hw=OWPP_TWO_H * S_N / f_N, K_Rw=0.0)


def without_support(gains: GainSet) -> GainSet:
    return gains.with_wtg(K_Hw=0.0, K_Rw=0.0)


OWPP_PRESETS = {"fcr": fcr_preset, "inertia": inertia_preset, "none": without_support}


def plant_gpac(system: BenchmarkSystem, key: str) -> TransferFunction:
    """``G_Pac`` of one grid-forming source in W/rad at the benchmark dispatch."""
    if key not in ("on", "off", "wtg"):
        raise InvalidInputError(f"unknown source {key!r}")
    points, _ = _dispatch_points(system)
    pu, op = points[key]
    base = system.base("off" if key == "wtg" else key)
    T_v = {"on": system.mmc_on, "off": system.mmc_off, "wtg": system.owpp}[key].T_v
    vr_pu = VirtualResistanceParams(0.2, T_v)
    return gpac(pu, vr_pu, op, base) * base.S_N


def loops_from_gains(system: BenchmarkSystem, gains: GainSet) -> dict:
    """Open loops rebuilt from a gain set, so edited or loaded gains can be checked."""
    from .tuning import build_gnrg as _gnrg

    loops = {
        "gnrg_on": _gnrg(gains.mmc_on.K_H, gains.mmc_on.K_D, plant_gpac(system, "on")),
        "gnrg_off": _gnrg(gains.mmc_off.K_H, gains.mmc_off.K_D, plant_gpac(system, "off")),
        "gnrg_wtg": _gnrg(gains.wtg.K_Hlink, gains.wtg.K_Dlink, plant_gpac(system, "wtg")),
    }
    g = gains.mmc_on
    omega_idc = g.K_pIdc / system.mmc_on.L_d
    loops["gudc"] = build_gudc(g.K_pUdc, g.K_iUdc, system.hvdc_line.C_dc, omega_idc)
    return loops


def loop_corner_frequencies(loop: str, gains: GainSet, system: BenchmarkSystem) -> tuple[float, float]:
    """``(omega_L, omega_H)``: PI zero and the upper plant corner of one loop."""
    if loop == "gudc":
        g = gains.mmc_on
        return g.K_iUdc / g.K_pUdc, g.K_pIdc / system.mmc_on.L_d
    K_D = {"gnrg_on": gains.mmc_on.K_D, "gnrg_off": gains.mmc_off.K_D,
           "gnrg_wtg": gains.wtg.K_Dlink}.get(loop)
    if K_D is None:
        raise InvalidInputError(f"unknown loop {loop!r}")
    return 2 * math.pi / K_D, system.omega_N


LOOPS = ("gnrg_on", "gnrg_off", "gnrg_wtg", "gudc")
