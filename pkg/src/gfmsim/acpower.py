"""Per-unit bases, AC operating points and active-power transfer functions.

Two models of the active power delivered by a source ``u`` into a remote
source ``e`` through an R-L branch live here:

* :func:`nonlinear_power_tf`, the large-signal rational form that keeps ``R``;
* :func:`gpac`, the small-signal ``dP/d(delta)`` model with a transient virtual
  resistance, derived in per-unit with ``R`` neglected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from ._validation import check_finite, check_positive
from .exceptions import InfeasibleError, InvalidInputError, ShapeError
from .linsys import Polynomial, TransferFunction, poles

__all__ = [
    "UnitSystem",
    "PerUnitBase",
    "AcLinkParameters",
    "OperatingPoint",
    "VirtualResistanceParams",
    "per_unit_base",
    "operating_point",
    "steady_power",
    "solve_delta_for_power",
    "nonlinear_power_tf",
    "beta",
    "gpac",
    "gpac_dc_gain",
    "gpac_pole_metrics",
]


class UnitSystem(str, Enum):
    SI = "SI"
    PER_UNIT = "per-unit"


@dataclass(frozen=True)
class PerUnitBase:
    U_b: float
    I_b: float
    Z_b: float
    L_b: float
    omega_b: float
    S_N: float
    U_N: float
    f_N: float

    @property
    def S_b(self) -> float:
        """Power base; equals ``1.5 * U_b * I_b``, i.e. ``S_N``."""
        return self.S_N


def per_unit_base(S_N: float, U_N: float, f_N: float) -> PerUnitBase:
    """Amplitude-invariant per-unit bases from rating, line-to-line voltage and frequency.

    Examples
    --------
    >>> b = per_unit_base(1000e6, 400e3, 50.0)
    >>> round(b.Z_b, 6)
    160.0
    """
    S_N = check_positive("S_N", S_N)
    U_N = check_positive("U_N", U_N)
    f_N = check_positive("f_N", f_N)
    k = math.sqrt(2.0 / 3.0)
    U_b = k * U_N
    I_b = k * S_N / U_N
    Z_b = U_b / I_b
    omega_b = 2.0 * math.pi * f_N
    return PerUnitBase(U_b, I_b, Z_b, Z_b / omega_b, omega_b, S_N, U_N, f_N)


@dataclass(frozen=True)
class AcLinkParameters:
    """Branch between an internal source ``u`` and a remote source ``e``.

    In per-unit, ``L`` is the reactance at nominal frequency and ``omega1`` is
    the frequency in p.u.; ``omega_b`` then only matters for the ``s`` terms.
    """

    R: float
    L: float
    omega1: float
    U: float
    E: float
    unit_system: UnitSystem = UnitSystem.PER_UNIT
    omega_b: float = 2.0 * math.pi * 50.0

    def __post_init__(self):
        check_positive("R", self.R, strict=False)
        for name in ("L", "omega1", "U", "E", "omega_b"):
            check_positive(name, getattr(self, name))
        object.__setattr__(self, "unit_system", UnitSystem(self.unit_system))

    @property
    def X(self) -> float:
        return self.omega1 * self.L

    @property
    def power_scale(self) -> float:
        # Amplitude-invariant SI quantities carry the 3/2 factor; per-unit does not.
        return 1.5 if self.unit_system is UnitSystem.SI else 1.0

    @property
    def s_scale(self) -> float:
        """Factor turning the per-unit ``L`` into the coefficient of ``s``."""
        return 1.0 / self.omega_b if self.unit_system is UnitSystem.PER_UNIT else 1.0

    def to_per_unit(self, base: PerUnitBase) -> "AcLinkParameters":
        if self.unit_system is UnitSystem.PER_UNIT:
            return self
        return AcLinkParameters(
            R=self.R / base.Z_b,
            L=self.L * base.omega_b / base.Z_b,
            omega1=self.omega1 / base.omega_b,
            U=self.U / base.U_b,
            E=self.E / base.U_b,
            unit_system=UnitSystem.PER_UNIT,
            omega_b=base.omega_b,
        )


@dataclass(frozen=True)
class OperatingPoint:
    delta_o: float
    U_o: float
    E_o: float
    u_do: float
    u_qo: float
    i_do: float
    i_qo: float
    I_o: float
    theta_Io: float
    phi_o: float


@dataclass(frozen=True)
class VirtualResistanceParams:
    R_v: float
    T_v: float

    def __post_init__(self):
        check_positive("R_v", self.R_v, strict=False)
        check_positive("T_v", self.T_v)


def operating_point(params: AcLinkParameters, delta_o: float) -> OperatingPoint:
    """Steady currents of the branch for a source angle ``delta_o``.

    The remote source sits on the d axis; ``u`` leads it by ``delta_o``.
    """
    delta_o = check_finite("delta_o", delta_o)
    if not -math.pi / 2 < delta_o < math.pi / 2:
        raise InvalidInputError(f"delta_o={delta_o} outside (-pi/2, pi/2)")
    U, E, R, X = params.U, params.E, params.R, params.X
    u_do, u_qo = U * math.cos(delta_o), U * math.sin(delta_o)
    I_o = math.hypot(u_do - E, u_qo) / math.hypot(R, X)
    theta = math.atan2(u_qo, u_do - E) - math.atan2(X, R)
    return OperatingPoint(
        delta_o=delta_o, U_o=U, E_o=E, u_do=u_do, u_qo=u_qo,
        i_do=I_o * math.cos(theta), i_qo=I_o * math.sin(theta),
        I_o=I_o, theta_Io=theta, phi_o=theta - delta_o,
    )


def nonlinear_power_tf(params: AcLinkParameters, u_d: float, u_q: float,
                       delta: float) -> TransferFunction:
    """Large-signal active-power transfer function ``(a1 s + a0)/((sL+R)^2+(wL)^2)``.

    ``u_d``/``u_q`` are the components of ``u`` in its own rotating frame, so
    ``(U, 0)`` is the usual choice and ``delta`` carries the angle to ``e``.
    """
    E, R, w = params.E, params.R, params.omega1
    Ls = params.L * params.s_scale
    L = params.L
    U2 = u_d * u_d + u_q * u_q
    c, s = math.cos(delta), math.sin(delta)
    a1 = Ls * (U2 - E * u_d * c + E * u_q * s)
    a0 = E * (L * w * u_q - R * u_d) * c + E * (L * w * u_d + R * u_q) * s + U2 * R
    # (Ls s + R)^2 + (w L)^2 expands to Ls^2 s^2 + 2 R Ls s + R^2 + X^2
    den = [R * R + (w * L) ** 2, 2 * R * Ls, Ls * Ls]
    k = params.power_scale
    return TransferFunction([k * a0, k * a1], den)


def steady_power(params: AcLinkParameters, delta: float) -> float:
    """Steady active power out of ``u`` at angle ``delta``."""
    return nonlinear_power_tf(params, params.U, 0.0, delta).dc_gain()


def solve_delta_for_power(params: AcLinkParameters, P_target: float,
                          tol: float = 1e-12) -> float:
    """Angle on the stable branch delivering ``P_target``.

    Non-negative targets are searched on ``[0, pi/2)``; a negative target (the
    source absorbs power) is searched on the mirrored branch ``(-pi/2, 0]``.

    Raises
    ------
    InfeasibleError
        If ``P_target`` lies outside the power range of that branch.
    """
    P_target = check_finite("P_target", P_target)
    lo, hi = (0.0, math.pi / 2) if P_target >= 0 else (-math.pi / 2, 0.0)
    p_lo, p_hi = steady_power(params, lo), steady_power(params, hi)
    if not min(p_lo, p_hi) - tol <= P_target <= max(p_lo, p_hi) + tol:
        raise InfeasibleError(
            f"P_target={P_target:.6g} outside reachable range [{min(p_lo, p_hi):.6g}, "
            f"{max(p_lo, p_hi):.6g}]")
    if P_target >= 0 and abs(p_lo - P_target) <= tol:
        return 0.0
    if P_target < 0 and abs(p_hi - P_target) <= tol:
        return 0.0
    return float(brentq(lambda d: steady_power(params, d) - P_target, lo, hi,
                        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def beta(s_mag: float, R_v: float, T_v: float, L: float, omega_b: float) -> float:
    """Damping factor of the virtual-resistance loop evaluated at real ``s = s_mag``.

    ``T_v = 0`` gives exactly 0, the lower limit.
    """
    L = check_positive("L", L)
    T_v = check_positive("T_v", T_v, strict=False)
    a = T_v * s_mag + 1.0
    k = R_v * T_v * omega_b
    return 1.0 + (k - 2 * L) / (2 * L * a) - k / (2 * L * a * a)


def gpac(params: AcLinkParameters, vr: VirtualResistanceParams, op: OperatingPoint,
         base: PerUnitBase) -> TransferFunction:
    """Small-signal ``dP/d(delta)`` with virtual resistance, all in per-unit.

    ``params.R`` is ignored.
    """
    if params.unit_system is not UnitSystem.PER_UNIT:
        raise InvalidInputError("gpac expects per-unit link parameters")
    wb, L, w1 = base.omega_b, params.L, params.omega1
    b = beta(wb, vr.R_v, vr.T_v, L, wb)
    den = Polynomial([w1 * w1 * wb * wb, 2 * b * vr.R_v / L * wb, 1.0])
    k = op.I_o * math.sin(op.phi_o)
    num = Polynomial([w1 * op.U_o * wb * wb / L]) + den * k
    return TransferFunction(num * op.U_o, den)


def gpac_dc_gain(params: AcLinkParameters, op: OperatingPoint) -> float:
    """``G_Pac(0)`` in per-unit power per radian."""
    return op.U_o * (op.U_o / (params.omega1 * params.L) + op.I_o * math.sin(op.phi_o))


def gpac_pole_metrics(tf: TransferFunction) -> tuple[float, float]:
    """Natural frequency and damping ratio of the single complex pole pair."""
    p = poles(tf)
    cplx = p[p.imag > 0]
    if cplx.size != 1:
        raise ShapeError(f"expected exactly one complex pole pair, found {cplx.size}")
    z = cplx[0]
    wn = abs(z)
    return float(wn), float(-z.real / wn)


def with_rv(vr: VirtualResistanceParams, R_v: float) -> VirtualResistanceParams:
    return replace(vr, R_v=R_v)
