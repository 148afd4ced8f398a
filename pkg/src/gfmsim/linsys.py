"""Real-coefficient polynomial and SISO transfer-function algebra.

Coefficients are stored in ascending powers of ``s`` throughout, matching
:mod:`numpy.polynomial.polynomial`.  Transfer functions are normalized so the
denominator is monic, which makes the representation unique.
"""
from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from numpy.polynomial import polynomial as P
from scipy.linalg import matrix_balance

from ._validation import check_positive, check_time_grid
from .exceptions import (
    ImproperSystemError,
    InvalidInputError,
    NoCrossoverError,
    PoleOnAxisError,
)

__all__ = [
    "Polynomial",
    "TransferFunction",
    "StabilityMargins",
    "TimeSeries",
    "poles",
    "zeros",
    "freq_response",
    "margins",
    "step_response",
    "ramp_response",
    "series",
    "feedback_unity",
    "cancel",
    "bode",
    "write_bode_csv",
]

ROOT_RTOL = 1e-9


class Polynomial:
    """Immutable real polynomial, ascending coefficient order."""

    __slots__ = ("_c",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        if c.ndim != 1 or c.size == 0:
            raise InvalidInputError("polynomial needs a 1-D, non-empty coefficient list")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError(f"non-finite polynomial coefficients: {coeffs!r}")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        c.setflags(write=False)
        self._c = c

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return self._c.size - 1

    @property
    def is_zero(self) -> bool:
        return self._c.size == 1 and self._c[0] == 0.0

    @property
    def leading(self) -> float:
        return float(self._c[-1])

    def __call__(self, s):
        return P.polyval(s, self._c)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(P.polymul(self._c, other._c))
        return Polynomial(self._c * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        other = other if isinstance(other, Polynomial) else Polynomial([other])
        return Polynomial(P.polyadd(self._c, other._c))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._c)

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Polynomial) else Polynomial([other])))

    def __eq__(self, other):
        return isinstance(other, Polynomial) and np.array_equal(self._c, other._c)

    def __hash__(self):
        return hash(self._c.tobytes())

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"

    def roots(self) -> np.ndarray:
        return _roots(self._c)

    @classmethod
    def from_roots(cls, roots, gain=1.0):
        c = P.polyfromroots(np.asarray(roots, dtype=complex))
        return cls(np.real(c) * gain)


def _roots(c: np.ndarray) -> np.ndarray:
    """Companion-matrix roots with a Newton polish and conjugate pairing."""
    if c.size <= 1:
        return np.zeros(0, dtype=complex)
    r = np.asarray(P.polyroots(c), dtype=complex)
    dc = P.polyder(c)
    for _ in range(3):
        f = P.polyval(r, c)
        d = P.polyval(r, dc)
        ok = np.abs(d) > 0
        step = np.zeros_like(r)
        step[ok] = f[ok] / d[ok]
        cand = r - step
        better = np.abs(P.polyval(cand, c)) < np.abs(f)
        r = np.where(better, cand, r)
    # Real-coefficient polynomial: snap near-real roots and pair conjugates.
    scale = np.maximum(np.abs(r), 1.0)
    near_real = np.abs(r.imag) <= ROOT_RTOL * scale * 10
    r[near_real] = r[near_real].real
    upper = r[r.imag > 0]
    lower = list(r[r.imag < 0])
    paired = []
    for z in upper:
        j = int(np.argmin([abs(z.conjugate() - w) for w in lower]))
        w = lower.pop(j)
        avg = 0.5 * (z + w.conjugate())
        paired.extend([avg, avg.conjugate()])
    reals = r[r.imag == 0].real
    out = np.concatenate([np.sort(reals).astype(complex), np.array(paired, dtype=complex)])
    return out


class TransferFunction:
    """Rational transfer function ``num(s)/den(s)`` with a monic denominator."""

    __slots__ = ("num", "den")

    def __init__(self, num, den=(1.0,)):
        num = num if isinstance(num, Polynomial) else Polynomial(num)
        den = den if isinstance(den, Polynomial) else Polynomial(den)
        if den.is_zero:
            raise InvalidInputError("denominator must not be the zero polynomial")
        lead = den.leading
        self.num = Polynomial(num.coeffs / lead)
        self.den = Polynomial(den.coeffs / lead)

    @classmethod
    def gain(cls, k):
        return cls([k], [1.0])

    @property
    def is_proper(self) -> bool:
        return self.num.degree <= self.den.degree or self.num.is_zero

    def __call__(self, s):
        return self.num(s) / self.den(s)

    def dc_gain(self) -> float:
        d0 = self.den.coeffs[0]
        if d0 == 0:
            return math.inf
        return float(self.num.coeffs[0] / d0)

    def __mul__(self, other):
        if isinstance(other, TransferFunction):
            return series(self, other)
        return TransferFunction(self.num * float(other), self.den)

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, TransferFunction):
            other = TransferFunction.gain(float(other))
        return TransferFunction(self.num * other.den + other.num * self.den, self.den * other.den)

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-other)

    def __eq__(self, other):
        return isinstance(other, TransferFunction) and self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))

    def __repr__(self):
        return f"TransferFunction(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"


S = TransferFunction([0.0, 1.0], [1.0])


@dataclass(frozen=True)
class StabilityMargins:
    phase_margin_deg: float
    gain_crossover_rad_s: float
    gain_margin_db: float = math.inf
    phase_crossover_rad_s: float | None = None
    multiple_crossovers: bool = False


@dataclass(frozen=True)
class TimeSeries:
    t: np.ndarray
    y: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = check_time_grid(self.t)
        y = np.asarray(self.y, dtype=float)
        if y.shape != t.shape:
            raise InvalidInputError("t and y must have the same length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def at(self, when: float) -> float:
        return float(np.interp(when, self.t, self.y))

    @property
    def final(self) -> float:
        return float(self.y[-1])


def poles(tf: TransferFunction) -> np.ndarray:
    if tf.den.degree < 1:
        raise InvalidInputError("transfer function has no poles (constant denominator)")
    return tf.den.roots()


def zeros(tf: TransferFunction) -> np.ndarray:
    return tf.num.roots()


def freq_response(tf: TransferFunction, omega: float) -> complex:
    """Evaluate ``tf`` at ``s = j*omega``."""
    omega = check_positive("omega", omega)
    s = 1j * omega
    d = tf.den(s)
    if d == 0:
        raise PoleOnAxisError(f"denominator vanishes at omega={omega}")
    return complex(tf.num(s) / d)


def _freq_response_array(tf, omegas):
    s = 1j * np.asarray(omegas, dtype=float)
    d = tf.den(s)
    if np.any(d == 0):
        raise PoleOnAxisError("denominator vanishes on the frequency grid")
    return tf.num(s) / d


def _root_sum_phase(tf, omega):
    """Continuous phase (rad) built from per-root angle contributions."""
    s = 1j * omega
    ph = 0.0 if tf.num.leading >= 0 else -math.pi
    for z in zeros(tf):
        ph += np.angle(s - z)
    for p in (tf.den.roots() if tf.den.degree else []):
        ph -= np.angle(s - p)
    return float(ph)


def _log_grid(omega_lo, omega_hi, points_per_decade):
    decades = math.log10(omega_hi / omega_lo)
    n = max(int(math.ceil(decades * points_per_decade)) + 1, 2)
    return np.logspace(math.log10(omega_lo), math.log10(omega_hi), n)


def _unwrapped_phase(tf, omegas):
    g = _freq_response_array(tf, omegas)
    ph = np.unwrap(np.angle(g))
    anchor = _root_sum_phase(tf, omegas[0])
    ph += 2 * math.pi * round((anchor - ph[0]) / (2 * math.pi))
    return g, ph


def _phase_near(tf, omega, reference):
    raw = np.angle(freq_response(tf, omega))
    return raw + 2 * math.pi * round((reference - raw) / (2 * math.pi))


def _bisect_log(fun, lo, hi, lo_positive, rtol=1e-6):
    """Log-scale bisection; ``lo_positive`` is the grid's verdict on ``fun(lo) > 0``."""
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if (fun(mid) > 0) == lo_positive:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def margins(tf: TransferFunction, omega_lo: float, omega_hi: float,
            points_per_decade: int = 50) -> StabilityMargins:
    """Gain/phase margins of an open loop over ``[omega_lo, omega_hi]``.

    The lowest-frequency gain crossover is reported; ``multiple_crossovers``
    is set when more than one exists in range.
    """
    omega_lo = check_positive("omega_lo", omega_lo)
    omega_hi = check_positive("omega_hi", omega_hi)
    if not omega_lo < omega_hi:
        raise InvalidInputError("omega_lo must be below omega_hi")
    w = _log_grid(omega_lo, omega_hi, max(points_per_decade, 50))
    g, ph = _unwrapped_phase(tf, w)
    excess = np.log(np.abs(g))
    above = excess > 0
    idx = np.flatnonzero(above[:-1] != above[1:])
    if idx.size == 0:
        raise NoCrossoverError(f"|G| does not cross 1 within [{omega_lo}, {omega_hi}] rad/s")
    i = int(idx[0])
    wc = _bisect_log(lambda x: math.log(abs(freq_response(tf, x))), w[i], w[i + 1],
                     bool(above[i]))
    ref = float(np.interp(math.log(wc), np.log(w), ph))
    pm = 180.0 + math.degrees(_phase_near(tf, wc, ref))

    gm, wpc = math.inf, None
    shifted = ph + math.pi
    pos = shifted > 0
    jdx = np.flatnonzero(pos[:-1] != pos[1:])
    if jdx.size:
        j = int(jdx[0])
        ref_j = float(ph[j])
        wpc = _bisect_log(lambda x: _phase_near(tf, x, ref_j) + math.pi, w[j], w[j + 1],
                          bool(pos[j]))
        gm = -20.0 * math.log10(abs(freq_response(tf, wpc)))
    return StabilityMargins(pm, wc, gm, wpc, bool(idx.size > 1))


def bode(tf: TransferFunction, omegas) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(omega, magnitude_dB, unwrapped_phase_deg)`` on the given grid."""
    w = np.asarray(omegas, dtype=float)
    g, ph = _unwrapped_phase(tf, w)
    return w, 20 * np.log10(np.abs(g)), np.degrees(ph)


def write_bode_csv(path, tf: TransferFunction, omegas, footer: Sequence[str] = ()):
    """Write ``omega_rad_s,mag_db,phase_deg`` rows, then ``#``-prefixed footer lines.

    The file is written to a temporary name and renamed into place.
    """
    w, mag, ph = bode(tf, omegas)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["omega_rad_s", "mag_db", "phase_deg"])
            for row in zip(w, mag, ph):
                writer.writerow([repr(float(v)) for v in row])
            for line in footer:
                fh.write(f"# {line}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def series(a: TransferFunction, b: TransferFunction) -> TransferFunction:
    return TransferFunction(a.num * b.num, a.den * b.den)


def feedback_unity(a: TransferFunction) -> TransferFunction:
    return TransferFunction(a.num, a.den + a.num)


def cancel(tf: TransferFunction, rtol: float = 1e-6) -> TransferFunction:
    """Remove pole/zero pairs that coincide to within ``rtol`` (relative)."""
    z = list(zeros(tf))
    p = list(tf.den.roots()) if tf.den.degree else []
    keep_p = []
    for pole in p:
        hit = None
        for k, zero in enumerate(z):
            if abs(zero - pole) <= rtol * max(abs(pole), 1.0):
                hit = k
                break
        if hit is None:
            keep_p.append(pole)
        else:
            z.pop(hit)
    num = Polynomial.from_roots(z, tf.num.leading) if z else Polynomial([tf.num.leading])
    den = Polynomial.from_roots(keep_p) if keep_p else Polynomial([1.0])
    return TransferFunction(num, den)


# -- time responses ---------------------------------------------------------

def _canonical_ss(tf):
    """Controllable canonical (A, B, C, D) of a proper transfer function."""
    a = tf.den.coeffs  # monic
    n = a.size - 1
    b = np.zeros(n + 1)
    b[: tf.num.coeffs.size] = tf.num.coeffs
    d = b[n]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n]
    B = np.zeros(n)
    if n:
        B[-1] = 1.0
    C = b[:n] - a[:n] * d
    return A, B, C, d


@numba.njit(cache=True)
def _trapz_run(M, N, Bh, C, D, u):
    n = M.shape[0]
    x = np.zeros(n)
    y = np.empty(u.size)
    y[0] = D * u[0]
    for k in range(1, u.size):
        rhs = N @ x + Bh * (u[k - 1] + u[k])
        x = M @ rhs
        acc = D * u[k]
        for i in range(n):
            acc += C[i] * x[i]
        y[k] = acc
    return y


def _simulate(tf, t_end, dt, u_fun):
    t_end = check_positive("t_end", t_end)
    dt = check_positive("dt", dt)
    if dt > t_end / 100 * (1 + 1e-12):
        raise InvalidInputError("dt must not exceed t_end/100")
    if not tf.is_proper:
        raise ImproperSystemError("time response needs num degree <= den degree")
    t = np.arange(int(round(t_end / dt)) + 1) * dt
    u = u_fun(t)
    A, B, C, D = _canonical_ss(tf)
    n = A.shape[0]
    if n == 0:
        return TimeSeries(t, D * u)
    # Balancing is a similarity transform; it only improves conditioning.
    A, (sc, _) = matrix_balance(A, permute=False, separate=True)
    B = B / sc
    C = C * sc
    eye = np.eye(n)
    M = np.linalg.inv(eye - 0.5 * dt * A)
    N = eye + 0.5 * dt * A
    y = _trapz_run(M, N, 0.5 * dt * B, C, float(D), u)
    return TimeSeries(t, y)


def step_response(tf: TransferFunction, t_end: float, dt: float) -> TimeSeries:
    """Unit-step response by trapezoidal integration of the canonical realization."""
    return _simulate(tf, t_end, dt, np.ones_like)


def ramp_response(tf: TransferFunction, t_end: float, dt: float) -> TimeSeries:
    """Response to ``u(t) = t``."""
    return _simulate(tf, t_end, dt, lambda t: t.copy())
