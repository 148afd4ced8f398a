import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmsim.exceptions import (
    ImproperSystemError,
    InvalidInputError,
    NoCrossoverError,
    PoleOnAxisError,
)
from gfmsim.linsys import (
    Polynomial,
    TransferFunction,
    bode,
    cancel,
    feedback_unity,
    freq_response,
    margins,
    poles,
    ramp_response,
    series,
    step_response,
    write_bode_csv,
    zeros,
)


# -- Polynomial ---------------------------------------------------------------

def test_polynomial_normalizes_trailing_zeros():
    p = Polynomial([1.0, 2.0, 0.0, 0.0])
    assert p.degree == 1
    assert list(p.coeffs) == [1.0, 2.0]


def test_zero_polynomial_is_single_zero():
    p = Polynomial([0.0, 0.0])
    assert p.is_zero and p.degree == 0 and list(p.coeffs) == [0.0]


def test_polynomial_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        Polynomial([1.0, float("nan")])


def test_polynomial_arithmetic():
    a, b = Polynomial([1, 1]), Polynomial([2, 1])
    assert a * b == Polynomial([2, 3, 1])
    assert a + b == Polynomial([3, 2])
    assert a - a == Polynomial([0])


# -- TransferFunction ---------------------------------------------------------

def test_denominator_made_monic():
    tf = TransferFunction([2.0], [4.0, 2.0])
    assert tf.den.leading == 1.0
    assert tf == TransferFunction([1.0], [2.0, 1.0])


def test_zero_denominator_rejected():
    with pytest.raises(InvalidInputError):
        TransferFunction([1.0], [0.0])


def test_first_order_pole():
    assert np.allclose(poles(TransferFunction([1], [1, 1])), [-1.0])


def test_quadratic_poles_match_formula():
    zeta, wn = 0.5, 100.0
    p = poles(TransferFunction([1], [wn * wn, 2 * zeta * wn, 1]))
    expected = -zeta * wn + 1j * wn * math.sqrt(1 - zeta ** 2)
    assert np.isclose(p[p.imag > 0][0], expected, rtol=1e-9)
    assert np.isclose(expected, -50 + 86.6025j, atol=1e-4)


def test_poles_come_in_conjugate_pairs():
    tf = TransferFunction([1], Polynomial.from_roots([-1 + 2j, -1 - 2j, -3 + 1j, -3 - 1j, -5]))
    p = poles(tf)
    for z in p[p.imag > 1e-12]:
        assert np.min(np.abs(p - np.conj(z))) <= 1e-9 * abs(z)


def test_zeros():
    assert np.allclose(np.sort(zeros(TransferFunction([2, 3, 1], [1, 1, 1]))), [-2, -1])


def test_freq_response_first_order():
    assert freq_response(TransferFunction([1], [1, 1]), 1.0) == pytest.approx(0.5 - 0.5j)


def test_freq_response_integrator():
    assert freq_response(TransferFunction([1], [0, 1]), 10.0) == pytest.approx(-0.1j)


def test_freq_response_pole_on_axis():
    with pytest.raises(PoleOnAxisError):
        freq_response(TransferFunction([1], [1, 0, 1]), 1.0)


def test_freq_response_needs_positive_omega():
    with pytest.raises(InvalidInputError):
        freq_response(TransferFunction([1], [1, 1]), 0.0)


# -- margins ------------------------------------------------------------------

def test_margins_integrator():
    m = margins(TransferFunction([10], [0, 1]), 0.1, 1000)
    assert m.gain_crossover_rad_s == pytest.approx(10, rel=1e-6)
    assert m.phase_margin_deg == pytest.approx(90, abs=1e-6)
    assert m.gain_margin_db == math.inf


def test_margins_double_integrator():
    m = margins(TransferFunction([1], [0, 0, 1]), 0.01, 100)
    assert m.gain_crossover_rad_s == pytest.approx(1, rel=1e-6)
    assert m.phase_margin_deg == pytest.approx(0, abs=1e-6)


def test_margins_no_crossover():
    with pytest.raises(NoCrossoverError):
        margins(TransferFunction([0.01], [1, 1]), 0.1, 100)


def test_margins_multiple_crossovers_flagged():
    # resonant peak pokes above unity after the first crossover
    tf = series(TransferFunction([2], [0, 1]), TransferFunction([1e6], [1e6, 0.5, 1]))
    m = margins(tf, 0.1, 1e5)
    assert m.multiple_crossovers
    assert m.gain_crossover_rad_s == pytest.approx(2, rel=1e-3)


def test_margins_third_order_known_values():
    # 1/(s+1)^3 scaled to cross at w=1: K = 2^{3/2}
    K = 2 ** 1.5
    m = margins(TransferFunction([K], [1, 3, 3, 1]), 0.01, 100)
    assert m.gain_crossover_rad_s == pytest.approx(1.0, rel=1e-6)
    assert m.phase_margin_deg == pytest.approx(180 - 3 * 45, abs=1e-3)
    assert m.phase_crossover_rad_s == pytest.approx(math.sqrt(3), rel=1e-5)
    assert m.gain_margin_db == pytest.approx(-20 * math.log10(K / 8), rel=1e-5)


def test_crossover_magnitude_is_unity():
    tf = TransferFunction([50, 5], [0, 0, 1, 0.01])
    m = margins(tf, 0.01, 1e4)
    assert abs(freq_response(tf, m.gain_crossover_rad_s)) == pytest.approx(1.0, rel=1e-5)


# -- series / feedback / cancel ----------------------------------------------

def test_series():
    assert series(TransferFunction([1], [1, 1]), TransferFunction([1], [2, 1])) == \
        TransferFunction([1], [2, 3, 1])


def test_feedback_unity():
    k = 7.0
    assert feedback_unity(TransferFunction([k], [0, 1])) == TransferFunction([k], [k, 1])


def test_cancel_removes_common_factor():
    tf = TransferFunction(Polynomial([2, 1]) * Polynomial([5]), Polynomial([2, 1]) * Polynomial([3, 1]))
    out = cancel(tf)
    assert out.den.degree == 1 and out.num.degree == 0
    assert np.allclose(out.den.coeffs, [3, 1]) and np.allclose(out.num.coeffs, [5])


# -- time responses -----------------------------------------------------------

def test_step_first_order():
    ts = step_response(TransferFunction([1], [1, 1]), 1.0, 1e-3)
    assert ts.final == pytest.approx(1 - math.exp(-1), abs=1e-3)


def test_ramp_integrator():
    ts = ramp_response(TransferFunction([1], [0, 1]), 2.0, 1e-3)
    assert ts.final == pytest.approx(2.0, abs=1e-6)


def test_step_improper_rejected():
    with pytest.raises(ImproperSystemError):
        step_response(TransferFunction([0, 0, 1], [1, 1]), 1.0, 1e-3)


def test_step_needs_fine_grid():
    with pytest.raises(InvalidInputError):
        step_response(TransferFunction([1], [1, 1]), 1.0, 0.1)


def test_step_with_feedthrough():
    # (s+2)/(s+1): y(0+) = 1, y(inf) = 2
    ts = step_response(TransferFunction([2, 1], [1, 1]), 10.0, 1e-3)
    assert ts.y[0] == pytest.approx(1.0)
    assert ts.final == pytest.approx(2.0, abs=1e-3)


# -- bode export --------------------------------------------------------------

def test_bode_csv(tmp_path):
    tf = TransferFunction([1], [1, 1])
    w = np.logspace(-1, 1, 21)
    path = tmp_path / "b.csv"
    write_bode_csv(path, tf, w, footer=["note = 1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "omega_rad_s,mag_db,phase_deg"
    assert len(lines) == 1 + 21 + 1
    assert lines[-1] == "# note = 1"
    row = [float(v) for v in lines[11].split(",")]
    assert row[0] == pytest.approx(1.0)
    assert row[1] == pytest.approx(-10 * math.log10(2))
    assert row[2] == pytest.approx(-45.0)
    assert not list(tmp_path.glob("*.tmp"))


def test_bode_phase_is_unwrapped():
    _, _, ph = bode(TransferFunction([1], [1, 3, 3, 1]), np.logspace(-2, 3, 200))
    assert ph[-1] == pytest.approx(-270, abs=0.5)
    assert np.all(np.abs(np.diff(ph)) < 10)


# -- properties ---------------------------------------------------------------

coef = st.floats(min_value=-10, max_value=10, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@st.composite
def stable_polys(draw, max_deg=6):
    n_real = draw(st.integers(0, max_deg))
    n_pair = draw(st.integers(0, (max_deg - n_real) // 2))
    if n_real + n_pair == 0:
        n_real = 1
    roots = [-draw(st.floats(0.01, 100)) for _ in range(n_real)]
    for _ in range(n_pair):
        re = -draw(st.floats(0.01, 100))
        im = draw(st.floats(0.01, 100))
        roots += [complex(re, im), complex(re, -im)]
    return Polynomial.from_roots(roots, gain=draw(st.floats(0.1, 10)))


@settings(max_examples=1000, deadline=None)
@given(stable_polys())
def test_roots_satisfy_polynomial(p):
    r = p.roots()
    assert r.size == p.degree
    scale = np.max(np.abs(p.coeffs))
    assert np.all(np.abs(p(r)) < 1e-6 * scale)


@settings(max_examples=100, deadline=None)
@given(stable_polys(), st.lists(coef, min_size=1, max_size=3))
def test_series_with_unity_keeps_poles(den, num):
    tf = TransferFunction(num, den)
    assert np.allclose(np.sort_complex(poles(series(tf, TransferFunction.gain(1.0)))),
                       np.sort_complex(poles(tf)))


@settings(max_examples=100, deadline=None)
@given(stable_polys(), st.lists(coef, min_size=1, max_size=3), st.floats(0.01, 1000))
def test_conjugate_symmetry(den, num, w):
    tf = TransferFunction(num, den)
    assert tf(-1j * w) == pytest.approx(np.conj(tf(1j * w)), rel=1e-9, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 20), st.floats(0.05, 2))
def test_closed_loop_with_integrator_tracks_step(k, a):
    # k/(s(s+a)) in unity feedback is always stable
    cl = feedback_unity(TransferFunction([k], [0, a, 1]))
    assert np.all(poles(cl).real < 0)
    slowest = min(-poles(cl).real)
    t_end = 12 / slowest
    ts = step_response(cl, t_end, t_end / 4000)
    assert ts.final == pytest.approx(1.0, abs=0.01)
