import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmsim.benchmark import BenchmarkSystem, TuningConfig, fcr_preset
from gfmsim.config import (
    ConfigDocument,
    ScenarioConfig,
    dump_config,
    format_gains,
    load_config,
    parse_config,
    parse_gains,
    read_gains,
    write_gains,
)
from gfmsim.exceptions import ConfigError

positive = st.floats(1e-6, 1e9, allow_nan=False, allow_infinity=False)


def test_empty_text_gives_defaults():
    assert parse_config("") == ConfigDocument()


def test_missing_keys_take_defaults():
    doc = parse_config("[tuning]\nh_ac = 7\n")
    assert doc.system.tuning == replace(TuningConfig(), h_ac=7.0)
    assert doc.system.onshore == BenchmarkSystem().onshore


def test_default_document_round_trips():
    doc = ConfigDocument()
    assert parse_config(dump_config(doc)) == doc


@settings(max_examples=40, deadline=None)
@given(h_ac=positive, H=positive, C=positive, dur=positive)
def test_round_trip_is_fixed_point(h_ac, H, C, dur):
    b = BenchmarkSystem()
    doc = ConfigDocument(
        replace(b, tuning=replace(b.tuning, h_ac=h_ac), onshore=replace(b.onshore, H=H),
                hvdc_line=replace(b.hvdc_line, C_dc=C)),
        ScenarioConfig(duration=dur))
    text = dump_config(doc)
    assert parse_config(text) == doc
    assert dump_config(parse_config(text)) == text


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[tuning]\nh_ac = 5\n\nh_bogus = 1\n")
    assert exc.value.key == "tuning.h_bogus"
    assert exc.value.line == 4


def test_unknown_section():
    with pytest.raises(ConfigError) as exc:
        parse_config("# header\n[system.moon]\nx = 1\n")
    assert exc.value.key == "system.moon" and exc.value.line == 2


def test_non_numeric_value():
    with pytest.raises(ConfigError) as exc:
        parse_config("[system.onshore]\nH = two\n")
    assert exc.value.key == "system.onshore.H" and exc.value.line == 2


def test_non_finite_value():
    with pytest.raises(ConfigError):
        parse_config("[system.onshore]\nH = nan\n")


def test_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("[tuning]\nh_ac = 5\nh_ac = 6\n")
    assert exc.value.line == 3


def test_key_outside_section():
    with pytest.raises(ConfigError):
        parse_config("h_ac = 5\n")


def test_inline_comments_are_ignored():
    assert parse_config("[tuning]\nh_dc = 6  # stiffer\n").system.tuning.h_dc == 6.0


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_custom_events():
    sc = ScenarioConfig(events="7 wind_power_step -1e8; 6 onshore_load_step 1e8")
    ev = sc.scenario("custom").events
    assert [e.t for e in ev] == [6.0, 7.0]
    assert ev[1].kind == "wind_power_step"


def test_preset_scenario_uses_load_step():
    ev = ScenarioConfig(load_step=9e7).scenario("fcr").events
    assert len(ev) == 1 and ev[0].value == 9e7 and ev[0].t == 5.0


# -- gains files -------------------------------------------------------------------

def test_gains_round_trip(tmp_path, gains):
    g = fcr_preset(gains)
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_gains(a, g)
    back = read_gains(a)
    write_gains(b, back)
    assert a.read_text() == b.read_text()
    assert back == g
    assert back.provenance["h_ac"] == 5.0


def test_gains_file_carries_units(gains):
    text = format_gains(gains)
    assert "mmc_on.K_H = " in text and "# Hz/J" in text
    assert "# provenance" in text and "provenance.omega_idc = 1000.0" in text


def test_bad_gains_line_is_located(gains):
    lines = format_gains(gains).splitlines()
    lines[3] = "mmc_on.K_R = lots"
    with pytest.raises(ConfigError) as exc:
        parse_gains("\n".join(lines))
    assert exc.value.line == 4


def test_incomplete_gains_file():
    with pytest.raises(ConfigError):
        parse_gains("mmc_on.K_H = 1e-6\n")


def test_float_repr_is_exact(gains):
    assert math.isclose(parse_gains(format_gains(gains)).mmc_on.K_H, gains.mmc_on.K_H, rel_tol=0)
