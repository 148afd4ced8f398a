"""Configuration documents and gains files.

Configuration is INI text with the sections ``system.onshore``,
``system.mmc_on``, ``system.mmc_off``, ``system.hvdc_line``, ``system.owpp``,
``tuning`` and ``scenario``.  Keys are the field names of the matching
dataclasses, in SI units; absent keys take the benchmark defaults.

A gains file is flat ``owner.key = value  # unit`` text followed by a
``provenance.*`` block recording the tuning inputs.
"""
from __future__ import annotations

import configparser
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, fields, replace

from .benchmark import (
    BenchmarkSystem,
    GainSet,
    HvdcLineConfig,
    MmcConfig,
    OnshoreConfig,
    OwppConfig,
    TuningConfig,
)
from .control import MmcControllerGains, WtgControllerGains
from .exceptions import ConfigError, InvalidInputError
from .sim import Event, Scenario

__all__ = ["ScenarioConfig", "ConfigDocument", "load_config", "dump_config",
           "write_gains", "read_gains", "format_gains", "parse_gains", "atomic_write"]


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float = 25.0
    dt: float = 50e-6
    settle_time: float = 5.0
    log_rate_hz: float = 10e3
    load_step: float = 180e6       # 5 % of the onshore machine rating, a chosen magnitude
    events: str = ""               # custom scenario: "t kind value [target]; ..."

    def parse_events(self) -> tuple:
        out = []
        for chunk in filter(None, (c.strip() for c in self.events.split(";"))):
            parts = chunk.split()
            if len(parts) not in (3, 4):
                raise InvalidInputError(f"event {chunk!r} needs 't kind value [target]'")
            t, kind, value = float(parts[0]), parts[1], float(parts[2])
            out.append(Event(t, kind, value, parts[3] if len(parts) == 4 else ""))
        return tuple(sorted(out, key=lambda e: e.t))

    def scenario(self, preset: str, dt: float | None = None) -> Scenario:
        dt = self.dt if dt is None else dt
        if preset == "custom":
            events = self.parse_events()
        else:
            events = (Event(self.settle_time, "onshore_load_step", self.load_step),)
        return Scenario(self.duration, dt, self.settle_time, events, self.log_rate_hz)


SECTIONS = {
    "system.onshore": ("onshore", OnshoreConfig),
    "system.mmc_on": ("mmc_on", MmcConfig),
    "system.mmc_off": ("mmc_off", MmcConfig),
    "system.hvdc_line": ("hvdc_line", HvdcLineConfig),
    "system.owpp": ("owpp", OwppConfig),
    "tuning": ("tuning", TuningConfig),
    "scenario": (None, ScenarioConfig),
}


@dataclass(frozen=True)
class ConfigDocument:
    system: BenchmarkSystem = field(default_factory=BenchmarkSystem)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    idx = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip()
            idx.setdefault((section, None), n)
            continue
        if line and not line.startswith(("#", ";")) and "=" in line and section is not None:
            key = line.split("=", 1)[0].strip()
            idx.setdefault((section, key), n)
    return idx


def _coerce(kind, raw: str, where: str, line):
    if kind is str or kind == "str":
        return raw
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"value {raw!r} is not a number", where, line) from None
    if not math.isfinite(v):
        raise ConfigError(f"value {raw!r} is not finite", where, line)
    return v


def parse_config(text: str) -> ConfigDocument:
    """Parse configuration text; every error names the key and line."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   strict=True, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError("duplicate key", f"{e.section}.{e.option}", e.lineno) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError("duplicate section", e.section, e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside any section", e.line.strip().split("=")[0].strip(), e.lineno) from None
    except configparser.ParsingError as e:
        lineno, bad = e.errors[0]
        raise ConfigError("cannot parse line", bad.strip(), lineno) from None

    parts = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown section", section, lines.get((section, None)))
        attr, cls = SECTIONS[section]
        default = getattr(BenchmarkSystem(), attr) if attr else cls()
        types = {f.name: (str if f.type in (str, "str") else float) for f in fields(cls)}
        changes = {}
        for key, raw in cp.items(section):
            where = f"{section}.{key}"
            line = lines.get((section, key))
            if key not in types:
                raise ConfigError("unknown key", where, line)
            changes[key] = _coerce(types[key], raw.strip(), where, line)
        try:
            parts[section] = replace(default, **changes)
        except (InvalidInputError, ValueError) as e:
            raise ConfigError(str(e), section, lines.get((section, None))) from None

    sys_kwargs = {SECTIONS[s][0]: v for s, v in parts.items() if SECTIONS[s][0]}
    system = BenchmarkSystem(**sys_kwargs)
    scenario = parts.get("scenario", ScenarioConfig())
    return ConfigDocument(system, scenario)


def load_config(path) -> ConfigDocument:
    if path is None:
        return ConfigDocument()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    return parse_config(text)


def dump_config(doc: ConfigDocument) -> str:
    """Serialize every key; ``parse_config(dump_config(d)) == d``."""
    out = []
    for section, (attr, _cls) in SECTIONS.items():
        obj = getattr(doc.system, attr) if attr else doc.scenario
        out.append(f"[{section}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            out.append(f"{f.name} = {v if isinstance(v, str) else repr(float(v))}")
        out.append("")
    return "\n".join(out)


def atomic_write(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- gains files -------------------------------------------------------------

UNITS = {
    "K_H": "Hz/J", "K_D": "rad/Hz", "K_R": "V/Hz", "R_v": "ohm", "T_v": "s", "K_pUdc": "A/V",
    "K_iUdc": "A/(V s)", "K_pIdc": "V/A", "K_iIdc": "V/(A s)", "cmp_num": "coefficients, ascending",
    "cmp_den": "coefficients, ascending", "f_star": "Hz", "f_N": "Hz", "U_mid_star": "V",
    "W_t_star": "J", "R_dc": "ohm", "dc_sign": "-", "K_Hlink": "Hz/J", "K_Dlink": "rad/Hz",
    "R_vw": "ohm", "T_vw": "s", "K_Hw": "W s/Hz", "K_Rw": "W/Hz", "P_set": "W",
    "W_link_star": "J", "U_link_o": "V",
}


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(c)) for c in v)
    return repr(float(v))


def format_gains(gains: GainSet) -> str:
    lines = ["# controller gains"]
    for owner in ("mmc_on", "mmc_off", "wtg"):
        g = getattr(gains, owner)
        for f in fields(g):
            lines.append(f"{owner}.{f.name} = {_fmt(getattr(g, f.name))}  # {UNITS.get(f.name, '-')}")
    lines.append("# provenance")
    for k, v in gains.provenance.items():
        lines.append(f"provenance.{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def parse_gains(text: str) -> GainSet:
    values: dict[str, dict] = {"mmc_on": {}, "mmc_off": {}, "wtg": {}, "provenance": {}}
    tuples = {"cmp_num", "cmp_den"}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'owner.key = value'", line, n)
        lhs, rhs = (s.strip() for s in line.split("=", 1))
        owner, _, key = lhs.partition(".")
        if owner not in values or not key:
            raise ConfigError("unknown gain owner", lhs, n)
        try:
            if key in tuples:
                values[owner][key] = tuple(float(c) for c in rhs.split(","))
            else:
                values[owner][key] = float(rhs)
        except ValueError:
            raise ConfigError(f"value {rhs!r} is not a number", lhs, n) from None
    try:
        return GainSet(MmcControllerGains(**values["mmc_on"]), MmcControllerGains(**values["mmc_off"]),
                       WtgControllerGains(**values["wtg"]), provenance=values["provenance"])
    except TypeError as e:
        raise ConfigError(f"incomplete or unknown gain keys: {e}") from None


def write_gains(path, gains: GainSet) -> None:
    atomic_write(path, format_gains(gains))


def read_gains(path) -> GainSet:
    try:
        with open(path) as fh:
            return parse_gains(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read gains file: {e.strerror}", str(path)) from None
