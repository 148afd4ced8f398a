"""Simulation and loop-shaping tuning of holistic grid-forming control for an
HVDC-connected offshore wind power plant."""
import logging as _logging
import os as _os

__version__ = "0.1.0"

_level = _os.environ.get("GFMSIM_LOG")
if _level:
    _logging.basicConfig(level=_level.upper(), format="%(levelname)s %(name)s: %(message)s")
