"""Run configuration: a flat ``section.key = <JSON value>`` text file.

Example::

    # two disks between equal baths
    geometry.n_disks = 2
    geometry.radius = 0.3
    baths.preset = "equilibrium"
    baths.temperature = 1.0
    baths.rate = 0.5
    run.seed = 7

Lines starting with ``#`` and blank lines are ignored.  Every key must
be known; values are parsed as JSON.  Errors carry the line number.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from .baths import (BathSpec, CosineAngleLaw, MaxwellSpeedLaw, TabulatedLaw, UniformLaw,
                    equilibrium_bath)
from .dynamics import PhysicalParams, SystemState
from .ensemble import RunConfig, default_burn_in, equilibrium_mean_count
from .exceptions import ConfigError
from .geometry import DomainSpec

_NUM = (int, float)
_LAW = (str, dict)
_OPT_NUM = (int, float, type(None))
_OPT_STR = (str, type(None))

# key -> (accepted types, default)
SCHEMA: Dict[str, tuple] = {
    "geometry.n_disks": (int, 1),
    "geometry.radius": (_NUM, 0.3),
    "physics.eta": (_NUM, 1.0),
    "physics.mass": (_NUM, 1.0),
    "baths.preset": (str, "equilibrium"),
    "baths.temperature": (_NUM, 1.0),
    "baths.rate": (_NUM, 0.5),
    "run.seed": (int, 0),
    "run.t_end": (_NUM, 1000.0),
    "run.burn_in": (_OPT_NUM, None),
    "run.sample_interval": (_NUM, 1.0),
    "run.replicas": (int, 1),
    "run.jobs": (int, 1),
    "run.record_events": (bool, True),
    "initial.state": (_OPT_STR, None),
    "planner.speed_cap": (_NUM, 1e6),
    "planner.retries": (int, 64),
    "planner.clearance": (_NUM, 20.0),
    "planner.min_window": (_NUM, 1e-3),
    "planner.method": (str, "auto"),
    "verify.level": (_NUM, 1e-3),
    "verify.stride": ((int, type(None)), None),
}
for _side in ("left", "right"):
    SCHEMA.update({
        f"baths.{_side}.rate": (_OPT_NUM, None),
        f"baths.{_side}.temperature": (_OPT_NUM, None),
        f"baths.{_side}.position": (_LAW, "uniform"),
        f"baths.{_side}.angle": (_LAW, "cosine"),
        f"baths.{_side}.speed": (_LAW, "maxwell"),
    })

PRESETS = ("equilibrium", "custom")


def _check_type(key, value, line):
    types = SCHEMA[key][0]
    types = types if isinstance(types, tuple) else (types,)
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"line {line}: {key} expects {_type_names(types)}, got {value!r}")
    if not isinstance(value, types):
        raise ConfigError(f"line {line}: {key} expects {_type_names(types)}, got {value!r}")


def _type_names(types):
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


@dataclass
class Config:
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)   # key -> line number
    base_dir: str = "."

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][1]

    def _where(self, key):
        ln = self.lines.get(key)
        return f"line {ln}: {key}" if ln else key

    def _fail(self, key, msg):
        raise ConfigError(f"{self._where(key)}: {msg}")

    # -- builders ------------------------------------------------------

    def domain(self) -> DomainSpec:
        try:
            return DomainSpec(self["geometry.n_disks"], float(self["geometry.radius"]))
        except ValueError as exc:
            key = "geometry.radius" if "radius" in str(exc) else "geometry.n_disks"
            self._fail(key, str(exc))

    def params(self) -> PhysicalParams:
        try:
            return PhysicalParams(float(self["physics.eta"]), float(self["physics.mass"]))
        except ValueError as exc:
            self._fail("physics.eta", str(exc))

    def _law(self, side, kind):
        key = f"baths.{side}.{kind}"
        spec = self[key]
        if isinstance(spec, str):
            name, arg = spec, None
        elif len(spec) == 1:
            (name, arg), = spec.items()
        else:
            self._fail(key, "a law is a name or a one-entry object")
        if name == "table":
            path = arg if os.path.isabs(arg) else os.path.join(self.base_dir, arg)
            try:
                return TabulatedLaw.from_file(path)
            except (OSError, ValueError) as exc:
                self._fail(key, f"cannot read table {path}: {exc}")
        if kind == "position" and name == "uniform":
            lo, hi = (-1.0, 1.0) if arg is None else arg
            if not -1.0 <= lo < hi <= 1.0:
                self._fail(key, "uniform bounds must satisfy -1 <= lo < hi <= 1")
            return UniformLaw(float(lo), float(hi))
        if kind == "angle" and name == "cosine":
            return CosineAngleLaw()
        if kind == "speed" and name == "maxwell":
            T = arg if arg is not None else self._side_temperature(side)
            if not T > 0:
                self._fail(key, "temperature must be positive")
            return MaxwellSpeedLaw(float(T), float(self["physics.mass"]))
        self._fail(key, f"unknown {kind} law {name!r}")

    def _side_temperature(self, side):
        T = self[f"baths.{side}.temperature"]
        return self["baths.temperature"] if T is None else T

    def baths(self):
        preset = self["baths.preset"]
        if preset not in PRESETS:
            self._fail("baths.preset", f"must be one of {PRESETS}")
        m = float(self["physics.mass"])
        out = []
        for side in ("left", "right"):
            rate = self[f"baths.{side}.rate"]
            rate = self["baths.rate"] if rate is None else rate
            try:
                if preset == "equilibrium":
                    out.append(equilibrium_bath(side, float(self._side_temperature(side)), float(rate), m))
                else:
                    laws = [self._law(side, k) for k in ("position", "angle", "speed")]
                    eq = (isinstance(laws[0], UniformLaw) and (laws[0].lo, laws[0].hi) == (-1.0, 1.0)
                          and isinstance(laws[1], CosineAngleLaw) and isinstance(laws[2], MaxwellSpeedLaw))
                    out.append(BathSpec(side, float(rate), *laws,
                                        temperature=laws[2].temperature if eq else None))
            except ValueError as exc:
                self._fail(f"baths.{side}.rate", str(exc))
        return out

    def equal_equilibrium(self) -> Optional[tuple]:
        """``(T, rate)`` if both baths are the same equilibrium bath, else ``None``."""
        b = self.baths()
        if b[0].temperature is None or b[1].temperature is None:
            return None
        if b[0].temperature != b[1].temperature or b[0].rate != b[1].rate:
            return None
        return b[0].temperature, b[0].rate

    def initial_state(self) -> Optional[SystemState]:
        path = self["initial.state"]
        if path is None:
            return None
        path = path if os.path.isabs(path) else os.path.join(self.base_dir, path)
        try:
            st = load_state(path)
        except (OSError, ValueError, KeyError) as exc:
            self._fail("initial.state", f"cannot load {path}: {exc}")
        if len(st.disks) != self["geometry.n_disks"]:
            self._fail("initial.state", f"snapshot has {len(st.disks)} disks")
        return st

    def run_config(self) -> RunConfig:
        dom, params, baths = self.domain(), self.params(), self.baths()
        burn = self["run.burn_in"]
        if burn is None:
            eq = self.equal_equilibrium()
            if eq is not None and eq[1] > 0:
                lam = equilibrium_mean_count(dom, eq[1], params.mass, eq[0])
                # short runs (e.g. smoke tests) keep at least half the window
                burn = min(default_burn_in(lam, 2 * eq[1]), 0.5 * float(self["run.t_end"]))
            else:
                burn = 0.1 * float(self["run.t_end"])
        try:
            return RunConfig(dom, params, baths, self["run.seed"], float(self["run.t_end"]), float(burn),
                             float(self["run.sample_interval"]), self.initial_state())
        except ValueError as exc:
            self._fail("run.burn_in", str(exc))

    def to_dict(self) -> dict:
        return {k: self[k] for k in sorted(SCHEMA)}


def parse_config(text: str, base_dir: str = ".", source: str = "<config>") -> Config:
    values, lines = {}, {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {i}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source} line {i}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source} line {i}: {key} already set on line {lines[key]}")
        try:
            value = json.loads(val.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source} line {i}: {key}: value is not JSON ({exc.msg})") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{source} line {i}: {key}: value must be finite")
        _check_type(key, value, i)
        values[key], lines[key] = value, i
    return Config(values, lines, base_dir)


def load_config(path) -> Config:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)), str(path))


def save_state(state: SystemState, path):
    with open(path, "w") as fh:
        fh.write(state.to_json() + "\n")


def load_state(path) -> SystemState:
    with open(path) as fh:
        return SystemState.from_json(fh.read())
