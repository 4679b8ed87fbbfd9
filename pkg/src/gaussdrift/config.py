"""Flat ``key = value`` run configuration.

One setting per line, dotted keys, ``#`` starts a comment.  Lists are
comma separated.  Absent keys take the defaults in :data:`DEFAULTS`; unknown
keys are rejected so typos never pass silently.

    # example
    model.epsilon = 10
    bath.temperature = 400
    delta_x_list = 10, 20, 30, 40
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .environment import BathParams
from .experiment import NOISE_FLOOR, TrajectorySettings

COHERENCE_MODES = ("averaged-operator", "mean-of-norms")
SEPARATION_AXES = ("position", "momentum", "mixed")
BATH_MODES = ("flux", "roster")


class ConfigError(ValueError):
    """Bad configuration.  ``kind`` is one of parse, unknown-key, constraint."""

    def __init__(self, kind: str, message: str, key: str | None = None, line: int | None = None):
        self.kind = kind
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


# key -> (attribute, type); order here is the order of the manifest echo
_KEYS = {
    "model.epsilon": ("epsilon", float),
    "model.width": ("width", float),
    "bath.temperature": ("temperature", float),
    "bath.density": ("density", float),
    "bath.mass": ("m_env", float),
    "bath.env_width": ("env_width", float),
    "bath.mode": ("bath_mode", str),
    "bath.roster_size": ("roster_size", int),
    "vicinity.radius": ("vicinity_radius", float),
    "vicinity.max_active": ("max_active", int),
    "ode_rel_tol": ("ode_rel_tol", float),
    "ode_abs_tol": ("ode_abs_tol", float),
    "ode_max_step": ("ode_max_step", float),
    "delta_x_list": ("delta_x_list", list),
    "separation_axis": ("separation_axis", str),
    "t_max": ("t_max", float),
    "n_samples": ("n_samples", int),
    "n_realizations": ("n_realizations", int),
    "master_seed": ("master_seed", int),
    "threads": ("threads", int),
    "output_dir": ("output_dir", str),
    "coherence_mode": ("coherence_mode", str),
    "noise_floor": ("noise_floor", float),
}


@dataclass(frozen=True)
class RunConfig:
    epsilon: float = 10.0
    width: float = 25.0
    temperature: float = 400.0
    density: float = 2e-7
    m_env: float = 1.0
    env_width: float = 5.0
    bath_mode: str = "flux"
    roster_size: int = 1500
    vicinity_radius: float = 62.5
    max_active: int = 1
    ode_rel_tol: float = 1e-8
    ode_abs_tol: float = 1e-8
    ode_max_step: float = 0.5
    delta_x_list: tuple = (10.0, 20.0, 30.0, 40.0)
    separation_axis: str = "position"
    t_max: float = 10.0  # oscillator periods
    n_samples: int = 41
    n_realizations: int = 200
    master_seed: int = 1234
    threads: int = 0  # 0 = one per CPU
    output_dir: str = "out"
    coherence_mode: str = "averaged-operator"
    noise_floor: float = NOISE_FLOOR

    def __post_init__(self):
        validate(self)

    def bath_params(self) -> BathParams:
        return BathParams(temperature=self.temperature, density=self.density, m_env=self.m_env,
                          env_width=self.env_width, vicinity_radius=self.vicinity_radius,
                          max_active=self.max_active, mode=self.bath_mode,
                          roster_size=self.roster_size, interaction_width=self.width)

    def trajectory_settings(self) -> TrajectorySettings:
        return TrajectorySettings(epsilon=self.epsilon, width=self.width, bath=self.bath_params(),
                                  rtol=self.ode_rel_tol, atol=self.ode_abs_tol,
                                  max_step=self.ode_max_step)

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def items(self):
        """(key, text) pairs in canonical order; the text parses back to the same value."""
        for key, (attr, _) in _KEYS.items():
            yield key, format_value(getattr(self, attr))

    def replace(self, **changes) -> RunConfig:
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return RunConfig(**vals)


def format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _attr_key(attr: str) -> str:
    for key, (a, _) in _KEYS.items():
        if a == attr:
            return key
    return attr


def _fail(attr: str, message: str):
    key = _attr_key(attr)
    raise ConfigError("constraint", f"{key}: {message}", key=key)


def validate(cfg: RunConfig) -> None:
    """Check every field; the first violation raises ConfigError naming its key."""
    def finite(attr):
        v = getattr(cfg, attr)
        if not math.isfinite(v):
            _fail(attr, f"must be finite, got {v!r}")
        return v

    for attr in ("epsilon", "temperature", "density"):
        if finite(attr) < 0:
            _fail(attr, "must be >= 0")
    for attr in ("width", "m_env", "env_width", "vicinity_radius", "ode_rel_tol", "ode_abs_tol",
                 "t_max"):
        if not finite(attr) > 0:
            _fail(attr, "must be > 0")
    if not cfg.ode_max_step > 0:
        _fail("ode_max_step", "must be > 0")
    if not 0 < finite("noise_floor"):
        _fail("noise_floor", "must be > 0")
    if cfg.max_active < 1:
        _fail("max_active", "must be >= 1")
    if cfg.roster_size < 0:
        _fail("roster_size", "must be >= 0")
    if cfg.bath_mode not in BATH_MODES:
        _fail("bath_mode", f"must be one of {', '.join(BATH_MODES)}")
    if cfg.n_samples < 5:
        _fail("n_samples", "must be >= 5 (a decay fit needs five points)")
    if cfg.n_realizations < 1:
        _fail("n_realizations", "must be >= 1")
    if not 0 <= cfg.master_seed < 2**64:
        _fail("master_seed", "must be an unsigned 64-bit integer")
    if cfg.threads < 0:
        _fail("threads", "must be >= 0")
    if not cfg.delta_x_list:
        _fail("delta_x_list", "must not be empty")
    for dx in cfg.delta_x_list:
        if not (math.isfinite(dx) and dx >= 0):
            _fail("delta_x_list", f"entries must be finite and >= 0, got {dx!r}")
    if len(set(cfg.delta_x_list)) != len(cfg.delta_x_list):
        _fail("delta_x_list", "entries must be distinct")
    if cfg.separation_axis not in SEPARATION_AXES:
        _fail("separation_axis", f"must be one of {', '.join(SEPARATION_AXES)}")
    if cfg.coherence_mode not in COHERENCE_MODES:
        _fail("coherence_mode", f"must be one of {', '.join(COHERENCE_MODES)}")
    if not cfg.output_dir:
        _fail("output_dir", "must not be empty")


DEFAULTS = RunConfig()


def _convert(key: str, typ, text: str, line: int):
    try:
        if typ is float:
            return float(text)
        if typ is int:
            return int(text, 0)
        if typ is list:
            return tuple(float(t) for t in text.split(",") if t.strip())
        return text
    except ValueError:
        raise ConfigError("parse", f"{key}: cannot read {text!r} as {typ.__name__}",
                          key=key, line=line) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("parse", f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError("unknown-key", f"unknown key {key!r}", key=key, line=lineno)
        if key in values:
            raise ConfigError("parse", f"duplicate key {key!r}", key=key, line=lineno)
        if not val:
            raise ConfigError("parse", f"{key}: missing value", key=key, line=lineno)
        attr, typ = _KEYS[key]
        values[attr] = _convert(key, typ, val, lineno)
        lines[key] = lineno
    try:
        return (base or DEFAULTS).replace(**values)
    except ConfigError as exc:
        if exc.key in lines:
            raise ConfigError(exc.kind, str(exc), key=exc.key, line=lines[exc.key]) from None
        raise


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())
