"""Run configuration files.

Configs are YAML documents with fixed top-level sections. Every key is
checked against a schema when the file is read; unknown keys and
out-of-range values raise :class:`ConfigError` carrying the offending line.

Example::

    mode: paper
    seed: 7
    system:
      rep_rate: 4.0e8
      eta_a: 0.3
    sweep:
      losses_db: {start: 40, stop: 62, step: 1}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .errors import ConfigError
from .finite_key import SecurityParams
from .key_optimizer import SystemConfig
from .mc_oracle import McConfig
from .pair_source import SourceParams
from .phase_stab import StabConfig
from .qber_model import ErrorParams
from .sat_link import LinkParams, OrbitParams


@dataclass(frozen=True)
class Field:
    kind: str  # float | int | str | bool | floats | ed | losses
    check: Callable[[Any], bool] | None = None
    why: str = ""
    default: Any = None
    choices: tuple[str, ...] = ()


def _pos(v) -> bool:
    return v > 0


def _prob(v) -> bool:
    return 0.0 <= v < 1.0


def _unit(v) -> bool:
    return 0.0 < v <= 1.0


def _open01(v) -> bool:
    return 0.0 < v < 1.0


def _nonneg(v) -> bool:
    return v >= 0


def _elev(v) -> bool:
    return 0.0 <= v <= 90.0


SCHEMA: dict[str, Any] = {
    "mode": Field("str", choices=("paper", "fock"), default="paper"),
    "seed": Field("int", _nonneg, "must be >= 0", 0),
    "format": Field("str", choices=("csv", "json"), default="csv"),
    "system": {
        "rep_rate": Field("float", _pos, "must be > 0", 400e6),
        "duration_s": Field("float", _pos, "must be > 0", 3600.0),
        "xi": Field("float", _prob, "must lie in [0, 1)", 1e-6),
        "eta_a": Field("float", _unit, "must lie in (0, 1]", 0.3),
        "eta_b_fixed": Field("float", _unit, "must lie in (0, 1]", 1.0),
        "eps_sec": Field("float", _open01, "must lie in (0, 1)", 1e-9),
        "eps_cor": Field("float", _open01, "must lie in (0, 1)", 1e-15),
        "n_max": Field("int", lambda v: 1 <= v <= 200, "must lie in [1, 200]", 10),
        "e_d_2d": Field("ed", lambda v: 0.0 <= v <= 0.5, "must lie in [0, 1/2]", "calibrated"),
        "e_d_4d": Field("ed", lambda v: 0.0 <= v <= 0.75, "must lie in [0, 3/4]", "calibrated"),
        "e_0": Field("float", lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]", None),
        "per_pair_ed": Field("bool", default=False),
    },
    "sweep": {
        "losses_db": Field("losses", default=None),
        "workers": Field("int", lambda v: v >= 1, "must be >= 1", 1),
    },
    "link": {
        "preset": Field("str", choices=("leo", "geo"), default="leo"),
        "d_t": Field("float", _pos, "must be > 0", None),
        "d_r": Field("float", _pos, "must be > 0", None),
        "wavelength_nm": Field("float", _pos, "must be > 0", None),
        "fixed_loss_rx_db": Field("float", _nonneg, "must be >= 0", None),
        "fixed_loss_analysis_db": Field("float", _nonneg, "must be >= 0", None),
        "include_analysis": Field("bool", default=None),
    },
    "orbit": {
        "altitude_km": Field("float", _pos, "must be > 0", 400.0),
        "min_elevation_deg": Field("float", lambda v: 0.0 <= v < 90.0, "must lie in [0, 90)", 20.0),
        "max_elevations_deg": Field("floats", _elev, "must lie in [0, 90]",
                                    [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]),
        "time_step_s": Field("float", _pos, "must be > 0", 10.0),
        "bin_separation_ns": Field("float", _pos, "must be > 0", 1.5),
    },
    "stab": {
        "gamma_scale": Field("float", _pos, "must be > 0", 0.6),
        "visibility": Field("float", _unit, "must lie in (0, 1]", 0.1),
        "kp": Field("float", _nonneg, "must be >= 0", 1.7e-7),
        "ki": Field("float", _nonneg, "must be >= 0", 4.2e-5),
        "update_rate_hz": Field("float", _pos, "must be > 0", 100.0),
        "actuator_range_um": Field("float", _pos, "must be > 0", 17.4),
        "sensor_noise": Field("float", _nonneg, "must be >= 0", 0.002),
        "sensor_wavelength_nm": Field("float", _pos, "must be > 0", 532.0),
        "photon_wavelength_nm": Field("float", _pos, "must be > 0", 1550.0),
        "max_elevation_deg": Field("float", _elev, "must lie in [0, 90]", 90.0),
        "profile_step_s": Field("float", _pos, "must be > 0", 1.0),
    },
    "crosstalk": {
        "d": Field("int", lambda v: v in (2, 4), "must be 2 or 4", 4),
        "channel": Field("str", choices=("ideal", "hv_intercept", "depolarize"), default="ideal"),
        "depolarize": Field("float", lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]", 0.0),
        "mc_pulses": Field("int", _nonneg, "must be >= 0", 0),
        "mc_mu": Field("float", _pos, "must be > 0", 0.01),
        "mc_eta_a": Field("float", _unit, "must lie in (0, 1]", 1.0),
        "mc_eta_b": Field("float", _unit, "must lie in (0, 1]", 1.0),
        "mc_e_d": Field("float", lambda v: 0.0 <= v <= 0.75, "must lie in [0, 3/4]", 0.0),
    },
    "oracle": {
        "n_pulses": Field("int", lambda v: v >= 1, "must be >= 1", 10_000_000),
        "mus": Field("floats", _pos, "must be > 0", [0.001, 0.01, 0.05]),
        "dims": Field("floats", lambda v: v in (2, 4), "must be 2 or 4", [2, 4]),
        "coinc_eta_a": Field("floats", _unit, "must lie in (0, 1]", [0.1, 0.5, 1.0]),
        "coinc_eta_b": Field("floats", _unit, "must lie in (0, 1]", [0.05, 0.5, 1.0]),
        "coinc_xi": Field("floats", _prob, "must lie in [0, 1)", [1e-5, 1e-6, 0.0]),
        "qber_eta_a": Field("float", _unit, "must lie in (0, 1]", 0.5),
        "qber_eta_b": Field("float", _unit, "must lie in (0, 1]", 0.5),
        "workers": Field("int", lambda v: v >= 1, "must be >= 1", 1),
    },
}


def _lines(node, prefix=()) -> dict[tuple[str, ...], int]:
    out = {prefix: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (str(k.value),)
            out[key] = k.start_mark.line + 1
            out.update({p: ln for p, ln in _lines(v, key).items() if p != key})
    return out


def _coerce(f: Field, value, where: str, line: int | None, path: str | None):
    def fail(msg: str):
        raise ConfigError(f"{where}: {msg}", line, path)

    def num(v, integer=False):
        if isinstance(v, str):
            # YAML 1.1 reads exponents without a dot ("1e-6") as strings
            try:
                v = float(v)
            except ValueError:
                fail(f"expected a number, got {v!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(f"expected a number, got {v!r}")
        if integer and not float(v).is_integer():
            fail(f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            fail("must be finite")
        return int(v) if integer else float(v)

    def checked(v):
        if f.check is not None and not f.check(v):
            fail(f"{v!r} {f.why}")
        return v

    if f.kind == "float":
        return checked(num(value))
    if f.kind == "int":
        return checked(num(value, integer=True))
    if f.kind == "bool":
        if not isinstance(value, bool):
            fail(f"expected true/false, got {value!r}")
        return value
    if f.kind == "str":
        if value not in f.choices:
            fail(f"expected one of {', '.join(f.choices)}, got {value!r}")
        return value
    if f.kind == "ed":
        if value == "calibrated":
            return value
        return checked(num(value))
    if f.kind == "floats":
        if not isinstance(value, list) or not value:
            fail("expected a non-empty list")
        return [checked(num(v)) for v in value]
    if f.kind == "losses":
        if isinstance(value, dict):
            extra = set(value) - {"start", "stop", "step"}
            if extra or len(value) != 3:
                fail("expected {start, stop, step}")
            start, stop, step = (num(value[k]) for k in ("start", "stop", "step"))
            if step <= 0 or stop < start:
                fail("need step > 0 and stop >= start")
            grid = loss_grid(start, stop, step)
        elif isinstance(value, list):
            grid = [num(v) for v in value]
        else:
            fail("expected a list or {start, stop, step}")
        if not grid:
            fail("loss list is empty")
        if any(x < 0 for x in grid):
            fail("losses must be >= 0 dB")
        return sorted(set(grid))
    raise AssertionError(f.kind)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration, one dict of values per section."""

    mode: str = "paper"
    seed: int = 0
    format: str = "csv"
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)
    path: str | None = None
    present: frozenset[str] = frozenset()

    def section(self, name: str) -> dict[str, Any]:
        return self.sections[name]

    def require(self, name: str) -> dict[str, Any]:
        if name not in self.present:
            raise ConfigError(f"missing section '{name}'", None, self.path)
        return self.sections[name]

    def with_overrides(self, seed: int | None = None, mode: str | None = None) -> "RunConfig":
        return RunConfig(
            mode=self.mode if mode is None else mode,
            seed=self.seed if seed is None else seed,
            format=self.format,
            sections=self.sections,
            path=self.path,
            present=self.present,
        )

    # builders

    def error_params(self, d: int) -> ErrorParams:
        s = self.section("system")
        ed = s["e_d_2d" if d == 2 else "e_d_4d"]
        kw = {"n_max": s["n_max"], "e_0": s["e_0"]}
        if ed == "calibrated":
            return ErrorParams.calibrated(d, **kw)
        return ErrorParams(d=d, e_d=ed, **kw)

    def system_config(self, protocol: str) -> SystemConfig:
        s = self.section("system")
        losses = self.section("sweep")["losses_db"] or ()
        return SystemConfig(
            protocol=protocol,
            err=self.error_params(4 if protocol == "4D" else 2),
            rep_rate=s["rep_rate"],
            duration=s["duration_s"],
            xi=s["xi"],
            eta_a=s["eta_a"],
            eta_b_fixed=s["eta_b_fixed"],
            losses_db=tuple(losses),
            sec=SecurityParams(s["eps_sec"], s["eps_cor"]),
            mode=self.mode,
            per_pair_ed=s["per_pair_ed"],
        )

    def link_params(self) -> LinkParams:
        s = self.section("link")
        base = LinkParams.leo() if s["preset"] == "leo" else LinkParams.geo()
        kw = {
            "d_t": s["d_t"], "d_r": s["d_r"],
            "wavelength": None if s["wavelength_nm"] is None else s["wavelength_nm"] * 1e-9,
            "fixed_loss_rx_db": s["fixed_loss_rx_db"],
            "fixed_loss_analysis_db": s["fixed_loss_analysis_db"],
            "include_analysis": s["include_analysis"],
        }
        merged = {**base.__dict__, **{k: v for k, v in kw.items() if v is not None}}
        return LinkParams(**merged)

    def orbit_params(self, max_elevation: float) -> OrbitParams:
        s = self.section("orbit")
        return OrbitParams(
            max_elevation=max_elevation,
            altitude=s["altitude_km"] * 1e3,
            min_elevation=s["min_elevation_deg"],
            time_step=s["time_step_s"],
            bin_separation=s["bin_separation_ns"] * 1e-9,
        )

    def stab_config(self) -> StabConfig:
        s = self.section("stab")
        return StabConfig(
            gamma_scale=s["gamma_scale"],
            visibility=s["visibility"],
            kp=s["kp"],
            ki=s["ki"],
            update_rate=s["update_rate_hz"],
            actuator_range=s["actuator_range_um"] * 1e-6,
            sensor_noise=s["sensor_noise"],
            sensor_wavelength=s["sensor_wavelength_nm"] * 1e-9,
            photon_wavelength=s["photon_wavelength_nm"] * 1e-9,
            seed=self.seed,
        )

    def crosstalk_mc_config(self) -> McConfig:
        s = self.section("crosstalk")
        d = s["d"]
        err = ErrorParams(d=d, e_d=min(s["mc_e_d"], (d - 1) / d))
        src = SourceParams.from_mu(s["mc_mu"], eta_a=s["mc_eta_a"], eta_b=s["mc_eta_b"])
        eve = "hv_intercept" if s["channel"] == "hv_intercept" else "none"
        return McConfig(src=src, err=err, n_pulses=s["mc_pulses"], seed=self.seed, eavesdropper=eve)


def _build(data, lines: dict, path: str | None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, path)
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key in data:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key '{key}'", lines.get((str(key),)), path)
    for name, spec in SCHEMA.items():
        raw = data.get(name)
        line = lines.get((name,))
        if isinstance(spec, Field):
            top[name] = spec.default if raw is None else _coerce(spec, raw, name, line, path)
            continue
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"section '{name}' must be a mapping", line, path)
        vals = {}
        for key in raw:
            if key not in spec:
                raise ConfigError(f"unknown key '{name}.{key}'", lines.get((name, str(key))), path)
        for key, f in spec.items():
            v = raw.get(key)
            vals[key] = f.default if v is None else _coerce(
                f, v, f"{name}.{key}", lines.get((name, key)), path)
        sections[name] = vals
    osec = sections["oracle"]
    if not len(osec["coinc_eta_a"]) == len(osec["coinc_eta_b"]) == len(osec["coinc_xi"]):
        raise ConfigError("oracle.coinc_eta_a, coinc_eta_b and coinc_xi must have equal length",
                          lines.get(("oracle", "coinc_eta_a")), path)
    return RunConfig(mode=top["mode"], seed=top["seed"], format=top["format"],
                     sections=sections, path=path,
                     present=frozenset(k for k, v in data.items() if isinstance(SCHEMA[k], dict)))


def loads(text: str, path: str | None = None) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line, path) from None
    lines = _lines(node) if node is not None else {}
    return _build(data, lines, path)


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return loads(text, str(p))


def loss_grid(start: float, stop: float, step: float) -> list[float]:
    n = int(math.floor((stop - start) / step + 1e-9))
    return [float(x) for x in np.round(start + step * np.arange(n + 1), 10)]
