"""Run configuration: flat ``section.key = value`` text, defaults, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import geometry as geo
from .growth import GrowthParams, SCHEMES
from .microflow import FlowProblem, FluidParams, PressureProfile, cavity_problem, vessel_problem


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "geometry": {
        "length": 7.0,
        "diameter": 0.2,
        "stent_start": 2.0,
        "stent_end": 5.0,
        "midpoint": 3.5,
        "rho_stent": 0.1,
        "gamma_stent": 50.0,
        "centerline_coefficient": 4e-3,
        "centerline_exponent": 4.0,
    },
    "grid": {"nx": 140, "ny": 16},
    "fluid": {
        "rho": 1.06,
        "nu": 0.03,
        "theta": "auto",
        "mode": "stokes",
        "window": "axial",
    },
    "pressure": {
        "times": [0.0, 0.4, 0.7, 1.0],
        "values": [10.0, 20.0, 0.0, 10.0],
    },
    "growth": {
        "alpha": 1e-3,
        "beta": 1.0,
        "lambda_c": 5e-7,
        "sigma_min": 5.0,
        "sigma_max": 8.0,
        "c_max": geo.C_MAX,
    },
    "schedule": {"T": 900.0, "N": 16, "k": 0.02, "scheme": "semi_implicit_euler"},
    "periodic": {"mode": "forward", "eps": 1e-8, "max_cycles": 200},
    "oracle": {"map_refresh": 0, "max_steps": 10_000_000},
    "problem": {"kind": "vessel", "cavity_n": 16},
}

# keys that select a scheme rather than the physical problem; ignored by
# the comparison hash
SCHEME_KEYS = {("schedule", "N"), ("schedule", "scheme"), ("periodic", "mode"), ("periodic", "eps"),
               ("periodic", "max_cycles"), ("oracle", "map_refresh"), ("oracle", "max_steps")}


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, list):
        parts = [p for p in text.strip("[]").split(",") if p.strip()]
        return [float(p) for p in parts]
    if isinstance(default, int):
        return int(float(text)) if float(text).is_integer() else _bad(text, "an integer")
    if isinstance(default, float):
        return float(text)
    if default == "auto" and text != "auto":
        return float(text)
    return text.strip("\"'")


def _bad(text, what):
    raise ValueError(f"expected {what}, got {text!r}")


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(copy.deepcopy(DEFAULTS))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls.default()
        section = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in DEFAULTS:
                    raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if "." not in key and section:
                key = f"{section}.{key}"
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls.default()
        for sec, entries in data.items():
            for key, value in entries.items():
                cfg.set(f"{sec}.{key}", value)
        cfg.validate()
        return cfg

    def set(self, dotted: str, value) -> None:
        if dotted.count(".") != 1:
            raise ConfigError(f"key {dotted!r} must look like section.key")
        sec, key = dotted.split(".")
        if sec not in DEFAULTS or key not in DEFAULTS[sec]:
            raise ConfigError(f"unknown config key {dotted!r}")
        default = DEFAULTS[sec][key]
        try:
            self.data[sec][key] = _parse_value(value, default) if isinstance(value, str) else self._coerce(value, default)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{dotted}: {exc}") from None

    @staticmethod
    def _coerce(value, default):
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, list):
            return [float(v) for v in value]
        if isinstance(default, int):
            if float(value) != int(value):
                raise ValueError(f"expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value

    def get(self, dotted: str):
        sec, key = dotted.split(".")
        return self.data[sec][key]

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.data))

    def with_overrides(self, **dotted) -> "RunConfig":
        cfg = self.copy()
        for k, v in dotted.items():
            cfg.set(k.replace("__", "."), v)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.geometry_params()
            self.fluid_params()
            self.growth_params()
            self.pressure_profile()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        s = self.data["schedule"]
        if s["T"] <= 0 or s["N"] < 1:
            raise ConfigError("schedule needs T > 0 and N >= 1")
        if s["scheme"] not in SCHEMES:
            raise ConfigError(f"unknown macro scheme {s['scheme']!r}")
        m = round(1.0 / s["k"])
        if abs(m * s["k"] - 1.0) > 1e-9:
            raise ConfigError("schedule.k must divide the 1 s period")
        if self.data["periodic"]["mode"] not in ("forward", "averaging"):
            raise ConfigError("periodic.mode must be forward or averaging")
        if self.data["problem"]["kind"] not in ("vessel", "cavity"):
            raise ConfigError("problem.kind must be vessel or cavity")

    # --- typed views ---------------------------------------------------------

    def geometry_params(self) -> geo.GeometryParams:
        g = self.data["geometry"]
        return geo.GeometryParams(
            geo.ReferenceDomain(g["length"], g["diameter"], 2, g["stent_start"], g["stent_end"], g["midpoint"]),
            geo.StentParams(g["rho_stent"], g["gamma_stent"]),
            geo.CenterlineParams(g["centerline_coefficient"], g["centerline_exponent"]),
        )

    def fluid_params(self) -> FluidParams:
        f = self.data["fluid"]
        theta = None if f["theta"] == "auto" else float(f["theta"])
        return FluidParams(rho_f=f["rho"], nu_f=f["nu"], theta=theta, mode=f["mode"])

    def growth_params(self) -> GrowthParams:
        return GrowthParams(**self.data["growth"])

    def pressure_profile(self) -> PressureProfile:
        p = self.data["pressure"]
        return PressureProfile(tuple(p["times"]), tuple(p["values"]))

    def problem(self) -> FlowProblem:
        if self.data["problem"]["kind"] == "cavity":
            return cavity_problem(self.data["problem"]["cavity_n"])
        return vessel_problem(self.data["grid"]["nx"], self.data["grid"]["ny"], self.geometry_params(),
                              pressure=self.pressure_profile(), window_mode=self.data["fluid"]["window"])

    # --- serialisation -------------------------------------------------------

    def canonical(self, drop_scheme: bool = False) -> str:
        data = {
            sec: {k: v for k, v in entries.items() if not (drop_scheme and (sec, k) in SCHEME_KEYS)}
            for sec, entries in self.data.items()
        }
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def physics_hash(self) -> str:
        return hashlib.sha256(self.canonical(drop_scheme=True).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = []
        for sec, entries in self.data.items():
            for key, value in entries.items():
                if isinstance(value, list):
                    value = ", ".join(repr(v) for v in value)
                lines.append(f"{sec}.{key} = {value}")
        return "\n".join(lines) + "\n"
