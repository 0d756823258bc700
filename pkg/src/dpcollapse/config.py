"""Sectioned key-value configuration with documented units and strict keys.

Values are written in bench units (pm/V, mm, g/cm^3, nm, degrees, us, Angstrom)
and converted to SI on parse. Unknown sections or keys are errors, and every
error names the offending ``section.key``.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .physics import (
    CollapseModelConfig,
    DomainError,
    DriveCircuitSpec,
    InterferometerSpec,
    MicroEnhancementParams,
    MirrorSpec,
    PhotodiodeSpec,
    PiezoSpec,
)
from .scenario import Drive, ExperimentScenario, TimeGrid, default_horizon


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


# (unit scale to SI, default or REQUIRED, check)
REQUIRED = object()
_FLOAT, _INT, _STR, _BOOL = "float", "int", "str", "bool"

SCHEMA = {
    "photodiode": {
        "V_B": (1.0, REQUIRED, _FLOAT, "nonneg"),
        "V_E": (1.0, REQUIRED, _FLOAT, "pos"),
        "R_di": (1.0, REQUIRED, _FLOAT, "nonneg"),
        "eta": (1.0, REQUIRED, _FLOAT, "unit"),
    },
    "piezo": {
        "d33": (1e-12, REQUIRED, _FLOAT, "pos"),      # pm/V
        "eps_r": (1.0, REQUIRED, _FLOAT, "pos"),
        "r_p": (1e-3, REQUIRED, _FLOAT, "pos"),       # mm
        "d_p": (1e-3, REQUIRED, _FLOAT, "pos"),       # mm
        "rho_p": (1e3, REQUIRED, _FLOAT, "pos"),      # g/cm^3
    },
    "mirror": {
        "r_m": (1e-3, REQUIRED, _FLOAT, "pos"),
        "d_m": (1e-3, REQUIRED, _FLOAT, "pos"),
        "rho_m": (1e3, REQUIRED, _FLOAT, "pos"),
    },
    "interferometer": {
        "lambda": (1e-9, REQUIRED, _FLOAT, "pos"),    # nm
        "alpha": (1.0, 1.0, _FLOAT, "unit"),
        "beta": (1.0, 0.0, _FLOAT, "unit"),
        "phi0_deg": (math.pi / 180, 45.0, _FLOAT, None),
        "N_in": (1.0, 1e7, _FLOAT, "nonneg"),         # 1/s
        "T2": (1.0, REQUIRED, _FLOAT, "unit"),
    },
    "circuit": {
        "R": (1.0, 0.0, _FLOAT, "nonneg"),            # Ohm
    },
    "model": {
        "kind": (None, "smeared", _STR, None),
        "gamma_factor": (1.0, 1.0, _FLOAT, "pos"),
        "xi0": (1.0, 100.0, _FLOAT, "ge1"),
        "sigma": (1e-10, 0.1, _FLOAT, "pos"),         # Angstrom
        "lattice_g": (1e-10, 2.0, _FLOAT, "pos"),     # Angstrom
        "table_path": (None, "", _STR, None),
    },
    "simulation": {
        "horizon": (1e-6, 0.0, _FLOAT, "nonneg"),     # us; 0 = automatic
        "n_bins": (None, 600, _INT, "ge2"),
        "n_trajectories": (None, 10000, _INT, "ge1"),
        "master_seed": (None, 0, _INT, "seed"),
    },
    "tagg": {
        "splitter_T2": (1.0, 0.5, _FLOAT, "unit"),
        "splitter_R2": (1.0, 0.5, _FLOAT, "unit"),
        "eta_plus": (1.0, 0.85, _FLOAT, "unit"),
        "eta_minus": (1.0, 0.85, _FLOAT, "unit"),
        "R_plus": (1.0, 1e3, _FLOAT, "nonneg"),
        "R_minus": (1.0, 1e3, _FLOAT, "nonneg"),
        "gamma_ps": (1.0, 0.0, _FLOAT, "nonneg"),     # 1/s, constant
        "gamma_ps_table": (None, "", _STR, None),
        "inverted": (None, False, _BOOL, None),
        "minus_rate": (None, "dp", _STR, None),
    },
}
OPTIONAL_SECTIONS = {"circuit", "model", "simulation", "tagg"}
KIND_ALIASES = {"smeared": "smeared", "parameter_free": "parameter_free",
                "parameter-free": "parameter_free", "custom": "custom_table",
                "custom_table": "custom_table"}


def _check(path, value, rule):
    ok = {
        None: True,
        "pos": isinstance(value, (int, float)) and value > 0 and math.isfinite(value),
        "nonneg": isinstance(value, (int, float)) and value >= 0 and math.isfinite(value),
        "unit": isinstance(value, (int, float)) and 0 <= value <= 1,
        "ge1": isinstance(value, (int, float)) and value >= 1,
        "ge2": isinstance(value, int) and value >= 2,
        "seed": isinstance(value, int) and 0 <= value < 2**64,
    }
    if rule == "ge1" and isinstance(value, int):
        return _check(path, float(value), rule)
    if not ok.get(rule, True):
        expect = {"pos": "> 0", "nonneg": ">= 0", "unit": "in [0, 1]", "ge1": ">= 1",
                  "ge2": "an integer >= 2", "seed": "an unsigned 64-bit integer"}[rule]
        raise ConfigError(f"{path}: value {value!r} must be {expect}")


def _convert(path, text, kind):
    text = text.strip()
    try:
        if kind == _FLOAT:
            return float(text)
        if kind == _INT:
            return int(float(text)) if text.lower().count("e") else int(text)
        if kind == _BOOL:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(f"{path}: cannot read {text!r} as {kind}") from None


def read_rate_table(path: Path):
    """Two-column CSV ``t_s, gamma_per_s`` (header required)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    except OSError as exc:
        raise ConfigError(f"rate table {path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != ["t_s", "gamma_per_s"]:
        raise ConfigError(f"rate table {path}: header must be 't_s,gamma_per_s'")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"rate table {path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != 2:
        raise ConfigError(f"rate table {path}: need at least one row of two numbers")
    return data[:, 0], data[:, 1]


def _format_raw(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return repr(v)


@dataclass(frozen=True)
class SimulationSettings:
    horizon: float
    n_bins: int
    n_trajectories: int
    master_seed: int


@dataclass(eq=False)
class ConfigDocument:
    """Parsed configuration. ``raw`` holds the values in file units, ``si``
    the converted ones; both are keyed by ``(section, key)``."""

    raw: dict
    si: dict
    base_dir: Path = field(default_factory=Path.cwd)
    sections: frozenset = frozenset()

    def get(self, section, key):
        return self.si[(section, key)]

    @property
    def has_tagg(self) -> bool:
        return "tagg" in self.sections

    @property
    def config_hash(self) -> str:
        """Digest of the canonical text plus the bytes of referenced tables."""
        h = hashlib.sha256(self.to_text().encode())
        for key in (("model", "table_path"), ("tagg", "gamma_ps_table")):
            rel = self.raw.get(key)
            if rel:
                path = self._resolve(rel)
                h.update(path.read_bytes() if path.exists() else b"<missing>")
        return h.hexdigest()[:16]

    def to_text(self) -> str:
        """Canonical text; parsing it yields identical SI values."""
        lines = []
        for section in SCHEMA:
            if section not in self.sections:
                continue
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                lines.append(f"{key} = {_format_raw(self.raw[(section, key)])}")
            lines.append("")
        return "\n".join(lines)

    # -- builders ---------------------------------------------------------
    def photodiode(self) -> PhotodiodeSpec:
        g = self.get
        return PhotodiodeSpec(g("photodiode", "V_B"), g("photodiode", "V_E"),
                              g("photodiode", "R_di"), g("photodiode", "eta"))

    def piezo(self) -> PiezoSpec:
        g = self.get
        return PiezoSpec(g("piezo", "d33"), g("piezo", "eps_r"), g("piezo", "r_p"),
                         g("piezo", "d_p"), g("piezo", "rho_p"))

    def mirror(self) -> MirrorSpec:
        g = self.get
        return MirrorSpec(g("mirror", "r_m"), g("mirror", "d_m"), g("mirror", "rho_m"))

    def interferometer(self, phase_factor: float = 2.0) -> InterferometerSpec:
        g = self.get
        return InterferometerSpec(g("interferometer", "lambda"), g("interferometer", "alpha"),
                                  g("interferometer", "beta"), g("interferometer", "phi0_deg"),
                                  g("interferometer", "N_in"), g("interferometer", "T2"),
                                  phase_factor)

    def _resolve(self, rel: str) -> Path:
        path = Path(rel)
        return path if path.is_absolute() else self.base_dir / path

    def _table(self, rel: str):
        return read_rate_table(self._resolve(rel))

    def model(self, kind: Optional[str] = None) -> CollapseModelConfig:
        g = self.get
        kind = KIND_ALIASES[kind] if kind else g("model", "kind")
        enh = MicroEnhancementParams(g("model", "lattice_g"), g("model", "sigma"), g("model", "xi0"))
        table = None
        if kind == "custom_table":
            if not g("model", "table_path"):
                raise ConfigError("model.table_path: required for kind custom_table")
            table = self._table(g("model", "table_path"))
        return CollapseModelConfig(kind, g("model", "gamma_factor"), enh, table)

    def simulation(self) -> SimulationSettings:
        g = self.get
        return SimulationSettings(g("simulation", "horizon"), g("simulation", "n_bins"),
                                  g("simulation", "n_trajectories"), g("simulation", "master_seed"))

    def scenario(self, kind: Optional[str] = None) -> ExperimentScenario:
        sim = self.simulation()
        sc = ExperimentScenario(self.photodiode(), self.piezo(), self.mirror(),
                                self.interferometer(), DriveCircuitSpec(self.get("circuit", "R")),
                                self.model(kind))
        horizon = sim.horizon if sim.horizon > 0 else default_horizon(sc)
        return sc.replace(grid=TimeGrid.from_horizon(horizon, sim.n_bins))

    def mz_scenario(self, inverted: Optional[bool] = None):
        from .tagg import MZScenario
        if not self.has_tagg:
            raise ConfigError("tagg: section missing")
        g = self.get
        pd, pz, mir = self.photodiode(), self.piezo(), self.mirror()
        plus = Drive(pd, pz, mir, DriveCircuitSpec(g("tagg", "R_plus")))
        minus = Drive(pd, pz, mir, DriveCircuitSpec(g("tagg", "R_minus")))
        model = self.model()
        minus_rate = g("tagg", "minus_rate")
        if g("tagg", "gamma_ps_table"):
            ps = CollapseModelConfig("custom_table", table=self._table(g("tagg", "gamma_ps_table")))
        elif g("tagg", "gamma_ps") > 0:
            ps = CollapseModelConfig.constant(g("tagg", "gamma_ps"))
        else:
            ps = None
        sim = self.simulation()
        if sim.horizon <= 0:
            raise ConfigError("simulation.horizon: required (> 0) for the tagg scenario")
        return MZScenario(
            interferometer=self.interferometer(4.0),
            splitter_T2=g("tagg", "splitter_T2"), splitter_R2=g("tagg", "splitter_R2"),
            eta_plus=g("tagg", "eta_plus"), eta_minus=g("tagg", "eta_minus"),
            drive_plus=plus, drive_minus=minus,
            model_plus=model, model_minus=model if minus_rate == "dp" else None,
            model_ps=ps, grid=TimeGrid.from_horizon(sim.horizon, sim.n_bins),
            inverted=g("tagg", "inverted") if inverted is None else inverted)


def _parse_overrides(overrides):
    out = []
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.append((section, key, value))
    return out


def parse_config(text: str, overrides=(), base_dir: Optional[Path] = None) -> ConfigDocument:
    """Parse config text (plus ``section.key=value`` overrides) into SI values."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    for section, key, value in _parse_overrides(overrides):
        if section not in SCHEMA:
            raise ConfigError(f"{section}.{key}: unknown section {section!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
    raw, si = {}, {}
    present = set(cp.sections())
    for section, fields in SCHEMA.items():
        if section not in present and section not in OPTIONAL_SECTIONS:
            raise ConfigError(f"{section}: required section missing")
        for key, (scale, default, kind, rule) in fields.items():
            path = f"{section}.{key}"
            if section in present and key in cp[section]:
                value = _convert(path, cp[section][key], kind)
            elif default is REQUIRED:
                raise ConfigError(f"{path}: required key missing")
            else:
                value = default
            _check(path, value, rule)
            raw[(section, key)] = value
            si[(section, key)] = value * scale if scale is not None else value
    if raw[("model", "kind")] not in KIND_ALIASES:
        raise ConfigError(f"model.kind: unknown kind {raw[('model', 'kind')]!r}")
    si[("model", "kind")] = KIND_ALIASES[raw[("model", "kind")]]
    if raw[("tagg", "minus_rate")] not in ("dp", "zero"):
        raise ConfigError("tagg.minus_rate: must be 'dp' or 'zero'")
    if raw[("interferometer", "alpha")] + raw[("interferometer", "beta")] > 1 + 1e-12:
        raise ConfigError("interferometer.alpha: alpha + beta must not exceed 1")
    if "tagg" in present and raw[("tagg", "splitter_T2")] + raw[("tagg", "splitter_R2")] > 1 + 1e-12:
        raise ConfigError("tagg.splitter_T2: splitter_T2 + splitter_R2 must not exceed 1")
    doc = ConfigDocument(raw, si, base_dir or Path.cwd(),
                         frozenset(present | (OPTIONAL_SECTIONS - {"tagg"})))
    # remaining physical invariants of the target types
    for section, build in (("photodiode", doc.photodiode), ("piezo", doc.piezo),
                           ("mirror", doc.mirror), ("interferometer", doc.interferometer)):
        try:
            build()
        except DomainError as exc:
            raise ConfigError(f"{section}: {exc}") from None
    return doc


def load_config(path, overrides=()) -> ConfigDocument:
    """Parse a config file; a bare name that is not a local file falls back
    to the configs shipped with the package."""
    path = Path(path)
    if not path.exists() and path.parent == Path(".") and shipped_config(path.name).exists():
        path = shipped_config(path.name)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides, base_dir=path.parent)


def shipped_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``fig4_r1k.cfg``."""
    return Path(__file__).parent / "configs" / name
