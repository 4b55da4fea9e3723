"""Experiment configuration: YAML parsing, unit handling and validation.

Keys carry their unit in the name (power_mW, duration_us, ...) and are
converted to SI / angular frequency at parse time. Unknown keys are rejected,
with the offending line reported where it can be located in the source text.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .atoms import Species, ThermalEnsemble, load_species, make_ensemble
from .coherence import LadderConfig
from .errors import ConfigError
from .pumping import IntegratorControls, LaserStage, PulseSequence

MHZ = 2.0 * math.pi * 1e6
DEFAULT_BEAM_RADIUS = 2.25e-3   # effective uniform-intensity radius (m)

_SCHEMA = {
    "species": None,
    "output_dir": None,
    "ensemble": {"temperature_C", "temperature_K", "density_per_m3",
                 "cell_length_mm", "drift_relaxation_per_s"},
    "velocity_grid": {"n_classes", "span_sigmas"},
    "probe": {"detuning_min_MHz", "detuning_max_MHz", "points", "direction",
              "include_aux_level"},
    "sequence": {"repeat", "stages"},
    "ladder": {"name", "signal_nm", "control_nm", "storage_lifetime_ns"},
    "predict": {"species", "temperature_C", "power_mW", "duration_us",
                "linewidth_MHz", "velocity_class_m_per_s", "beam_radius_mm",
                "settle_us", "storage_lifetime_ns"},
    "fit": {"data", "power_mW", "linewidth_MHz", "velocity_class_m_per_s",
            "power_bounds_mW", "linewidth_bounds_MHz", "velocity_bounds_m_per_s",
            "pump_back_duration_us", "budget"},
    "fit_relaxation": {"data"},
    "sweep": {"powers_mW", "durations_us", "linewidth_MHz",
              "velocity_class_m_per_s", "pump_back_duration_us"},
    "integrator": {"rtol", "atol_scale", "method", "max_step_fraction",
                   "stiff_threshold"},
}
_STAGE_KEYS = {"role", "transition", "power_mW", "linewidth_MHz", "duration_us",
               "beam_radius_mm", "velocity_class_m_per_s", "detuning_MHz",
               "direction", "profile"}
_TRANSITION_KEYS = {"line", "lower_F", "upper_F"}


@dataclass(frozen=True)
class ProbeSettings:
    lo_mhz: float = -600.0
    hi_mhz: float = 800.0
    points: int = 1000
    sign: int = -1
    include_aux_level: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    species: Species
    ensemble: ThermalEnsemble
    probe: ProbeSettings
    sequence: PulseSequence | None
    ladder: LadderConfig | None
    n_classes: int
    span_sigmas: float
    controls: IntegratorControls
    drift_rate: float = 0.0
    raw: dict = field(repr=False, default_factory=dict)
    source_sha256: str = ""
    output_dir: str = "vsop-out"


def _line_of(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(f"{key}:") or f" {key}:" in stripped:
            return f" (line {i})"
    return ""


def _check_keys(section: dict, allowed: set, where: str, text: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}{_line_of(text, key)}")


def _temperature(section: dict) -> float:
    if "temperature_K" in section:
        return float(section["temperature_K"])
    return float(section.get("temperature_C", 23.0)) + 273.15


def _direction_sign(value: str, text: str) -> int:
    if value == "counter":
        return -1
    if value == "co":
        return +1
    raise ConfigError(f"probe direction must be 'co' or 'counter', got {value!r}"
                      f"{_line_of(text, 'direction')}")


def _build_stage(raw: dict, species: Species, text: str, index: int) -> LaserStage:
    where = f"sequence.stages[{index}]"
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    _check_keys(raw, _STAGE_KEYS, where, text)
    role = raw.get("role")
    if role == "dark":
        try:
            return LaserStage.dark(float(raw["duration_us"]) * 1e-6)
        except KeyError as exc:
            raise ConfigError(f"{where}: missing key {exc}") from exc
    tr_raw = raw.get("transition")
    if tr_raw is None:
        defaults = species.defaults
        key = "pump_back_transition" if role == "pump-back" else "pump_transition"
        tr_raw = defaults[key]
    else:
        _check_keys(tr_raw, _TRANSITION_KEYS, f"{where}.transition", text)
    try:
        transition = species.transition(tr_raw["line"], tr_raw["lower_F"],
                                        tr_raw["upper_F"])
    except KeyError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    sign = _direction_sign(raw.get("direction", "co"), text)
    if "detuning_MHz" in raw and "velocity_class_m_per_s" in raw:
        raise ConfigError(f"{where}: give either detuning_MHz or "
                          f"velocity_class_m_per_s, not both")
    if "detuning_MHz" in raw:
        vz = float(raw["detuning_MHz"]) * MHZ / transition.omega0 * 299792458.0 / sign
    else:
        vz = float(raw.get("velocity_class_m_per_s", 0.0))
    try:
        return LaserStage.on_velocity_class(
            role=role, transition=transition, vz=vz,
            linewidth=float(raw.get("linewidth_MHz", 6.0)) * MHZ,
            power=float(raw["power_mW"]) * 1e-3,
            duration=float(raw["duration_us"]) * 1e-6,
            beam_radius=float(raw.get("beam_radius_mm", DEFAULT_BEAM_RADIUS * 1e3)) * 1e-3,
            propagation_sign=sign,
            profile=raw.get("profile", "lorentzian"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _build_ladder(raw: dict, species: Species, temperature: float,
                  text: str) -> LadderConfig:
    _check_keys(raw, _SCHEMA["ladder"], "ladder", text)
    if "name" in raw:
        for lad in species.ladders:
            if lad["name"] == raw["name"]:
                merged = dict(lad)
                merged.update(raw)
                raw = merged
                break
        else:
            names = [lad["name"] for lad in species.ladders]
            raise ConfigError(f"unknown ladder {raw['name']!r}; species offers {names}")
    try:
        return LadderConfig(
            signal_wavelength=float(raw["signal_nm"]) * 1e-9,
            control_wavelength=float(raw["control_nm"]) * 1e-9,
            storage_lifetime=float(raw["storage_lifetime_ns"]) * 1e-9,
            species=species, temperature=temperature)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"ladder: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(raw, set(_SCHEMA), "config", text)
    for key, allowed in _SCHEMA.items():
        if allowed is not None and key in raw and isinstance(raw[key], dict):
            _check_keys(raw[key], allowed, key, text)

    species = load_species(raw.get("species", "cs133"))

    ens_raw = raw.get("ensemble") or {}
    temperature = _temperature(ens_raw)
    density = ens_raw.get("density_per_m3", "auto")
    density = None if density in ("auto", None) else float(density)
    try:
        ensemble = make_ensemble(species, temperature,
                                 float(ens_raw.get("cell_length_mm", 25.0)) * 1e-3,
                                 density)
    except ValueError as exc:
        raise ConfigError(f"ensemble: {exc}") from exc

    grid_raw = raw.get("velocity_grid") or {}
    n_classes = int(grid_raw.get("n_classes", 2001))
    span_sigmas = float(grid_raw.get("span_sigmas", 6.0))
    if n_classes < 2 or span_sigmas < 6.0:
        raise ConfigError("velocity_grid needs n_classes >= 2 and span_sigmas >= 6")

    probe_raw = raw.get("probe") or {}
    probe = ProbeSettings(
        lo_mhz=float(probe_raw.get("detuning_min_MHz", -600.0)),
        hi_mhz=float(probe_raw.get("detuning_max_MHz", 800.0)),
        points=int(probe_raw.get("points", 1000)),
        sign=_direction_sign(probe_raw.get("direction", "counter"), text),
        include_aux_level=bool(probe_raw.get("include_aux_level", False)))
    if probe.hi_mhz <= probe.lo_mhz or probe.points < 2:
        raise ConfigError("probe window must be non-empty with at least two points")

    sequence = None
    if raw.get("sequence") is not None:
        seq_raw = raw["sequence"]
        stages = [_build_stage(s, species, text, i)
                  for i, s in enumerate(seq_raw.get("stages", []))]
        if not stages:
            raise ConfigError("sequence.stages must not be empty")
        try:
            sequence = PulseSequence(stages=tuple(stages),
                                     repeat=int(seq_raw.get("repeat", 1)))
        except ValueError as exc:
            raise ConfigError(f"sequence: {exc}") from exc

    ladder = None
    if raw.get("ladder") is not None:
        ladder = _build_ladder(raw["ladder"], species, temperature, text)

    integ_raw = raw.get("integrator") or {}
    try:
        controls = IntegratorControls(
            rtol=float(integ_raw.get("rtol", 1e-8)),
            atol_scale=float(integ_raw.get("atol_scale", 1e-12)),
            max_step_fraction=float(integ_raw.get("max_step_fraction", 0.1)),
            method=integ_raw.get("method", "auto"),
            stiff_threshold=float(integ_raw.get("stiff_threshold", 1e3)))
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from exc

    for section in ("fit", "fit_relaxation"):
        data = (raw.get(section) or {}).get("data")
        if data is not None and not Path(data).exists():
            raise ConfigError(f"{section}.data file not found: {data}"
                              f"{_line_of(text, 'data')}")

    drift_rate = float(ens_raw.get("drift_relaxation_per_s", 0.0))
    if drift_rate < 0:
        raise ConfigError("drift_relaxation_per_s must be non-negative")

    return ExperimentConfig(
        species=species, ensemble=ensemble, probe=probe, sequence=sequence,
        ladder=ladder, n_classes=n_classes, span_sigmas=span_sigmas,
        controls=controls, drift_rate=drift_rate, raw=raw,
        source_sha256=hashlib.sha256(text.encode()).hexdigest(),
        output_dir=raw.get("output_dir", "vsop-out"))
