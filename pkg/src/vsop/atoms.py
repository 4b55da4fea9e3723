"""Atomic species data, thermal velocity statistics and lineshapes.

All quantities are SI; frequencies are angular (rad/s) unless a name says
otherwise. Species data is loaded from the bundled YAML files (``cs133``,
``rb87``) or from a user file following the same schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.constants import c, hbar, k as k_B

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class HyperfineLevel:
    """One hyperfine level: F quantum number and offset from the manifold centroid (rad/s)."""

    label: str
    F: int
    energy: float

    @property
    def g(self) -> int:
        """Degeneracy 2F+1."""
        return 2 * self.F + 1

    def __post_init__(self):
        if self.F < 0:
            raise ValueError(f"negative F in level {self.label}")


@dataclass(frozen=True)
class Transition:
    """A single hyperfine transition with its Einstein coefficients.

    ``einstein_b`` is the stimulated-absorption coefficient in the
    angular-frequency convention (m^3 J^-1 s^-2): multiplying B/c by a
    spectral intensity in W m^-2 per rad/s gives a rate in 1/s.
    ``einstein_a`` is the partial decay rate upper -> lower (1/s) and
    ``gamma`` the total natural FWHM linewidth of the upper level (rad/s).
    """

    lower: HyperfineLevel
    upper: HyperfineLevel
    omega0: float
    einstein_a: float
    einstein_b: float
    gamma: float
    line: str = ""

    def __post_init__(self):
        if self.omega0 <= 0 or self.gamma <= 0:
            raise ValueError(f"non-positive frequency or linewidth on {self.name}")
        if self.einstein_a < 0 or self.einstein_b < 0:
            raise ValueError(f"negative Einstein coefficient on {self.name}")
        if abs(self.upper.F - self.lower.F) > 1:
            raise ValueError(f"dipole-forbidden transition {self.name}")
        # A and B must satisfy the degeneracy-weighted Einstein relation.
        b_expected = (math.pi**2 * c**3 / (hbar * self.omega0**3)) \
            * (self.upper.g / self.lower.g) * self.einstein_a
        if self.einstein_a > 0 and abs(self.einstein_b - b_expected) > 1e-9 * b_expected:
            raise ValueError(f"Einstein relation violated on {self.name}")

    @property
    def name(self) -> str:
        return f"{self.line} {self.lower.label} -> {self.upper.label}"


@dataclass(frozen=True)
class ExcitedManifold:
    name: str
    line: str
    J: float
    centroid: float          # absolute angular frequency above the ground centroid (rad/s)
    gamma: float             # natural FWHM (rad/s), also the total decay rate
    levels: tuple[HyperfineLevel, ...]

    def level(self, F: int) -> HyperfineLevel:
        for lv in self.levels:
            if lv.F == F:
                return lv
        raise KeyError(f"no F'={F} in {self.name}")


@dataclass(frozen=True)
class Species:
    """Bundle of one alkali isotope: levels, transitions and auxiliary models."""

    name: str
    mass: float
    abundance: float
    ground_levels: tuple[HyperfineLevel, ...]
    ground_J: float
    memory_F: int
    aux_F: int
    manifolds: tuple[ExcitedManifold, ...]
    transitions: tuple[Transition, ...]
    vapour_pressure: dict
    beam_geometry: "BeamGeometry"
    ladders: tuple[dict, ...]
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.ground_levels) != 2:
            raise ValueError("species must have exactly two ground hyperfine levels")

    def ground_level(self, F: int) -> HyperfineLevel:
        for lv in self.ground_levels:
            if lv.F == F:
                return lv
        raise KeyError(f"no ground F={F} in {self.name}")

    def manifold(self, line: str) -> ExcitedManifold:
        for m in self.manifolds:
            if m.line == line:
                return m
        raise KeyError(f"no line {line!r} in {self.name}")

    def transition(self, line: str, lower_F: int, upper_F: int) -> Transition:
        for t in self.transitions:
            if t.line == line and t.lower.F == lower_F and t.upper.F == upper_F:
                return t
        raise KeyError(f"no transition {line} F={lower_F} -> F'={upper_F} in {self.name}")

    def decay_channels(self, line: str, upper_F: int) -> tuple[Transition, ...]:
        """All transitions feeding spontaneous decay out of one excited level."""
        return tuple(t for t in self.transitions
                     if t.line == line and t.upper.F == upper_F)

    def probe_transitions(self, line: str, lower_F: int) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions
                     if t.line == line and t.lower.F == lower_F)


@dataclass(frozen=True)
class ThermalEnsemble:
    """Vapour parameters: temperature (K), number density (1/m^3), cell length (m)."""

    temperature: float
    density: float
    length: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.density < 0:
            raise ValueError("density must be non-negative")
        if self.length <= 0:
            raise ValueError("cell length must be positive")


@dataclass(frozen=True)
class BeamGeometry:
    """Pump-back and probe beam radii (m); pump-back encloses the probe."""

    pump_back_radius: float
    probe_radius: float

    def __post_init__(self):
        if not self.pump_back_radius > self.probe_radius > 0:
            raise ValueError("need pump-back radius > probe radius > 0")


def sigma_v(temperature: float, species: Species) -> float:
    """1-D thermal velocity spread sqrt(kT/m) in m/s."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return math.sqrt(k_B * temperature / species.mass)


def maxwell_boltzmann_pdf(vz, ensemble: ThermalEnsemble, species: Species):
    """Longitudinal Maxwell-Boltzmann probability density (s/m), unit area."""
    sv = sigma_v(ensemble.temperature, species)
    vz = np.asarray(vz, dtype=float)
    return np.exp(-0.5 * (vz / sv) ** 2) / (sv * math.sqrt(TWO_PI))


def lorentzian_lineshape(omega, center: float, gamma: float):
    """Unit-area Lorentzian of FWHM ``gamma``, evaluated at ``omega`` (s/rad)."""
    if gamma <= 0:
        raise ValueError("linewidth must be positive")
    d = np.asarray(omega, dtype=float) - center
    return (gamma / TWO_PI) / (d * d + (0.5 * gamma) ** 2)


def doppler_shifted_resonance(omega0: float, vz, propagation_sign: int):
    """Laboratory-frame resonance omega0*(1 + sign*vz/c).

    sign = +1 for beams along +z (pump, pump-back), -1 for the
    counter-propagating probe.
    """
    if propagation_sign not in (+1, -1):
        raise ValueError("propagation_sign must be +1 or -1")
    return omega0 * (1.0 + propagation_sign * np.asarray(vz, dtype=float) / c)


def mean_speed_2d(temperature: float, species: Species) -> float:
    """Mean transverse (2-D) thermal speed sqrt(pi*kT/2m) in m/s."""
    return math.sqrt(math.pi * k_B * temperature / (2.0 * species.mass))


def drift_estimates(geometry: BeamGeometry, ensemble: ThermalEnsemble,
                    species: Species, dwell: float) -> dict:
    """Beam-geometry transit estimates.

    Returns ``three_sigma_distance`` = 3 sigma_v * dwell (m) and
    ``drift_rate`` (1/s) = mean 2-D thermal speed divided by the width
    (r_pump_back - r_probe) of the annulus separating the probe from the
    unprepared surroundings. The rate is an order-of-magnitude estimate; the
    exact geometric convention is not sharply defined.
    """
    if dwell <= 0:
        raise ValueError("dwell must be positive")
    sv = sigma_v(ensemble.temperature, species)
    width = geometry.pump_back_radius - geometry.probe_radius
    return {
        "three_sigma_distance": 3.0 * sv * dwell,
        "drift_rate": mean_speed_2d(ensemble.temperature, species) / width,
    }


def vapour_number_density(species: Species, temperature: float) -> float:
    """Number density (1/m^3) from the bundled vapour-pressure model.

    log10(P/torr) = a + b/T with separate solid/liquid branches; the result is
    scaled by the isotopic abundance.
    """
    vp = species.vapour_pressure
    branch = vp["solid"] if temperature < vp["melting_point_K"] else vp["liquid"]
    p_torr = 10.0 ** (branch["a"] + branch["b"] / temperature)
    p_pa = p_torr * 133.322368
    return species.abundance * p_pa / (k_B * temperature)


def make_ensemble(species: Species, temperature: float, length: float,
                  density: float | None = None) -> ThermalEnsemble:
    """ThermalEnsemble with the density defaulted from the vapour-pressure model."""
    if density is None:
        density = vapour_number_density(species, temperature)
    return ThermalEnsemble(temperature=temperature, density=density, length=length)


# --- species file loading ---------------------------------------------------

_BUNDLED = {"cs133": "cs133.yaml", "rb87": "rb87.yaml"}


def _build_transitions(raw: dict, ground: dict[int, HyperfineLevel], ground_J: float,
                       manifolds: dict[str, ExcitedManifold]) -> list[Transition]:
    transitions = []
    for s in raw["strengths"]:
        man = manifolds[s["line"]]
        lo = ground[s["lower_F"]]
        up = man.level(s["upper_F"])
        omega0 = man.centroid + up.energy - lo.energy
        gj_ratio = (2.0 * man.J + 1.0) / (2.0 * ground_J + 1.0)
        a = (lo.g / up.g) * gj_ratio * s["S"] * man.gamma
        b = (math.pi**2 * c**3 / (hbar * omega0**3)) * (up.g / lo.g) * a
        transitions.append(Transition(lower=lo, upper=up, omega0=omega0,
                                      einstein_a=a, einstein_b=b,
                                      gamma=man.gamma, line=s["line"]))
    return transitions


def load_species(source: str | Path) -> Species:
    """Load a species from a bundled name ('cs133', 'rb87') or a YAML file path."""
    key = str(source).lower()
    if key in _BUNDLED:
        text = resources.files("vsop.data").joinpath(_BUNDLED[key]).read_text()
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"species file not found: {source}")
        text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse species file {source}: {exc}") from exc

    gm = raw["ground_manifold"]
    ground = {lv["F"]: HyperfineLevel(label=f"F={lv['F']}", F=lv["F"],
                                      energy=TWO_PI * lv["energy_MHz"] * 1e6)
              for lv in gm["levels"]}
    if len(ground) != 2:
        raise ConfigError("species file must define exactly two ground levels")
    ground_levels = tuple(sorted(ground.values(), key=lambda lv: lv.F))
    if ground_levels[0].energy >= ground_levels[1].energy:
        raise ConfigError("ground level energies must increase with F")

    manifolds = {}
    for m in raw["excited_manifolds"]:
        levels = tuple(sorted(
            (HyperfineLevel(label=f"F'={lv['F']}", F=lv["F"],
                            energy=TWO_PI * lv["energy_MHz"] * 1e6)
             for lv in m["levels"]), key=lambda lv: lv.F))
        for a, b in zip(levels, levels[1:]):
            if a.energy >= b.energy:
                raise ConfigError(f"{m['name']}: level energies must increase with F")
        manifolds[m["line"]] = ExcitedManifold(
            name=m["name"], line=m["line"], J=float(m["J"]),
            centroid=TWO_PI * m["centroid_frequency_THz"] * 1e12,
            gamma=TWO_PI * m["natural_linewidth_MHz"] * 1e6,
            levels=levels)

    transitions = _build_transitions(raw, ground, float(gm["J"]), manifolds)
    geom = raw["beam_geometry"]
    return Species(
        name=raw["name"],
        mass=float(raw["mass_kg"]),
        abundance=float(raw.get("abundance", 1.0)),
        ground_levels=ground_levels,
        ground_J=float(gm["J"]),
        memory_F=int(gm["memory_F"]),
        aux_F=int(gm["aux_F"]),
        manifolds=tuple(manifolds.values()),
        transitions=tuple(transitions),
        vapour_pressure=raw["vapour_pressure"],
        beam_geometry=BeamGeometry(
            pump_back_radius=geom["pump_back_radius_mm"] * 1e-3,
            probe_radius=geom["probe_radius_mm"] * 1e-3),
        ladders=tuple(raw.get("ladders", ())),
        defaults=raw.get("defaults", {}),
    )
