"""Weak-probe absorption spectra from velocity-resolved populations.

The probe is treated as monochromatic and far below saturation: it reads the
populations without evolving them. The optical depth at probe frequency w is

    OD(w) = L * sum_(F,F') int n_F(vz) sigma_F->F'(w, vz) dvz

with the cross section sigma = B * (hbar w / c) * gL(w - w0[1 + s vz/c]),
i.e. the velocity distribution convolved with the rest-frame Lorentzian.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c, hbar

from .atoms import (Species, ThermalEnsemble, Transition,
                    doppler_shifted_resonance, lorentzian_lineshape)
from .errors import ConfigError, IngestionError
from .pumping import PopulationState, VelocityGrid, thermal_state

_CHUNK = 128  # probe frequencies per block, bounds the (n_freq x n_vz) temporaries


@dataclass(frozen=True)
class Spectrum:
    """Optical depth on a strictly increasing frequency grid (rad/s)."""

    omega: np.ndarray
    optical_depth: np.ndarray
    reference: Transition
    probe_sign: int
    metadata: dict

    def __post_init__(self):
        om = np.asarray(self.omega, float)
        od = np.asarray(self.optical_depth, float)
        if np.any(np.diff(om) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if np.any(od < 0):
            raise ValueError("optical depth must be non-negative")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "optical_depth", od)

    @property
    def transmission(self) -> np.ndarray:
        return np.exp(-self.optical_depth)

    @property
    def detuning_mhz(self) -> np.ndarray:
        """Detuning from the reference transition rest resonance, in MHz."""
        return (self.omega - self.reference.omega0) / (2.0 * math.pi * 1e6)

    @property
    def peak_od(self) -> float:
        return float(np.max(self.optical_depth))


def probe_grid(reference: Transition, lo_mhz: float = -600.0, hi_mhz: float = 800.0,
               points: int = 1000) -> np.ndarray:
    """Angular-frequency grid from a detuning window around a reference line."""
    if points < 2 or hi_mhz <= lo_mhz:
        raise ConfigError("probe grid needs at least two points and hi > lo")
    det = np.linspace(lo_mhz, hi_mhz, points) * 2.0 * math.pi * 1e6
    return reference.omega0 + det


def cross_section(transition: Transition, omega, vz, probe_sign: int = -1):
    """Absorption cross section (m^2) at probe frequency ``omega`` for class ``vz``."""
    shifted = doppler_shifted_resonance(transition.omega0, vz, probe_sign)
    gl = lorentzian_lineshape(np.asarray(omega, float), shifted, transition.gamma)
    return transition.einstein_b * (hbar * np.asarray(omega, float) / c) * gl


def optical_depth(state: PopulationState, ensemble: ThermalEnsemble, species: Species,
                  grid, probe_sign: int = -1, lower_fs: tuple[int, ...] | None = None,
                  line: str | None = None, metadata: dict | None = None) -> Spectrum:
    """Spectrum of -ln T over the probe ``grid`` for the given populations.

    ``lower_fs`` restricts the probed ground levels (default: the memory
    level only); all dipole-allowed upper levels of the probed line enter.
    """
    line = line or species.defaults.get("probe_line", "D2")
    if lower_fs is None:
        lower_fs = (species.defaults.get("probe_lower_F", species.memory_F),)
    omega = np.asarray(grid, float)
    transitions = [t for F in lower_fs for t in species.probe_transitions(line, F)]
    if not transitions:
        raise ConfigError(f"no probed transitions on line {line} for F in {lower_fs}")
    for t in transitions:
        span = doppler_shifted_resonance(
            t.omega0, state.grid.velocities[[0, -1]], probe_sign)
        if omega[-1] < span.min() or omega[0] > span.max():
            raise ConfigError(f"probe grid does not cover {t.name}")

    od = np.zeros_like(omega)
    weights = state.grid.weights
    vz = state.grid.velocities
    for t in transitions:
        dens = state.ground.get(t.lower.F)
        if dens is None:
            continue
        wn = weights * dens
        shifted = doppler_shifted_resonance(t.omega0, vz, probe_sign)
        half = 0.5 * t.gamma
        pref = ensemble.length * t.einstein_b * hbar / c * (t.gamma / (2.0 * math.pi))
        for start in range(0, omega.size, _CHUNK):
            blk = omega[start:start + _CHUNK, None]
            kernel = 1.0 / ((blk - shifted[None, :]) ** 2 + half * half)
            od[start:start + _CHUNK] += pref * blk[:, 0] * (kernel @ wn)
    od = np.maximum(od, 0.0)

    ref_spec = species.defaults.get("reference_transition",
                                    {"line": line, "lower_F": lower_fs[0],
                                     "upper_F": transitions[-1].upper.F})
    reference = species.transition(ref_spec["line"], ref_spec["lower_F"],
                                   ref_spec["upper_F"])
    meta = {"temperature_K": ensemble.temperature, "probe_sign": probe_sign,
            "species": species.name}
    meta.update(metadata or {})
    return Spectrum(omega=omega, optical_depth=od, reference=reference,
                    probe_sign=probe_sign, metadata=meta)


def unpumped_spectrum(ensemble: ThermalEnsemble, species: Species, grid,
                      probe_sign: int = -1, n_classes: int = 2001,
                      lower_fs: tuple[int, ...] | None = None,
                      line: str | None = None,
                      metadata: dict | None = None) -> Spectrum:
    """Doppler-broadened baseline: optical depth of the thermal state."""
    vgrid = VelocityGrid.for_ensemble(ensemble, species, n_sigma=6.0, n=n_classes)
    state = thermal_state(ensemble, species, vgrid)
    meta = {"state": "thermal"}
    meta.update(metadata or {})
    return optical_depth(state, ensemble, species, grid, probe_sign=probe_sign,
                         lower_fs=lower_fs, line=line, metadata=meta)


# --- CSV interchange ---------------------------------------------------------

def write_spectrum_csv(spectrum: Spectrum, path, uncertainty=None) -> None:
    """Spectrum CSV: '#'-prefixed metadata header, then detuning_MHz, OD[, OD_uncertainty]."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# temperature_K = {spectrum.metadata.get('temperature_K')}\n")
        fh.write(f"# reference_transition = {spectrum.reference.name}\n")
        fh.write(f"# probe_sign = {spectrum.probe_sign}\n")
        for key in sorted(spectrum.metadata):
            if key in ("temperature_K", "probe_sign"):
                continue
            fh.write(f"# {key} = {spectrum.metadata[key]}\n")
        cols = "detuning_MHz,OD" + (",OD_uncertainty" if uncertainty is not None else "")
        fh.write(cols + "\n")
        det = spectrum.detuning_mhz
        for i in range(det.size):
            row = f"{float(det[i])!r},{float(spectrum.optical_depth[i])!r}"
            if uncertainty is not None:
                row += f",{float(uncertainty[i])!r}"
            fh.write(row + "\n")


def read_spectrum_csv(path_or_buffer) -> dict:
    """Parse a measured-spectrum CSV.

    Returns detuning_MHz / od (and od_uncertainty when present) as arrays plus
    the metadata dict. Malformed rows raise IngestionError with the row number.
    """
    if isinstance(path_or_buffer, io.TextIOBase):
        lines = path_or_buffer.read().splitlines()
    else:
        with open(path_or_buffer) as fh:
            lines = fh.read().splitlines()
    meta: dict = {}
    det, od, unc = [], [], []
    header_seen = False
    has_unc = False
    for lineno, lineraw in enumerate(lines, start=1):
        stripped = lineraw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if "=" in stripped:
                key, _, val = stripped[1:].partition("=")
                meta[key.strip()] = val.strip()
            continue
        if not header_seen:
            cols = [col.strip() for col in stripped.split(",")]
            if cols[:2] != ["detuning_MHz", "OD"]:
                raise IngestionError(
                    f"row {lineno}: expected header 'detuning_MHz,OD[,OD_uncertainty]', "
                    f"got {stripped!r}")
            has_unc = len(cols) == 3 and cols[2] == "OD_uncertainty"
            header_seen = True
            continue
        parts = stripped.split(",")
        expected = 3 if has_unc else 2
        if len(parts) != expected:
            raise IngestionError(f"row {lineno}: expected {expected} columns, got {len(parts)}")
        try:
            det.append(float(parts[0]))
            od.append(float(parts[1]))
            if has_unc:
                unc.append(float(parts[2]))
        except ValueError as exc:
            raise IngestionError(f"row {lineno}: non-numeric value ({exc})") from exc
    if not header_seen or not det:
        raise IngestionError("spectrum file contains no data rows")
    out = {"detuning_MHz": np.array(det), "od": np.array(od), "metadata": meta}
    if has_unc:
        out["od_uncertainty"] = np.array(unc)
    return out
