"""Velocity-class-resolved optical pumping rate equations.

Each longitudinal velocity class evolves independently under a sequence of
laser stages. Within one stage the class dynamics are linear with constant
coefficients: the driven ground level exchanges population with one excited
level at the stimulated rate (stimulated emission carries the degeneracy
ratio g_F/g_e), and every excited level decays into both ground levels
through its spontaneous channels. There is no loss channel, so each class
conserves its total density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import c
from scipy.special import voigt_profile

from .atoms import (Species, ThermalEnsemble, Transition, doppler_shifted_resonance,
                    lorentzian_lineshape, maxwell_boltzmann_pdf, sigma_v)
from .integrate import propagate_linear, rk45

ROLES = ("pump", "pump-back", "reset", "dark")


@dataclass(frozen=True)
class VelocityGrid:
    """Ordered sample velocities (m/s) with trapezoidal quadrature weights."""

    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v, w = np.asarray(self.velocities, float), np.asarray(self.weights, float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("need at least two velocity samples")
        if np.any(np.diff(v) <= 0):
            raise ValueError("velocities must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.velocities.size

    def integrate(self, samples: np.ndarray) -> float:
        return float(np.dot(self.weights, samples))

    @classmethod
    def uniform(cls, v_max: float, n: int = 2001) -> "VelocityGrid":
        """Uniform grid on [-v_max, +v_max] with trapezoidal weights."""
        v = np.linspace(-v_max, v_max, n)
        h = v[1] - v[0]
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        return cls(velocities=v, weights=w)

    @classmethod
    def for_ensemble(cls, ensemble: ThermalEnsemble, species: Species,
                     n_sigma: float = 6.0, n: int = 2001) -> "VelocityGrid":
        return cls.uniform(n_sigma * sigma_v(ensemble.temperature, species), n)


@dataclass(frozen=True)
class PopulationState:
    """Per-class number densities (per m^3 per m/s) at one instant.

    ``ground`` maps the ground hyperfine F to its density array; ``excited``
    maps (line, F') for every excited level that has been driven so far.
    Treat instances and their arrays as immutable.
    """

    grid: VelocityGrid
    ground: dict[int, np.ndarray]
    excited: dict[tuple[str, int], np.ndarray]
    time: float = 0.0

    def level_arrays(self) -> list[np.ndarray]:
        return ([self.ground[F] for F in sorted(self.ground)]
                + [self.excited[k] for k in sorted(self.excited)])

    def class_totals(self) -> np.ndarray:
        return np.sum(self.level_arrays(), axis=0)

    def ground_population(self, F: int) -> float:
        """Velocity-integrated density in one ground level (1/m^3)."""
        return self.grid.integrate(self.ground[F])


@dataclass(frozen=True)
class LaserStage:
    """One step of the pulse sequence.

    The laser is a pulse-carved CW beam: Lorentzian (default) or Gaussian
    spectrum of FWHM ``linewidth`` centred on ``center``, total power
    ``power`` spread over a disc of ``beam_radius``. ``center`` may be given
    directly (rad/s) or through :meth:`on_velocity_class`.
    """

    role: str
    transition: Transition | None
    center: float = 0.0            # rad/s
    linewidth: float = 0.0         # rad/s FWHM
    power: float = 0.0             # W
    beam_radius: float = 1.5e-3    # m
    duration: float = 0.0          # s
    propagation_sign: int = +1
    profile: str = "lorentzian"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown stage role {self.role!r}")
        if self.duration < 0 or not math.isfinite(self.duration):
            raise ValueError("stage duration must be finite and non-negative")
        if self.power < 0:
            raise ValueError("stage power must be non-negative")
        if self.power > 0 and self.linewidth <= 0:
            raise ValueError("driving stage needs a positive linewidth")
        if self.power > 0 and self.transition is None:
            raise ValueError("driving stage needs a target transition")
        if self.profile not in ("lorentzian", "gaussian"):
            raise ValueError(f"unknown spectral profile {self.profile!r}")

    @classmethod
    def dark(cls, duration: float) -> "LaserStage":
        return cls(role="dark", transition=None, duration=duration)

    @classmethod
    def on_velocity_class(cls, role: str, transition: Transition, vz: float,
                          linewidth: float, power: float, duration: float,
                          beam_radius: float = 1.5e-3, propagation_sign: int = +1,
                          profile: str = "lorentzian") -> "LaserStage":
        """Stage centred on the class ``vz``: center = omega0*(1 + sign*vz/c)."""
        center = float(doppler_shifted_resonance(transition.omega0, vz, propagation_sign))
        return cls(role=role, transition=transition, center=center,
                   linewidth=linewidth, power=power, duration=duration,
                   beam_radius=beam_radius, propagation_sign=propagation_sign,
                   profile=profile)

    @property
    def selected_velocity(self) -> float:
        """Velocity class resonant with the stage center (m/s)."""
        if self.transition is None:
            return math.nan
        return (self.center / self.transition.omega0 - 1.0) * c / self.propagation_sign

    @property
    def total_intensity(self) -> float:
        if self.beam_radius <= 0:
            raise ValueError("beam radius must be positive")
        return self.power / (math.pi * self.beam_radius**2)


@dataclass(frozen=True)
class PulseSequence:
    stages: tuple[LaserStage, ...]
    repeat: int = 1

    def __post_init__(self):
        if not self.stages:
            raise ValueError("sequence must contain at least one stage")
        if self.repeat < 1:
            raise ValueError("repeat count must be >= 1")
        object.__setattr__(self, "stages", tuple(self.stages))


@dataclass(frozen=True)
class DriftRelaxation:
    """Phenomenological exchange with the unprepared reservoir outside the
    beams: every level relaxes as -rate * (n - n_equilibrium). Off by
    default; the equilibrium state must live on the same velocity grid."""

    rate: float
    equilibrium: "PopulationState"

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("drift relaxation rate must be positive")


@dataclass(frozen=True)
class IntegratorControls:
    rtol: float = 1e-8
    atol_scale: float = 1e-12      # absolute tolerance = atol_scale * class total
    max_step_fraction: float = 0.1  # max step = fraction * stage duration
    method: str = "auto"           # rk | expm | auto
    stiff_threshold: float = 1e3   # switch to expm when rate*duration exceeds this


def spectral_intensity(stage: LaserStage, omega) -> np.ndarray:
    """Spectral intensity I(omega) in W m^-2 per rad/s; integrates to P/(pi r^2)."""
    i_tot = stage.total_intensity
    if stage.power == 0.0:
        return np.zeros_like(np.asarray(omega, float))
    if stage.profile == "gaussian":
        sig = stage.linewidth / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        d = np.asarray(omega, float) - stage.center
        shape = np.exp(-0.5 * (d / sig) ** 2) / (sig * math.sqrt(2.0 * math.pi))
    else:
        shape = lorentzian_lineshape(omega, stage.center, stage.linewidth)
    return i_tot * shape


def overlap_rate(stage: LaserStage, transition: Transition, vz) -> np.ndarray:
    """Stimulated rate coefficient (B/c) * int I(w) gL(w - w0[1 + s vz/c]) dw.

    Evaluated in closed form: the laser profile convolved with the natural
    Lorentzian is a Lorentzian of summed FWHM (or a Voigt profile for a
    Gaussian laser).
    """
    if stage.power == 0.0:
        return np.zeros_like(np.asarray(vz, float))
    detuning = stage.center - doppler_shifted_resonance(
        transition.omega0, vz, stage.propagation_sign)
    if stage.profile == "gaussian":
        sig = stage.linewidth / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        conv = voigt_profile(detuning, sig, 0.5 * transition.gamma)
    else:
        conv = lorentzian_lineshape(detuning, 0.0, stage.linewidth + transition.gamma)
    return (transition.einstein_b / c) * stage.total_intensity * conv


def _level_order(state: PopulationState, stage: LaserStage) -> list:
    keys: list = [("g", F) for F in sorted(state.ground)]
    excited = set(state.excited)
    if stage.transition is not None and stage.power > 0:
        excited.add((stage.transition.line, stage.transition.upper.F))
    keys += [("e",) + k for k in sorted(excited)]
    return keys


def _rate_matrices(state: PopulationState, stage: LaserStage,
                   species: Species) -> tuple[np.ndarray, list, float]:
    """Per-class rate matrices (N, L, L) for one stage, plus level order and
    the fastest rate scale (for the stiffness heuristic)."""
    order = _level_order(state, stage)
    index = {k: i for i, k in enumerate(order)}
    n = state.grid.n
    m = np.zeros((n, len(order), len(order)))
    fastest = 0.0
    for key in order:
        if key[0] != "e":
            continue
        line, upf = key[1], key[2]
        channels = species.decay_channels(line, upf)
        total = sum(t.einstein_a for t in channels)
        m[:, index[key], index[key]] -= total
        for t in channels:
            m[:, index[("g", t.lower.F)], index[key]] += t.einstein_a
        fastest = max(fastest, total)
    if stage.transition is not None and stage.power > 0:
        tr = stage.transition
        rates = overlap_rate(stage, tr, state.grid.velocities)
        ig = index[("g", tr.lower.F)]
        ie = index[("e", tr.line, tr.upper.F)]
        ratio = tr.lower.g / tr.upper.g
        m[:, ig, ig] -= rates
        m[:, ig, ie] += ratio * rates
        m[:, ie, ig] += rates
        m[:, ie, ie] -= ratio * rates
        fastest = max(fastest, float(np.max(rates)) * (1.0 + ratio))
    return m, order, fastest


def _pack(state: PopulationState, order: list) -> np.ndarray:
    n = state.grid.n
    y = np.zeros((len(order), n))
    for i, key in enumerate(order):
        if key[0] == "g":
            y[i] = state.ground[key[1]]
        else:
            y[i] = state.excited.get(key[1:], np.zeros(n))
    return y


def _unpack(y: np.ndarray, order: list, state: PopulationState,
            time: float) -> PopulationState:
    ground = {key[1]: y[i].copy() for i, key in enumerate(order) if key[0] == "g"}
    excited = {key[1:]: y[i].copy() for i, key in enumerate(order) if key[0] == "e"}
    return PopulationState(grid=state.grid, ground=ground, excited=excited, time=time)


def derivatives(state: PopulationState, stage: LaserStage, species: Species,
                drift: DriftRelaxation | None = None) -> dict:
    """Per-class time derivatives of every level under one stage.

    Keys match PopulationState: ground F as int, excited as (line, F').
    The four derivatives of a driven class sum to zero by construction.
    """
    m, order, _ = _rate_matrices(state, stage, species)
    y = _pack(state, order)
    dy = np.einsum("nij,jn->in", m, y)
    if drift is not None:
        dy += drift.rate * (_pack(drift.equilibrium, order) - y)
    out: dict = {}
    for i, key in enumerate(order):
        out[key[1] if key[0] == "g" else key[1:]] = dy[i]
    return out


def evolve_stage(state: PopulationState, stage: LaserStage, species: Species,
                 controls: IntegratorControls = IntegratorControls(),
                 drift: DriftRelaxation | None = None) -> PopulationState:
    """Advance the populations through one stage.

    Short stages use the adaptive RK integrator; long strongly-driven stages
    (rate * duration above ``stiff_threshold``) use the exact propagator of
    the per-class linear system. Both conserve each class total. With drift
    relaxation the system is affine; the exact path propagates the state
    augmented by a constant component.
    """
    if stage.duration == 0.0:
        return replace(state)
    m, order, fastest = _rate_matrices(state, stage, species)
    y0 = _pack(state, order)
    source = None
    if drift is not None:
        idx = np.arange(len(order))
        m[:, idx, idx] -= drift.rate
        source = drift.rate * _pack(drift.equilibrium, order)
        fastest += drift.rate
    t_end = state.time + stage.duration
    method = controls.method
    if method == "auto":
        method = "expm" if fastest * stage.duration > controls.stiff_threshold else "rk"
    if method == "expm":
        if source is None:
            y1 = propagate_linear(m, y0, stage.duration)
        else:
            n, ell = state.grid.n, len(order)
            m_aug = np.zeros((n, ell + 1, ell + 1))
            m_aug[:, :ell, :ell] = m
            m_aug[:, :ell, ell] = source.T
            y_aug = np.vstack([y0, np.ones((1, n))])
            y1 = propagate_linear(m_aug, y_aug, stage.duration)[:ell]
    else:
        atol = controls.atol_scale * np.sum(y0, axis=0, keepdims=True)
        atol = np.maximum(atol, 1e-300)
        if source is None:
            def rhs(y):
                return np.einsum("nij,jn->in", m, y)
        else:
            def rhs(y):
                return np.einsum("nij,jn->in", m, y) + source
        y1, _ = rk45(rhs, y0, stage.duration,
                     rtol=controls.rtol, atol=atol,
                     max_step=controls.max_step_fraction * stage.duration)
    return _unpack(y1, order, state, t_end)


def run_sequence(initial: PopulationState, sequence: PulseSequence, species: Species,
                 controls: IntegratorControls = IntegratorControls(),
                 drift: DriftRelaxation | None = None) -> list[PopulationState]:
    """Apply the stages in order (repeated as configured).

    Returns the trajectory: the initial state followed by a snapshot after
    every stage.
    """
    traj = [initial]
    state = initial
    for _ in range(sequence.repeat):
        for stage in sequence.stages:
            state = evolve_stage(state, stage, species, controls, drift=drift)
            traj.append(state)
    return traj


def thermal_state(ensemble: ThermalEnsemble, species: Species,
                  grid: VelocityGrid) -> PopulationState:
    """Thermal equilibrium: ground levels filled in degeneracy ratio, excited empty."""
    pdf = maxwell_boltzmann_pdf(grid.velocities, ensemble, species)
    g_total = sum(lv.g for lv in species.ground_levels)
    ground = {lv.F: (lv.g / g_total) * ensemble.density * pdf
              for lv in species.ground_levels}
    return PopulationState(grid=grid, ground=ground, excited={}, time=0.0)


def export_trajectory(trajectory: list[PopulationState], path) -> None:
    """Write the trajectory as CSV: time, vz, one column per level."""
    ground_fs = sorted(trajectory[0].ground)
    excited_keys: list = sorted({k for st in trajectory for k in st.excited})
    with open(path, "w", newline="") as fh:
        for i, key in enumerate(excited_keys):
            fh.write(f"# ne{i + 1} = {key[0]} F'={key[1]}\n")
        writer = csv.writer(fh)
        writer.writerow(["time_s", "vz_m_per_s"]
                        + [f"n{F}" for F in ground_fs]
                        + [f"ne{i + 1}" for i in range(len(excited_keys))])
        for st in trajectory:
            zeros = np.zeros(st.grid.n)
            cols = [st.ground[F] for F in ground_fs] \
                + [st.excited.get(k, zeros) for k in excited_keys]
            for j, vz in enumerate(st.grid.velocities):
                writer.writerow([repr(st.time), repr(float(vz))]
                                + [repr(float(col[j])) for col in cols])
