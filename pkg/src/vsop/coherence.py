"""Collective-coherence overlap, motion-induced dephasing and memory lifetimes.

A stored ladder coherence of wavevector mismatch k_r accumulates a phase
k_r * vz * t per atom, so the normalised state overlap is the Fourier
transform of the participating velocity distribution. Its 1/e point (of the
modulus squared) is the dephasing time; combined with storage-state decay it
bounds the memory lifetime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atoms import Species, ThermalEnsemble, maxwell_boltzmann_pdf
from .pumping import PopulationState, VelocityGrid

_BLOCK = 2048          # time samples evaluated per chunk
_MAX_SAMPLES = 2_000_000  # scan budget before reporting an unbounded decay


@dataclass(frozen=True)
class LadderConfig:
    """Two-photon ladder: signal/control wavelengths (m), storage lifetime (s)."""

    signal_wavelength: float
    control_wavelength: float
    storage_lifetime: float
    species: Species | None = None
    temperature: float = 296.15

    def __post_init__(self):
        if min(self.signal_wavelength, self.control_wavelength,
               self.storage_lifetime) <= 0:
            raise ValueError("wavelengths and storage lifetime must be positive")


@dataclass(frozen=True)
class CoherenceDecay:
    """Sampled |<psi(0)|psi(t)>|^2 with the extracted timescales (seconds)."""

    times: np.ndarray
    overlap_sq: np.ndarray
    dephasing_rate: float
    dephasing_time: float
    memory_lifetime: float


def wavevector_mismatch(config: LadderConfig) -> float:
    """k_r = |2 pi / lambda_S - 2 pi / lambda_C| in rad/m."""
    return abs(2.0 * math.pi / config.signal_wavelength
               - 2.0 * math.pi / config.control_wavelength)


def _normalised(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    f = np.asarray(f, float)
    area = grid.integrate(f)
    if abs(area - 1.0) > 1e-6:
        raise ValueError(f"velocity distribution is not normalised (area {area:.8f})")
    return f / area


def overlap(f: np.ndarray, grid: VelocityGrid, k_r: float, t) -> np.ndarray:
    """Complex overlap int f(vz) exp(i k_r vz t) dvz on the grid.

    ``f`` must be normalised to unit area on the grid (1e-6 tolerance).
    Vectorised over ``t``; evaluation is chunked so long time arrays stay
    within memory.
    """
    f = _normalised(f, grid)
    t_arr = np.atleast_1d(np.asarray(t, float))
    fw = grid.weights * f
    out = np.empty(t_arr.shape, complex)
    for start in range(0, t_arr.size, _BLOCK):
        block = t_arr[start:start + _BLOCK, None]
        out[start:start + _BLOCK] = \
            np.exp(1j * k_r * block * grid.velocities[None, :]) @ fw
    return out if np.ndim(t) else out[0]


def _decay_metric(f, grid, k_r, extra_rate):
    def metric(t):
        vals = np.abs(overlap(f, grid, k_r, t)) ** 2
        if extra_rate > 0.0:
            vals = vals * np.exp(-extra_rate * np.asarray(t, float))
        return vals
    return metric


def _one_over_e_time(f: np.ndarray, grid: VelocityGrid, k_r: float,
                     extra_rate: float = 0.0) -> float:
    """Smallest t with |overlap|^2 * exp(-extra_rate t) <= 1/e.

    Scans forward with steps short enough to resolve the fastest possible
    overlap oscillation (set by the full velocity span), then bisects the
    bracketing interval. Returns inf when no crossing exists within the
    scan budget (delta-like distributions with no storage decay).
    """
    target = 1.0 / math.e
    v_span = float(np.max(np.abs(grid.velocities)))
    dt = math.inf
    if k_r > 0.0:
        dt = 0.2 / (k_r * v_span)
    if extra_rate > 0.0:
        # crossing is guaranteed by t = 1/extra_rate; keep it well resolved
        dt = min(dt, 2e-3 / extra_rate)
    if not math.isfinite(dt):
        return math.inf
    if extra_rate == 0.0 and k_r > 0.0:
        # |overlap|^2 >= 1 - (k_r sigma_f t)^2, so a crossing needs
        # t >= sqrt(1 - 1/e) / (k_r sigma_f); prune delta-like distributions.
        spread = velocity_spread(f, grid)
        if spread <= 0.0 or 0.795 / (k_r * spread) > _MAX_SAMPLES * dt:
            return math.inf
    metric = _decay_metric(f, grid, k_r, extra_rate)
    start = 0
    prev_t, prev_v = 0.0, 1.0
    while start < _MAX_SAMPLES:
        times = (np.arange(start, start + _BLOCK) + 1) * dt
        vals = metric(times)
        below = np.nonzero(vals <= target)[0]
        if below.size:
            idx = below[0]
            lo = float(times[idx - 1]) if idx > 0 else prev_t
            hi = float(times[idx])
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if metric(mid) <= target:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-10 * hi:
                    break
            return hi
        prev_t, prev_v = float(times[-1]), float(vals[-1])
        if extra_rate > 0.0 and prev_t > 1.05 / extra_rate:
            # numerically impossible: exp(-1) bound already passed
            return prev_t
        start += _BLOCK
    return math.inf


def dephasing_time(f: np.ndarray, grid: VelocityGrid, k_r: float) -> float:
    """Smallest t with |overlap(t)|^2 <= 1/e; inf when k_r = 0 (no dephasing)."""
    if k_r <= 0.0:
        return math.inf
    f = _normalised(f, grid)
    return _one_over_e_time(f, grid, k_r)


def memory_lifetime(f: np.ndarray, grid: VelocityGrid, config: LadderConfig) -> float:
    """1/e time of the efficiency eta(t) = |overlap(t)|^2 exp(-t / tau_sp)."""
    k_r = wavevector_mismatch(config)
    f = _normalised(f, grid)
    if k_r <= 0.0:
        return config.storage_lifetime
    return _one_over_e_time(f, grid, k_r, extra_rate=1.0 / config.storage_lifetime)


def enhancement_factor(f_selected: np.ndarray, grid_selected: VelocityGrid,
                       f_thermal: np.ndarray, grid_thermal: VelocityGrid,
                       config: LadderConfig) -> float:
    """Ratio of memory lifetimes with / without velocity selection."""
    with_vsp = memory_lifetime(f_selected, grid_selected, config)
    without = memory_lifetime(f_thermal, grid_thermal, config)
    if not (math.isfinite(with_vsp) and math.isfinite(without)):
        raise ValueError("enhancement factor needs finite lifetimes on both sides")
    return with_vsp / without


def thermal_distribution(ensemble: ThermalEnsemble, species: Species,
                         n_sigma: float = 8.0, n: int = 4001
                         ) -> tuple[np.ndarray, VelocityGrid]:
    """Maxwell-Boltzmann f(vz) on a wide grid (the tails matter for the overlap)."""
    grid = VelocityGrid.for_ensemble(ensemble, species, n_sigma=n_sigma, n=n)
    return maxwell_boltzmann_pdf(grid.velocities, ensemble, species), grid


def selected_distribution(state: PopulationState,
                          F: int | None = None) -> tuple[np.ndarray, VelocityGrid]:
    """Normalised post-pumping distribution f(vz) of one ground level.

    The participating atoms are those returned to the memory level, so
    f(vz) is proportional to its density n_F(vz).
    """
    fs = sorted(state.ground)
    F = fs[-1] if F is None else F
    dens = state.ground[F]
    area = state.grid.integrate(dens)
    if area <= 0:
        raise ValueError(f"ground level F={F} holds no population")
    return dens / area, state.grid


def velocity_spread(f: np.ndarray, grid: VelocityGrid) -> float:
    """Standard deviation of a normalised velocity distribution."""
    f = _normalised(f, grid)
    mean = grid.integrate(f * grid.velocities)
    return math.sqrt(max(grid.integrate(f * (grid.velocities - mean) ** 2), 0.0))


def coherence_decay(f: np.ndarray, grid: VelocityGrid, config: LadderConfig,
                    n_times: int = 400) -> CoherenceDecay:
    """Full decay record for export: sampled overlap plus extracted timescales."""
    k_r = wavevector_mismatch(config)
    f = _normalised(f, grid)
    tau_d = dephasing_time(f, grid, k_r) if k_r > 0 else math.inf
    lifetime = memory_lifetime(f, grid, config)
    horizon = 4.0 * (tau_d if math.isfinite(tau_d) else config.storage_lifetime)
    times = np.linspace(0.0, horizon, n_times)
    overlap_sq = np.abs(overlap(f, grid, k_r, times)) ** 2
    return CoherenceDecay(times=times, overlap_sq=overlap_sq,
                          dephasing_rate=k_r * velocity_spread(f, grid),
                          dephasing_time=tau_d, memory_lifetime=lifetime)


def write_decay_csv(decay: CoherenceDecay, config: LadderConfig, path) -> None:
    """CoherenceDecay CSV: metadata header then time_ns, overlap_sq."""
    k_r = wavevector_mismatch(config)
    with open(path, "w", newline="") as fh:
        fh.write(f"# k_r_rad_per_m = {k_r!r}\n")
        fh.write(f"# storage_lifetime_ns = {config.storage_lifetime * 1e9!r}\n")
        tau = decay.dephasing_time
        fh.write(f"# dephasing_time_ns = "
                 f"{'unbounded' if not math.isfinite(tau) else repr(tau * 1e9)}\n")
        fh.write(f"# memory_lifetime_ns = {decay.memory_lifetime * 1e9!r}\n")
        fh.write(f"# dephasing_rate_per_s = {decay.dephasing_rate!r}\n")
        fh.write("time_ns,overlap_sq\n")
        for t, o in zip(decay.times, decay.overlap_sq):
            fh.write(f"{float(t) * 1e9!r},{float(o)!r}\n")
