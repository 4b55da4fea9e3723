"""Parameter recovery from measured spectra and relaxation curves.

Spectrum fits minimise the squared optical-depth residual between a measured
trace and the forward model (rate equations -> weak-probe spectrum) over
pump-back power, pump-back linewidth and selected velocity class. Power and
linewidth are fitted in log space; a bounded simplex search is refined by
damped least squares with a finite-difference Jacobian. Relaxation curves are
fitted to a difference of two exponentials with an ordering transform that
keeps the fast rate above the slow one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .atoms import Species, ThermalEnsemble
from .coherence import LadderConfig, dephasing_time, memory_lifetime, \
    selected_distribution, wavevector_mismatch
from .errors import NumericError
from .pumping import (IntegratorControls, LaserStage, PopulationState, VelocityGrid,
                      evolve_stage, thermal_state)
from .spectroscopy import optical_depth, probe_grid

MHZ = 2.0 * math.pi * 1e6
DEFAULT_BUDGET = 500


@dataclass(frozen=True)
class SpectrumFitParams:
    """Pump-back power (W), spectral FWHM (rad/s) and selected class (m/s)."""

    power: float
    linewidth: float
    velocity_class: float
    power_bounds: tuple[float, float] = (1e-6, 1.0)
    linewidth_bounds: tuple[float, float] = (0.1 * MHZ, 80.0 * MHZ)
    velocity_bounds: tuple[float, float] = (-400.0, 400.0)

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be non-negative")
        if self.linewidth <= 0:
            raise ValueError("linewidth must be positive")
        for val, (lo, hi) in ((self.power, self.power_bounds),
                              (self.linewidth, self.linewidth_bounds),
                              (self.velocity_class, self.velocity_bounds)):
            if not lo <= val <= hi:
                raise ValueError(f"value {val} outside bounds [{lo}, {hi}]")


@dataclass(frozen=True)
class SpectrumFitResult:
    params: SpectrumFitParams
    residual: float
    point_residuals: np.ndarray
    status: str                     # converged | max-iterations | stalled
    n_evaluations: int
    uncertainties: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")
        if self.status not in ("converged", "max-iterations", "stalled"):
            raise ValueError(f"unknown status {self.status!r}")


@dataclass(frozen=True)
class RelaxationFit:
    """T(t) = a1 exp(-gamma_slow t) - a2 exp(-gamma_fast t) + offset."""

    a1: float
    a2: float
    gamma_slow: float
    gamma_fast: float
    offset: float
    covariance: np.ndarray
    status: str = "converged"      # converged | max-iterations | fast-term-unidentifiable

    def __post_init__(self):
        if self.a1 <= 0 or self.a2 < 0:
            raise ValueError("amplitudes must be positive")
        if not self.gamma_fast > self.gamma_slow > 0:
            raise ValueError("need gamma_fast > gamma_slow > 0")

    def __call__(self, t):
        t = np.asarray(t, float)
        return (self.a1 * np.exp(-self.gamma_slow * t)
                - self.a2 * np.exp(-self.gamma_fast * t) + self.offset)


class SpectrumModel:
    """Forward model shared by fits and sweeps.

    Prepares the pumped state once (the long initial pump empties the memory
    level for every parameter set), then per parameter set applies the
    pump-back, lets excited population settle through the probe window and
    computes the optical depth. Rate-equation solutions are memoised on the
    quantised parameter triple since fits re-evaluate nearby points.
    """

    def __init__(self, species: Species, ensemble: ThermalEnsemble,
                 pump_power: float = 20e-3, pump_duration: float = 2e-3,
                 pump_linewidth: float = 6.0 * MHZ, beam_radius: float = 2.25e-3,
                 settle: float = 1.5e-6, pump_back_duration: float = 0.2e-6,
                 n_classes: int = 2001, n_sigma: float = 6.0, probe_sign: int = -1,
                 controls: IntegratorControls = IntegratorControls(),
                 ladder: LadderConfig | None = None):
        self.species = species
        self.ensemble = ensemble
        self.beam_radius = beam_radius
        self.settle = settle
        self.pump_back_duration = pump_back_duration
        self.probe_sign = probe_sign
        self.controls = controls
        self.ladder = ladder
        self.grid = VelocityGrid.for_ensemble(ensemble, species, n_sigma, n_classes)
        defaults = species.defaults
        pd = defaults["pump_transition"]
        self.pump_transition = species.transition(pd["line"], pd["lower_F"], pd["upper_F"])
        pb = defaults["pump_back_transition"]
        self.pump_back_transition = species.transition(pb["line"], pb["lower_F"], pb["upper_F"])
        pump = LaserStage.on_velocity_class(
            "pump", self.pump_transition, 0.0, pump_linewidth,
            pump_power, pump_duration, beam_radius=beam_radius)
        self._pumped = evolve_stage(thermal_state(ensemble, species, self.grid),
                                    pump, species, controls)
        self._cache: dict = {}
        self.n_evaluations = 0

    def pumped_state(self) -> PopulationState:
        return self._pumped

    def _key(self, power, linewidth, velocity, duration):
        return (round(power, 12), round(linewidth, 3), round(velocity, 9),
                round(duration, 15))

    def prepared_state(self, power: float, linewidth: float, velocity: float,
                       duration: float | None = None) -> PopulationState:
        duration = self.pump_back_duration if duration is None else duration
        key = self._key(power, linewidth, velocity, duration)
        state = self._cache.get(key)
        if state is None:
            stage = LaserStage.on_velocity_class(
                "pump-back", self.pump_back_transition, velocity, linewidth,
                power, duration, beam_radius=self.beam_radius)
            state = evolve_stage(self._pumped, stage, self.species, self.controls)
            state = evolve_stage(state, LaserStage.dark(self.settle),
                                 self.species, self.controls)
            self._cache[key] = state
            self.n_evaluations += 1
        return state

    def spectrum(self, detuning_mhz: np.ndarray, params: SpectrumFitParams,
                 duration: float | None = None) -> np.ndarray:
        state = self.prepared_state(params.power, params.linewidth,
                                    params.velocity_class, duration)
        ref = self.species.defaults["reference_transition"]
        reference = self.species.transition(ref["line"], ref["lower_F"], ref["upper_F"])
        omega = reference.omega0 + np.asarray(detuning_mhz, float) * MHZ
        spec = optical_depth(state, self.ensemble, self.species, omega,
                             probe_sign=self.probe_sign)
        return spec.optical_depth


def fit_spectrum(detuning_mhz: np.ndarray, measured_od: np.ndarray,
                 model: SpectrumModel, initial: SpectrumFitParams,
                 od_uncertainty: np.ndarray | None = None,
                 budget: int = DEFAULT_BUDGET) -> SpectrumFitResult:
    """Least-squares recovery of the pump-back parameters from one spectrum.

    Uniform weighting unless ``od_uncertainty`` is given (then inverse
    variance). Deterministic: no randomness anywhere in the pipeline.
    """
    det = np.asarray(detuning_mhz, float)
    od = np.asarray(measured_od, float)
    weights = np.ones_like(od)
    if od_uncertainty is not None:
        weights = 1.0 / np.maximum(np.asarray(od_uncertainty, float), 1e-12) ** 2
    wroot = np.sqrt(weights)

    lo = np.array([math.log(initial.power_bounds[0]),
                   math.log(initial.linewidth_bounds[0]),
                   initial.velocity_bounds[0]])
    hi = np.array([math.log(initial.power_bounds[1]),
                   math.log(initial.linewidth_bounds[1]),
                   initial.velocity_bounds[1]])

    def decode(z) -> SpectrumFitParams:
        # exp(log(bound)) can overshoot the bound by an ulp
        def clamp(val, bounds):
            return min(max(val, bounds[0]), bounds[1])
        return replace(initial,
                       power=clamp(math.exp(z[0]), initial.power_bounds),
                       linewidth=clamp(math.exp(z[1]), initial.linewidth_bounds),
                       velocity_class=clamp(float(z[2]), initial.velocity_bounds))

    def model_od(z):
        vals = model.spectrum(det, decode(z))
        if not np.all(np.isfinite(vals)):
            raise NumericError(
                "non-finite model output at power="
                f"{math.exp(z[0]):.6g} W, linewidth={math.exp(z[1]) / MHZ:.6g} MHz, "
                f"class={z[2]:.6g} m/s")
        return vals

    def objective(z):
        return float(np.sum(weights * (od - model_od(z)) ** 2))

    z0 = np.array([math.log(initial.power), math.log(initial.linewidth),
                   initial.velocity_class])
    evals_before = model.n_evaluations
    simplex_budget = max(budget // 2, 50)
    nm = optimize.minimize(
        objective, z0, method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options={"maxfev": simplex_budget, "xatol": 1e-4, "fatol": 1e-12,
                 "adaptive": True})

    def residuals(z):
        return wroot * (model_od(np.clip(z, lo, hi)) - od)

    remaining = max(budget - (model.n_evaluations - evals_before), 40)
    ls = optimize.least_squares(
        residuals, np.clip(nm.x, lo, hi), bounds=(lo, hi), method="trf",
        diff_step=1e-5, max_nfev=remaining, xtol=1e-12, ftol=1e-12, gtol=1e-10)

    z_best, rss_best = (ls.x, float(np.sum(ls.fun**2)))
    if nm.fun < rss_best:
        z_best, rss_best = nm.x, float(nm.fun)
    params = decode(z_best)
    point_res = od - model_od(z_best)

    if ls.status > 0 or nm.success:
        status = "converged"
    elif ls.status == 0:
        status = "max-iterations"
    else:
        status = "stalled"

    uncertainties = {}
    try:
        jtj = ls.jac.T @ ls.jac
        dof = max(det.size - 3, 1)
        cov_z = np.linalg.inv(jtj) * rss_best / dof
        sig = np.sqrt(np.maximum(np.diag(cov_z), 0.0))
        uncertainties = {"power": params.power * sig[0],
                         "linewidth": params.linewidth * sig[1],
                         "velocity_class": sig[2]}
    except np.linalg.LinAlgError:
        pass

    return SpectrumFitResult(params=params, residual=rss_best,
                             point_residuals=point_res, status=status,
                             n_evaluations=model.n_evaluations - evals_before,
                             uncertainties=uncertainties)


# --- relaxation fit ----------------------------------------------------------

def _relaxation_guess(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Heuristic start: offset from the tail, slow rate from the late slope,
    fast rate from the early residual; safe fallbacks on degenerate pieces."""
    span = t[-1] - t[0]
    c0 = float(np.mean(y[max(len(y) - 3, 0):]))
    late = slice(len(t) // 2, None)
    resid = y[late] - c0
    mask = resid > 1e-12
    if np.count_nonzero(mask) >= 2:
        slope, intercept = np.polyfit(t[late][mask], np.log(resid[mask]), 1)
        gamma_s = max(-slope, 0.1 / span)
        a1 = math.exp(intercept)
    else:
        gamma_s, a1 = 1.0 / span, max(float(np.max(y) - c0), 1e-6)
    early = y - (a1 * np.exp(-gamma_s * t) + c0)
    mask = (-early) > 1e-12
    mask[len(t) // 2:] = False
    if np.count_nonzero(mask) >= 2:
        slope, intercept = np.polyfit(t[mask], np.log(-early[mask]), 1)
        gamma_f = max(-slope, 10.0 * gamma_s)
        a2 = math.exp(intercept)
    else:
        gamma_f, a2 = max(30.0 / (t[1] - t[0] + 1e-300), 10.0 * gamma_s), 0.1 * a1
    return np.array([math.log(a1), math.log(max(a2, 1e-12)),
                     math.log(gamma_s), math.log(max(gamma_f - gamma_s, 1e-3 * gamma_s)),
                     c0])


def fit_relaxation(times: np.ndarray, transmission: np.ndarray,
                   max_nfev: int = 2000) -> RelaxationFit:
    """Fit the double-exponential relaxation model to a time series.

    The ordering gamma_fast > gamma_slow is built into the parametrisation
    (gamma_fast = gamma_slow + exp(theta)). Needs at least 8 points; a
    constant series is rejected as degenerate.
    """
    t = np.asarray(times, float)
    y = np.asarray(transmission, float)
    if t.size < 8 or t.size != y.size:
        raise ValueError("need at least 8 (time, transmission) pairs")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if float(np.std(y)) < 1e-12 * max(abs(float(np.mean(y))), 1e-30):
        raise ValueError("degenerate (constant) series: rates undefined")

    def unpack(theta):
        a1, a2 = math.exp(theta[0]), math.exp(theta[1])
        gs = math.exp(theta[2])
        gf = gs + math.exp(theta[3])
        return a1, a2, gs, gf, theta[4]

    def residuals(theta):
        a1, a2, gs, gf, c = unpack(theta)
        return a1 * np.exp(-gs * t) - a2 * np.exp(-gf * t) + c - y

    theta0 = _relaxation_guess(t, y)
    ls = optimize.least_squares(residuals, theta0, method="lm",
                                max_nfev=max_nfev, xtol=1e-14, ftol=1e-14)
    a1, a2, gs, gf, c = unpack(ls.x)

    dof = max(t.size - 5, 1)
    s2 = float(np.sum(ls.fun**2)) / dof
    try:
        cov = np.linalg.inv(ls.jac.T @ ls.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((5, 5), np.nan)

    status = "converged" if ls.status > 0 else "max-iterations"
    # an invisible fast term leaves theta[1]/theta[3] unconstrained
    rel_a2 = a2 / max(a1, 1e-300)
    var_f = cov[3, 3] if np.isfinite(cov[3, 3]) else math.inf
    if rel_a2 < 1e-4 or var_f > 10.0:
        status = "fast-term-unidentifiable"
    return RelaxationFit(a1=a1, a2=max(a2, 1e-300), gamma_slow=gs, gamma_fast=gf,
                         offset=c, covariance=cov, status=status)


# --- power/duration sweep -----------------------------------------------------

def sweep(powers: np.ndarray, durations: np.ndarray, model: SpectrumModel,
          linewidth: float = 6.0 * MHZ, velocity_class: float = -100.0,
          detuning_window=(-600.0, 800.0), points: int = 1000,
          threads: int = 1) -> list[dict]:
    """Full pipeline over a power x duration grid.

    Each entry runs pump -> pump-back -> settle, then tabulates the peak
    optical depth of the re-pumped line, the motion-induced dephasing time
    and (when the model carries a ladder) the memory lifetime. Grid points
    are independent, so they may be evaluated by a small thread pool.
    """
    ref = model.species.defaults["reference_transition"]
    reference = model.species.transition(ref["line"], ref["lower_F"], ref["upper_F"])
    omega = probe_grid(reference, detuning_window[0], detuning_window[1], points)
    k_r = wavevector_mismatch(model.ladder) if model.ladder else None
    combos = [(float(p), float(d)) for p in powers for d in durations]

    def evaluate(combo):
        power, duration = combo
        state = model.prepared_state(power, linewidth, velocity_class, duration)
        spec = optical_depth(state, model.ensemble, model.species, omega,
                             probe_sign=model.probe_sign)
        row = {"power_W": power, "duration_s": duration, "peak_od": spec.peak_od}
        if model.ladder is not None:
            f_sel, grid = selected_distribution(state, model.species.memory_F)
            row["dephasing_time_s"] = dephasing_time(f_sel, grid, k_r)
            row["memory_lifetime_s"] = memory_lifetime(f_sel, grid, model.ladder)
        return row

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(evaluate, combos))
    return [evaluate(c) for c in combos]


def read_relaxation_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a relaxation series CSV (columns time_s, transmission)."""
    from .errors import IngestionError
    times, values = [], []
    header_seen = False
    with open(path) as fh:
        for lineno, lineraw in enumerate(fh, start=1):
            stripped = lineraw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if not header_seen:
                cols = [col.strip() for col in stripped.split(",")]
                if cols != ["time_s", "transmission"]:
                    raise IngestionError(f"row {lineno}: expected header "
                                         f"'time_s,transmission', got {stripped!r}")
                header_seen = True
                continue
            parts = stripped.split(",")
            if len(parts) != 2:
                raise IngestionError(f"row {lineno}: expected 2 columns, got {len(parts)}")
            try:
                times.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError as exc:
                raise IngestionError(f"row {lineno}: non-numeric value ({exc})") from exc
    if not times:
        raise IngestionError("relaxation file contains no data rows")
    return np.array(times), np.array(values)
