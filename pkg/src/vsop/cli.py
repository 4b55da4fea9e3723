"""Command-line front end.

   vsop <command> <config.yaml> [-o DIR] [--threads N] [--no-figures]

Commands: spectrum, dephasing, predict, fit, fit-relaxation, sweep.
Every command writes CSV data, rendered PNG figures and a manifest.json
(config hash, versions, runtime) into the output directory. Exit codes:
0 success, 2 configuration error, 3 ingestion error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .atoms import Species
from .coherence import (LadderConfig, coherence_decay, memory_lifetime,
                        selected_distribution, thermal_distribution,
                        wavevector_mismatch, write_decay_csv)
from .config import DEFAULT_BEAM_RADIUS, MHZ, ExperimentConfig, load_config
from .errors import ConfigError, IngestionError, NumericError
from .fitting import (SpectrumFitParams, SpectrumModel, fit_relaxation,
                      fit_spectrum, read_relaxation_csv, sweep)
from .pumping import (DriftRelaxation, LaserStage, VelocityGrid, evolve_stage,
                      run_sequence, thermal_state)
from .spectroscopy import (optical_depth, probe_grid, read_spectrum_csv,
                           unpumped_spectrum, write_spectrum_csv)


def _reference(species: Species):
    ref = species.defaults["reference_transition"]
    return species.transition(ref["line"], ref["lower_F"], ref["upper_F"])


def _probe_omega(cfg: ExperimentConfig):
    return probe_grid(_reference(cfg.species), cfg.probe.lo_mhz,
                      cfg.probe.hi_mhz, cfg.probe.points)


def _probed_levels(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.probe.include_aux_level:
        return tuple(sorted(lv.F for lv in cfg.species.ground_levels))
    return (cfg.species.defaults.get("probe_lower_F", cfg.species.memory_F),)


def _default_ladder(cfg: ExperimentConfig) -> LadderConfig:
    if cfg.ladder is not None:
        return cfg.ladder
    lad = cfg.species.ladders[0]
    return LadderConfig(lad["signal_nm"] * 1e-9, lad["control_nm"] * 1e-9,
                        lad["storage_lifetime_ns"] * 1e-9, species=cfg.species,
                        temperature=cfg.ensemble.temperature)


class _Runner:
    """Shared output-directory plumbing: collects files, writes the manifest."""

    def __init__(self, command: str, args, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.figures = not args.no_figures
        self.outdir = Path(args.output or cfg.output_dir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.outdir / name

    def finish(self, extra: dict | None = None) -> int:
        import scipy
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.source_sha256,
            "species": self.cfg.species.name,
            "versions": {"vsop": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "runtime_s": round(time.monotonic() - self.started, 3),
            "outputs": self.outputs,
        }
        if extra:
            manifest.update(extra)
        with open(self.outdir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 0


def _final_state(cfg: ExperimentConfig):
    grid = VelocityGrid.for_ensemble(cfg.ensemble, cfg.species,
                                     cfg.span_sigmas, cfg.n_classes)
    initial = thermal_state(cfg.ensemble, cfg.species, grid)
    if cfg.sequence is None:
        return initial
    drift = None
    if cfg.drift_rate > 0.0:
        drift = DriftRelaxation(rate=cfg.drift_rate, equilibrium=initial)
    return run_sequence(initial, cfg.sequence, cfg.species, cfg.controls,
                        drift=drift)[-1]


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    run = _Runner("spectrum", args, cfg)
    omega = _probe_omega(cfg)
    levels = _probed_levels(cfg)
    baseline = unpumped_spectrum(cfg.ensemble, cfg.species, omega,
                                 probe_sign=cfg.probe.sign,
                                 n_classes=cfg.n_classes, lower_fs=levels,
                                 metadata={"config_sha256": cfg.source_sha256})
    write_spectrum_csv(baseline, run.path("baseline.csv"))
    state = _final_state(cfg)
    pumped = optical_depth(state, cfg.ensemble, cfg.species, omega,
                           probe_sign=cfg.probe.sign, lower_fs=levels,
                           metadata={"state": "sequence" if cfg.sequence else "thermal",
                                     "config_sha256": cfg.source_sha256})
    write_spectrum_csv(pumped, run.path("spectrum.csv"))
    if run.figures:
        from . import plots
        plots.spectrum_figure(
            [("unpumped baseline", baseline.detuning_mhz, baseline.optical_depth),
             ("after sequence", pumped.detuning_mhz, pumped.optical_depth)],
            run.path("spectrum.png"))
    return run.finish({"peak_od": pumped.peak_od})


def cmd_dephasing(args) -> int:
    cfg = load_config(args.config)
    run = _Runner("dephasing", args, cfg)
    ladder = _default_ladder(cfg)
    f_th, grid_th = thermal_distribution(cfg.ensemble, cfg.species)
    if cfg.sequence is not None:
        state = _final_state(cfg)
        f, grid = selected_distribution(state, cfg.species.memory_F)
    else:
        f, grid = f_th, grid_th
    decay = coherence_decay(f, grid, ladder)
    write_decay_csv(decay, ladder, run.path("decay.csv"))
    thermal_lifetime = memory_lifetime(f_th, grid_th, ladder)
    beta = decay.memory_lifetime / thermal_lifetime
    tau = decay.dephasing_time
    with open(run.path("dephasing_summary.txt"), "w") as fh:
        fh.write(f"k_r_rad_per_m = {wavevector_mismatch(ladder)!r}\n")
        fh.write(f"dephasing_time_ns = "
                 f"{'unbounded' if not math.isfinite(tau) else repr(tau * 1e9)}\n")
        fh.write(f"memory_lifetime_ns = {decay.memory_lifetime * 1e9!r}\n")
        fh.write(f"thermal_lifetime_ns = {thermal_lifetime * 1e9!r}\n")
        fh.write(f"enhancement_beta = {beta!r}\n")
    if run.figures:
        from . import plots
        plots.decay_figure(decay.times * 1e9, decay.overlap_sq, tau * 1e9,
                           decay.memory_lifetime * 1e9, run.path("decay.png"))
    return run.finish({"dephasing_time_ns":
                       None if not math.isfinite(tau) else tau * 1e9})


def _predict_rows(cfg: ExperimentConfig) -> list[dict]:
    from .atoms import load_species, make_ensemble
    section = cfg.raw.get("predict") or {}
    names = section.get("species", ["cs133", "rb87"])
    temperature = float(section.get("temperature_C", 90.0)) + 273.15
    power = float(section.get("power_mW", 1.0)) * 1e-3
    duration = float(section.get("duration_us", 0.1)) * 1e-6
    linewidth = float(section.get("linewidth_MHz", 6.0)) * MHZ
    velocity = float(section.get("velocity_class_m_per_s", 0.0))
    radius = float(section.get("beam_radius_mm", DEFAULT_BEAM_RADIUS * 1e3)) * 1e-3
    settle = float(section.get("settle_us", 1.5)) * 1e-6
    tau_override = section.get("storage_lifetime_ns")
    rows = []
    for name in names:
        species = load_species(name)
        ensemble = make_ensemble(species, temperature, cfg.ensemble.length)
        f_th, grid_th = thermal_distribution(ensemble, species)
        if power * duration > 0.0:
            grid = VelocityGrid.for_ensemble(ensemble, species,
                                             cfg.span_sigmas, cfg.n_classes)
            pd = species.defaults["pump_transition"]
            pb = species.defaults["pump_back_transition"]
            state = thermal_state(ensemble, species, grid)
            state = evolve_stage(state, LaserStage.on_velocity_class(
                "pump", species.transition(pd["line"], pd["lower_F"], pd["upper_F"]),
                velocity, 6.0 * MHZ, 20e-3, 2e-3, beam_radius=radius),
                species, cfg.controls)
            state = evolve_stage(state, LaserStage.on_velocity_class(
                "pump-back", species.transition(pb["line"], pb["lower_F"], pb["upper_F"]),
                velocity, linewidth, power, duration, beam_radius=radius),
                species, cfg.controls)
            state = evolve_stage(state, LaserStage.dark(settle), species, cfg.controls)
            f_sel, grid_sel = selected_distribution(state, species.memory_F)
        else:
            # no pump-back configured: nothing is selected, beta is 1
            f_sel, grid_sel = f_th, grid_th
        for lad in species.ladders:
            tau_ns = float(tau_override if tau_override is not None
                           else lad["storage_lifetime_ns"])
            ladder = LadderConfig(lad["signal_nm"] * 1e-9, lad["control_nm"] * 1e-9,
                                  tau_ns * 1e-9,
                                  species=species, temperature=temperature)
            no_vsp = memory_lifetime(f_th, grid_th, ladder)
            vsp = memory_lifetime(f_sel, grid_sel, ladder)
            rows.append({"species": species.name, "ladder": lad["name"],
                         "control_nm": lad["control_nm"],
                         "no_vsp_ns": no_vsp * 1e9, "vsp_ns": vsp * 1e9,
                         "beta": vsp / no_vsp})
    return rows


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    run = _Runner("predict", args, cfg)
    rows = _predict_rows(cfg)
    with open(run.path("predictions.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["species", "ladder", "control_nm",
                         "no_vsp_ns", "vsp_ns", "beta"])
        for r in rows:
            writer.writerow([r["species"], r["ladder"], repr(r["control_nm"]),
                             repr(r["no_vsp_ns"]), repr(r["vsp_ns"]),
                             repr(r["beta"])])
    if run.figures:
        from . import plots
        plots.predict_figure(rows, run.path("predict.png"))
    return run.finish()


def _fit_model(cfg: ExperimentConfig, section: dict) -> SpectrumModel:
    return SpectrumModel(
        cfg.species, cfg.ensemble, beam_radius=DEFAULT_BEAM_RADIUS,
        pump_back_duration=float(section.get("pump_back_duration_us", 0.2)) * 1e-6,
        n_classes=cfg.n_classes, n_sigma=cfg.span_sigmas,
        probe_sign=cfg.probe.sign, controls=cfg.controls,
        ladder=_default_ladder(cfg))


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    section = cfg.raw.get("fit") or {}
    data_path = args.data or section.get("data")
    if data_path is None:
        raise ConfigError("fit needs a measured spectrum: set fit.data or --data")
    run = _Runner("fit", args, cfg)
    data = read_spectrum_csv(data_path)
    order = np.argsort(data["detuning_MHz"])
    det = data["detuning_MHz"][order]
    if np.any(np.diff(det) <= 0):
        raise IngestionError("measured spectrum has duplicate detuning values")
    od = data["od"][order]
    unc = data.get("od_uncertainty")
    unc = unc[order] if unc is not None else None

    pw = [b * 1e-3 for b in section.get("power_bounds_mW", [0.01, 100.0])]
    lw = [b * MHZ for b in section.get("linewidth_bounds_MHz", [0.5, 120.0])]
    vb = section.get("velocity_bounds_m_per_s", [-400.0, 400.0])
    initial = SpectrumFitParams(
        power=float(section.get("power_mW", 4.1)) * 1e-3,
        linewidth=float(section.get("linewidth_MHz", 6.0)) * MHZ,
        velocity_class=float(section.get("velocity_class_m_per_s", -100.0)),
        power_bounds=tuple(pw), linewidth_bounds=tuple(lw),
        velocity_bounds=tuple(vb))
    model = _fit_model(cfg, section)
    result = fit_spectrum(det, od, model, initial, od_uncertainty=unc,
                          budget=int(section.get("budget", 500)))

    best = result.params
    u = result.uncertainties
    with open(run.path("fit_report.txt"), "w") as fh:
        fh.write("# vsop spectrum-fit report\n")
        fh.write(f"status = {result.status}\n")
        fh.write(f"n_evaluations = {result.n_evaluations}\n")
        fh.write(f"residual_sum_of_squares = {result.residual!r}\n")
        fh.write(f"power_mW = {best.power * 1e3!r}\n")
        fh.write(f"power_uncertainty_mW = {u.get('power', float('nan')) * 1e3!r}\n")
        fh.write(f"linewidth_MHz = {best.linewidth / MHZ!r}\n")
        fh.write(f"linewidth_uncertainty_MHz = "
                 f"{u.get('linewidth', float('nan')) / MHZ!r}\n")
        fh.write(f"velocity_class_m_per_s = {best.velocity_class!r}\n")
        fh.write(f"velocity_class_uncertainty_m_per_s = "
                 f"{u.get('velocity_class', float('nan'))!r}\n")
    model_od = model.spectrum(det, best)
    with open(run.path("fit_model.csv"), "w", newline="") as fh:
        fh.write("detuning_MHz,OD_measured,OD_model\n")
        for i in range(det.size):
            fh.write(f"{float(det[i])!r},{float(od[i])!r},{float(model_od[i])!r}\n")
    if run.figures:
        from . import plots
        plots.fit_figure(det, od, model_od, run.path("fit.png"))
    return run.finish({"status": result.status})


def cmd_fit_relaxation(args) -> int:
    cfg = load_config(args.config)
    section = cfg.raw.get("fit_relaxation") or {}
    data_path = args.data or section.get("data")
    if data_path is None:
        raise ConfigError("fit-relaxation needs data: set fit_relaxation.data or --data")
    run = _Runner("fit-relaxation", args, cfg)
    times, values = read_relaxation_csv(data_path)
    try:
        fit = fit_relaxation(times, values)
    except ValueError as exc:
        raise IngestionError(str(exc)) from exc
    sig = np.sqrt(np.maximum(np.diag(fit.covariance), 0.0))
    with open(run.path("relaxation_report.txt"), "w") as fh:
        fh.write("# vsop relaxation-fit report\n")
        fh.write(f"status = {fit.status}\n")
        fh.write(f"a1 = {fit.a1!r}\n")
        fh.write(f"a2 = {fit.a2!r}\n")
        fh.write(f"gamma_slow_per_s = {fit.gamma_slow!r}\n")
        fh.write(f"gamma_slow_uncertainty_per_s = {fit.gamma_slow * sig[2]!r}\n")
        fh.write(f"gamma_fast_per_s = {fit.gamma_fast!r}\n")
        fh.write(f"offset = {fit.offset!r}\n")
    if run.figures:
        from . import plots
        plots.relaxation_figure(times, values, fit(times), run.path("relaxation.png"))
    return run.finish({"status": fit.status})


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    section = cfg.raw.get("sweep") or {}
    powers = [p * 1e-3 for p in section.get("powers_mW", [0.86, 4.1, 10.5])]
    durations = [d * 1e-6 for d in section.get("durations_us", [0.2, 1.2, 2.0])]
    run = _Runner("sweep", args, cfg)
    model = _fit_model(cfg, section={})
    rows = sweep(powers, durations, model,
                 linewidth=float(section.get("linewidth_MHz", 6.0)) * MHZ,
                 velocity_class=float(section.get("velocity_class_m_per_s", -100.0)),
                 detuning_window=(cfg.probe.lo_mhz, cfg.probe.hi_mhz),
                 points=cfg.probe.points, threads=args.threads)
    with open(run.path("sweep.csv"), "w", newline="") as fh:
        fh.write("power_mW,duration_us,peak_od,dephasing_time_ns,memory_lifetime_ns\n")
        for r in rows:
            fh.write(f"{r['power_W'] * 1e3:.10g},{r['duration_s'] * 1e6:.10g},"
                     f"{r['peak_od']!r},{r['dephasing_time_s'] * 1e9!r},"
                     f"{r['memory_lifetime_s'] * 1e9!r}\n")
    if run.figures:
        from . import plots
        plots.sweep_figure(rows, run.path("sweep.png"))
    return run.finish()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsop",
        description="Velocity-selective optical pumping simulator and analysis toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "spectrum": (cmd_spectrum, "simulate pumped + baseline absorption spectra"),
        "dephasing": (cmd_dephasing, "coherence decay, dephasing time and lifetime"),
        "predict": (cmd_predict, "memory-lifetime predictions for the bundled ladders"),
        "fit": (cmd_fit, "fit pump-back parameters to a measured spectrum"),
        "fit-relaxation": (cmd_fit_relaxation, "fit the double-exponential relaxation"),
        "sweep": (cmd_sweep, "run the power x duration grid"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment configuration (YAML)")
        p.add_argument("-o", "--output", default=None, help="output directory")
        p.add_argument("--data", default=None,
                       help="measured data file (overrides the config entry)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for grid evaluations")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering, write CSV/manifest only")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
