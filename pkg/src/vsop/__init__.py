"""Velocity-selective optical pumping simulator for warm alkali-vapour memories."""

__version__ = "0.1.0"

from .atoms import (BeamGeometry, HyperfineLevel, Species, ThermalEnsemble,
                    Transition, doppler_shifted_resonance, drift_estimates,
                    load_species, lorentzian_lineshape, make_ensemble,
                    maxwell_boltzmann_pdf, sigma_v, vapour_number_density)
from .coherence import (CoherenceDecay, LadderConfig, coherence_decay,
                        dephasing_time, enhancement_factor, memory_lifetime,
                        overlap, selected_distribution, thermal_distribution,
                        wavevector_mismatch)
from .errors import ConfigError, IngestionError, NumericError
from .fitting import (RelaxationFit, SpectrumFitParams, SpectrumFitResult,
                      SpectrumModel, fit_relaxation, fit_spectrum, sweep)
from .pumping import (DriftRelaxation, IntegratorControls, LaserStage,
                      PopulationState, PulseSequence, VelocityGrid,
                      derivatives, evolve_stage, overlap_rate, run_sequence,
                      spectral_intensity, thermal_state)
from .spectroscopy import (Spectrum, cross_section, optical_depth, probe_grid,
                           unpumped_spectrum)

__all__ = [name for name in dir() if not name.startswith("_")]
