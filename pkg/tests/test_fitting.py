import numpy as np
import pytest

from vsop.atoms import load_species, make_ensemble
from vsop.coherence import LadderConfig
from vsop.fitting import (MHZ, RelaxationFit, SpectrumFitParams,
                          SpectrumFitResult, SpectrumModel, fit_relaxation,
                          fit_spectrum, read_relaxation_csv, sweep)


@pytest.fixture(scope="module")
def cs():
    return load_species("cs133")


@pytest.fixture(scope="module")
def room(cs):
    return make_ensemble(cs, 296.15, 0.025)


@pytest.fixture(scope="module")
def model(cs, room):
    return SpectrumModel(cs, room, pump_back_duration=0.2e-6, n_classes=801)


@pytest.fixture(scope="module")
def ladder_model(cs, room):
    ladder = LadderConfig(852.34727e-9, 917.48e-9, 60e-9)
    return SpectrumModel(cs, room, n_classes=801, ladder=ladder)


DET = np.linspace(-450, 350, 240)


class TestParamTypes:
    def test_bounds_must_contain_value(self):
        with pytest.raises(ValueError):
            SpectrumFitParams(power=1.0, linewidth=6 * MHZ, velocity_class=0.0,
                              power_bounds=(1e-6, 0.5))

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            SpectrumFitParams(power=-1e-3, linewidth=6 * MHZ, velocity_class=0.0)

    def test_bounds_admit_strong_broadening(self):
        # the observed high-power behaviour needs linewidths up to 70 MHz
        p = SpectrumFitParams(power=1e-3, linewidth=70 * MHZ, velocity_class=0.0)
        assert p.linewidth_bounds[1] >= 70 * MHZ

    def test_result_status_validation(self):
        with pytest.raises(ValueError):
            SpectrumFitResult(params=SpectrumFitParams(1e-3, 6 * MHZ, 0.0),
                              residual=0.0, point_residuals=np.zeros(3),
                              status="diverged", n_evaluations=1)

    def test_relaxation_ordering_enforced(self):
        with pytest.raises(ValueError):
            RelaxationFit(a1=1.0, a2=0.5, gamma_slow=100.0, gamma_fast=10.0,
                          offset=0.0, covariance=np.eye(5))


class TestSpectrumFit:
    def test_noise_free_exact_guess_is_fixed_point(self, model):
        truth = SpectrumFitParams(power=4.1e-3, linewidth=6 * MHZ,
                                  velocity_class=-100.0)
        clean = model.spectrum(DET, truth)
        res = fit_spectrum(DET, clean, model, truth, budget=120)
        assert res.residual < 1e-12
        assert res.params.power == pytest.approx(truth.power, rel=1e-6)
        assert res.params.linewidth == pytest.approx(truth.linewidth, rel=1e-6)
        assert res.params.velocity_class == pytest.approx(-100.0, abs=1e-3)

    def test_round_trip_with_noise(self, model):
        truth = SpectrumFitParams(power=4.1e-3, linewidth=6 * MHZ,
                                  velocity_class=-100.0)
        clean = model.spectrum(DET, truth)
        rng = np.random.default_rng(7)
        noisy = clean * (1 + 0.01 * rng.standard_normal(DET.size))
        start = SpectrumFitParams(power=4.1e-3 * 1.3, linewidth=6 * MHZ * 0.7,
                                  velocity_class=-80.0)
        res = fit_spectrum(DET, noisy, model, start, budget=400)
        assert res.params.power == pytest.approx(4.1e-3, rel=0.05)
        assert res.params.linewidth == pytest.approx(6 * MHZ, rel=0.10)
        assert res.params.velocity_class == pytest.approx(-100.0, abs=2.0)
        assert res.uncertainties["power"] > 0

    def test_final_residual_not_worse_than_start(self, model):
        truth = SpectrumFitParams(power=2e-3, linewidth=8 * MHZ,
                                  velocity_class=-120.0)
        data = model.spectrum(DET, truth)
        start = SpectrumFitParams(power=1e-3, linewidth=12 * MHZ,
                                  velocity_class=-90.0)
        start_res = float(np.sum((data - model.spectrum(DET, start)) ** 2))
        res = fit_spectrum(DET, data, model, start, budget=150)
        assert res.residual <= start_res

    def test_inverse_variance_weighting_accepted(self, model):
        truth = SpectrumFitParams(power=1e-3, linewidth=6 * MHZ,
                                  velocity_class=-100.0)
        data = model.spectrum(DET, truth)
        unc = np.full(DET.size, 0.01)
        res = fit_spectrum(DET, data, model, truth, od_uncertainty=unc, budget=60)
        assert res.residual < 1e-6

    def test_deterministic(self, model):
        truth = SpectrumFitParams(power=1.5e-3, linewidth=7 * MHZ,
                                  velocity_class=-110.0)
        data = model.spectrum(DET, truth)
        start = SpectrumFitParams(power=2e-3, linewidth=5 * MHZ,
                                  velocity_class=-95.0)
        r1 = fit_spectrum(DET, data, model, start, budget=100)
        r2 = fit_spectrum(DET, data, model, start, budget=100)
        assert r1.params == r2.params
        assert r1.residual == r2.residual


class TestModelCache:
    def test_memoisation_hits(self, model):
        before = model.n_evaluations
        p = SpectrumFitParams(power=3e-3, linewidth=9 * MHZ, velocity_class=-50.0)
        model.spectrum(DET, p)
        model.spectrum(DET, p)
        assert model.n_evaluations == before + 1

    def test_pumped_state_is_emptied(self, model, cs):
        pumped = model.pumped_state()
        assert pumped.ground_population(cs.memory_F) < \
            0.01 * pumped.ground_population(cs.aux_F)


class TestRelaxationFit:
    def synthetic(self, noise=0.005, seed=42):
        rng = np.random.default_rng(seed)
        t = np.geomspace(2e-6, 0.12, 260)
        y = 0.5 * np.exp(-40.0 * t) - 0.3 * np.exp(-8.0e4 * t) + 0.2
        return t, y * (1 + noise * rng.standard_normal(t.size))

    def test_round_trip(self):
        t, y = self.synthetic()
        fit = fit_relaxation(t, y)
        assert fit.status == "converged"
        assert fit.gamma_slow == pytest.approx(40.0, rel=0.10)
        assert fit.gamma_fast == pytest.approx(8.0e4, rel=0.10)

    def test_t0_value_identity(self):
        t, y = self.synthetic()
        fit = fit_relaxation(t, y)
        assert fit(0.0) == pytest.approx(0.5 - 0.3 + 0.2, abs=0.01)

    def test_time_rescaling_invariance(self):
        t, y = self.synthetic()
        fit_s = fit_relaxation(t, y)
        fit_ms = fit_relaxation(t * 1e3, y)
        assert fit_ms.gamma_slow * 1e3 == pytest.approx(fit_s.gamma_slow, rel=1e-6)
        assert fit_ms.gamma_fast * 1e3 == pytest.approx(fit_s.gamma_fast, rel=1e-6)
        assert fit_ms.a1 == pytest.approx(fit_s.a1, rel=1e-6)

    def test_single_exponential_flagged(self):
        rng = np.random.default_rng(3)
        t = np.geomspace(2e-6, 0.12, 200)
        y = 0.5 * np.exp(-40.0 * t) + 0.2
        fit = fit_relaxation(t, y * (1 + 0.002 * rng.standard_normal(t.size)))
        assert fit.status == "fast-term-unidentifiable"
        assert fit.gamma_slow == pytest.approx(40.0, rel=0.1)

    def test_constant_series_rejected(self):
        t = np.linspace(0, 1, 50)
        with pytest.raises(ValueError, match="degenerate"):
            fit_relaxation(t, np.full(50, 0.7))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_relaxation(np.linspace(0, 1, 5), np.linspace(1, 0, 5))


class TestSweep:
    def test_trends(self, ladder_model):
        powers = [0.86e-3, 10.5e-3]
        durations = [0.2e-6, 2.0e-6]
        rows = sweep(powers, durations, ladder_model, detuning_window=(-450, 350),
                     points=500)
        assert len(rows) == 4
        by_key = {(r["power_W"], r["duration_s"]): r for r in rows}
        for d in durations:
            lo = by_key[(0.86e-3, d)]
            hi = by_key[(10.5e-3, d)]
            assert hi["peak_od"] >= lo["peak_od"]
            assert hi["dephasing_time_s"] <= lo["dephasing_time_s"]
        for p in powers:
            assert by_key[(p, 2.0e-6)]["peak_od"] >= by_key[(p, 0.2e-6)]["peak_od"]

    def test_zero_duration_gives_empty_feature(self, ladder_model):
        rows = sweep([4.1e-3], [0.0], ladder_model, detuning_window=(-450, 350),
                     points=300)
        assert rows[0]["peak_od"] < 1e-3

    def test_threads_match_serial(self, ladder_model):
        powers = [0.86e-3, 4.1e-3]
        durations = [0.2e-6]
        serial = sweep(powers, durations, ladder_model,
                       detuning_window=(-450, 350), points=200, threads=1)
        parallel = sweep(powers, durations, ladder_model,
                         detuning_window=(-450, 350), points=200, threads=2)
        for a, b in zip(serial, parallel):
            assert a == b


class TestRelaxationCsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "relax.csv"
        path.write_text("# comment\ntime_s,transmission\n0.0,0.4\n1e-3,0.41\n")
        t, y = read_relaxation_csv(path)
        assert np.array_equal(t, [0.0, 1e-3])
        assert np.array_equal(y, [0.4, 0.41])

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,T\n0,1\n")
        from vsop.errors import IngestionError
        with pytest.raises(IngestionError, match="row 1"):
            read_relaxation_csv(path)

    def test_bad_value_row(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("time_s,transmission\n0.0,ok\n")
        from vsop.errors import IngestionError
        with pytest.raises(IngestionError, match="row 2"):
            read_relaxation_csv(path)
