import math

import numpy as np
import pytest

from svloc.calibration import (CalibrationParams, biased_phase,
                               expected_pdoa_calibrated, fit_three_point,
                               load_calibration, raw_phase, save_calibration)
from svloc.geometry import Position, DEFAULT_WAVELENGTH, make_ula
from svloc.measurement import TWO_PI, expected_pdoa

LAM = DEFAULT_WAVELENGTH
ARR = make_ula(2, 1.0, Position(0.5, 0.0))


class TestBiasedPhase:
    def test_identity_params(self):
        d = 1.7
        assert biased_phase(d, CalibrationParams(), LAM) == pytest.approx(
            TWO_PI * d / LAM)

    def test_pure_offset(self):
        for d in (0.5, 1.0, 3.2):
            assert biased_phase(d, CalibrationParams(alpha=1.0), LAM) == \
                pytest.approx(TWO_PI * d / LAM + 1.0)

    def test_linear_term(self):
        got = biased_phase(2.0, CalibrationParams(beta=0.5, gamma=1.0), LAM)
        assert got == pytest.approx(TWO_PI * 2.0 / LAM + 1.0)

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            biased_phase(0.0, CalibrationParams(gamma=-1.0), LAM)


class TestExpectedPdoaCalibrated:
    def test_zero_params_reduce_to_ideal(self):
        arr = ARR.with_calibration([CalibrationParams(), CalibrationParams()])
        p = Position(0.3, 2.1)
        assert expected_pdoa_calibrated(p, arr, 0, 1) == pytest.approx(
            expected_pdoa(p, arr, 0, 1), abs=1e-12)

    def test_common_mode_cancels(self):
        params = CalibrationParams(alpha=0.4, beta=0.3, gamma=0.0)
        arr = ARR.with_calibration([params, params])
        p = Position(0.3, 2.1)
        assert expected_pdoa_calibrated(p, arr, 0, 1) == pytest.approx(
            expected_pdoa(p, arr, 0, 1), abs=1e-12)

    def test_alpha_shift(self):
        arr = ARR.with_calibration([CalibrationParams(alpha=0.1),
                                    CalibrationParams()])
        p = Position(0.0, 3.0)
        base = expected_pdoa(p, arr, 0, 1)
        got = expected_pdoa_calibrated(p, arr, 0, 1)
        want = (base - 0.1 + math.pi) % TWO_PI - math.pi
        assert got == pytest.approx(want, abs=1e-12)

    def test_matches_raw_phase_difference(self):
        params = [CalibrationParams(0.3, 0.5, 1.1), CalibrationParams(-0.2, 0.1, 0.7)]
        arr = ARR.with_calibration(params)
        p = Position(0.8, 1.9)
        d0 = p.distance_to(arr.anchor(0))
        d1 = p.distance_to(arr.anchor(1))
        want = raw_phase(d0, params[0], LAM) - raw_phase(d1, params[1], LAM)
        want = (want + math.pi) % TWO_PI - math.pi
        assert expected_pdoa_calibrated(p, arr, 0, 1) == pytest.approx(
            float(want), abs=1e-12)


def synth_known(arr, params, positions, rng=None, sigma=0.0):
    """Raw unwrapped phase observations at known positions."""
    out = []
    for p in positions:
        d = np.hypot(arr.positions[:, 0] - p.x, arr.positions[:, 1] - p.y)
        raw = np.array([raw_phase(di, prm, arr.wavelength)
                        for di, prm in zip(d, params)])
        if sigma > 0:
            raw = raw + rng.normal(0.0, sigma, raw.shape)
        out.append((p, raw))
    return out


CAL_POINTS = [Position(0.9, 1.2), Position(1.65, 2.25), Position(2.4, 0.75)]


class TestFitThreePoint:
    ARR6 = make_ula(6, 1.0, Position(1.5, 0.0))

    def test_null_bias_recovered(self):
        params = [CalibrationParams()] * 6
        fitted = fit_three_point(synth_known(self.ARR6, params, CAL_POINTS),
                                 self.ARR6)
        d = np.linspace(0.5, 5.0, 10)
        for f in fitted:
            assert np.max(np.abs(f.bias(d))) < 1e-6

    def test_round_trip_generator(self):
        params = [CalibrationParams(0.3, 0.7, 1.2)] * 6
        fitted = fit_three_point(synth_known(self.ARR6, params, CAL_POINTS),
                                 self.ARR6)
        # prediction at the calibration points is residual-free
        for p, raw in synth_known(self.ARR6, params, CAL_POINTS):
            d = np.hypot(self.ARR6.positions[:, 0] - p.x,
                         self.ARR6.positions[:, 1] - p.y)
            pred = np.array([raw_phase(di, f, LAM) for di, f in zip(d, fitted)])
            assert np.max(np.abs(pred - raw)) < 1e-8
        # and the bias curve matches the generator on held-out distances
        d = np.linspace(0.5, 5.0, 10)
        for f in fitted:
            assert np.max(np.abs(f.bias(d) - params[0].bias(d))) < 1e-6

    @pytest.mark.parametrize("seed", range(8))
    def test_round_trip_random_params(self, seed):
        rng = np.random.default_rng(seed)
        params = [CalibrationParams(rng.uniform(-1, 1), rng.uniform(0, 1),
                                    rng.uniform(0.5, 1.5)) for _ in range(6)]
        fitted = fit_three_point(synth_known(self.ARR6, params, CAL_POINTS),
                                 self.ARR6)
        d = np.linspace(0.5, 5.0, 10)
        for f, t in zip(fitted, params):
            assert np.max(np.abs(f.bias(d) - t.bias(d))) < 1e-6

    def test_noisy_fit_residual_scale(self):
        rng = np.random.default_rng(0)
        sigma = math.radians(5.0)
        params = [CalibrationParams(0.5, 0.4, 1.0)] * 6
        known = synth_known(self.ARR6, params, CAL_POINTS, rng, sigma)
        fitted = fit_three_point(known, self.ARR6)
        # residual at the fit points stays at the noise scale
        for p, raw in known:
            d = np.hypot(self.ARR6.positions[:, 0] - p.x,
                         self.ARR6.positions[:, 1] - p.y)
            pred = np.array([raw_phase(di, f, LAM) for di, f in zip(d, fitted)])
            assert np.max(np.abs(pred - raw)) < 6 * sigma

    def test_errors(self):
        params = [CalibrationParams()] * 6
        with pytest.raises(ValueError):
            fit_three_point(synth_known(self.ARR6, params, CAL_POINTS[:2]),
                            self.ARR6)
        # two identical positions: degenerate distances
        bad = synth_known(self.ARR6, params,
                          [CAL_POINTS[0], CAL_POINTS[0], CAL_POINTS[1]])
        with pytest.raises(ValueError):
            fit_three_point(bad, self.ARR6)

    def test_per_anchor_independent(self):
        # corrupting anchor 5's observations must not change anchor 0's fit
        params = [CalibrationParams(0.2, 0.3, 0.9)] * 6
        known = synth_known(self.ARR6, params, CAL_POINTS)
        fitted_a = fit_three_point(known, self.ARR6)
        corrupted = [(p, np.concatenate([raw[:5], raw[5:] + 2.0]))
                     for p, raw in known]
        fitted_b = fit_three_point(corrupted, self.ARR6)
        assert fitted_a[0] == fitted_b[0]
        assert fitted_a[5] != fitted_b[5]

    def test_save_load_round_trip(self, tmp_path):
        params = [CalibrationParams(0.1 * i, 0.2, 1.0) for i in range(6)]
        path = tmp_path / "cal.yaml"
        save_calibration(path, params)
        loaded = load_calibration(path)
        assert loaded == params
