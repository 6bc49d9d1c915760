"""Single-vantage UWB localization: TDoA/PDoA fusion, baselines, and a TDMA MAC sim."""

from .geometry import (AnchorArray, Environment, Position, eval_grid, make_coprime,
                       make_paired, make_ula, DEFAULT_WAVELENGTH, SPEED_OF_LIGHT)
from .measurement import (MeasurementSet, NoiseModel, OscillatorSpec, expected_aoa,
                          expected_pdoa, expected_tdoa, expected_twr, far_field_pdoa,
                          jitter_sigma, load_oscillator_spec, phase_time_sigmas,
                          sample_measurements, wrap_angle)
from .calibration import (CalibrationParams, biased_phase, expected_pdoa_calibrated,
                          fit_three_point, load_calibration, save_calibration)
from .estimator import (LikelihoodSpec, ParticleFilter, grid_search_locate,
                        locate_joint, neg_log_likelihood, pf_adapt, pf_init,
                        pf_update)
from .baselines import (BaselineKind, Fix, locate_aoa, locate_fused, locate_tdoa,
                        trilaterate_twr)
from .macsim import (GatewayState, MacConfig, MacReport, assign_slot,
                     detect_and_correct, drift_offset, run_mac)

__version__ = "0.1.0"
