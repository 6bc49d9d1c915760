"""Expected-measurement models, Gaussian noise synthesis and the clock noise budget.

Expected values are exact (no far-field assumption). Phases are wrapped to
[-pi, pi); the wrapped-difference metric used downstream makes this equivalent
to a [0, 2pi) convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml

from .geometry import SPEED_OF_LIGHT, AnchorArray, Position

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(theta, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class NoiseModel:
    """Per-modality Gaussian standard deviations; zero means noiseless.

    `outlier_prob` enables a crude multipath mode for robustness tests: with
    that probability a time-difference entry picks up a uniform extra delay
    of up to 30 cm of path (a late reflection folding into the first peak).
    Off by default; the synthetic measurements model the direct path only.
    """

    sigma_t: float = 0.0       # TDoA, seconds
    sigma_theta: float = 0.0   # PDoA, radians
    sigma_twr: float = 0.0     # two-way ranging time of flight, seconds
    sigma_aoa: float = 0.0     # angle of arrival, radians
    outlier_prob: float = 0.0  # per-entry chance of a reflected-path delay

    def __post_init__(self):
        for name in ("sigma_t", "sigma_theta", "sigma_twr", "sigma_aoa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must be a probability")


def reference_pairs(n: int) -> list:
    """(0, j) differencing pairs against the first anchor."""
    return [(0, j) for j in range(1, n)]


def all_pairs(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def resolve_pairs(scheme, n: int) -> list:
    """Accept 'reference', 'all', or an explicit pair list."""
    if scheme == "reference":
        return reference_pairs(n)
    if scheme == "all":
        return all_pairs(n)
    pairs = [(int(i), int(j)) for i, j in scheme]
    for i, j in pairs:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"invalid anchor pair ({i}, {j})")
    return pairs


@dataclass(frozen=True)
class MeasurementSet:
    """One packet's worth of measurements with their noise model.

    tdoa[k] and pdoa[k] correspond to pairs[k]. twr (per anchor) and aoa
    (per anchor pair-group in aoa_groups) are optional and used only by the
    baseline localizers.
    """

    pairs: tuple
    tdoa: np.ndarray
    pdoa: np.ndarray
    noise: NoiseModel
    twr: Optional[np.ndarray] = None
    aoa: Optional[np.ndarray] = None
    aoa_groups: Optional[tuple] = None

    def __post_init__(self):
        tdoa = np.asarray(self.tdoa, dtype=float)
        pdoa = np.asarray(self.pdoa, dtype=float)
        if len(self.pairs) != tdoa.shape[0] or len(self.pairs) != pdoa.shape[0]:
            raise ValueError("pairs, tdoa and pdoa lengths must agree")
        for i, j in self.pairs:
            if i == j:
                raise ValueError("pair indices must differ")
        if pdoa.size and (pdoa.min() < -math.pi or pdoa.max() >= math.pi):
            raise ValueError("pdoa values must lie in [-pi, pi)")
        object.__setattr__(self, "tdoa", tdoa)
        object.__setattr__(self, "pdoa", pdoa)


def expected_twr(p: Position, anchor: Position) -> float:
    """Time of flight |p - anchor| / c in seconds."""
    return p.distance_to(anchor) / SPEED_OF_LIGHT


def expected_tdoa(p: Position, array: AnchorArray, i: int, j: int) -> float:
    """(|p - x_i| - |p - x_j|) / c in seconds."""
    if i == j:
        raise ValueError("pair indices must differ")
    di = p.distance_to(array.anchor(i))
    dj = p.distance_to(array.anchor(j))
    return (di - dj) / SPEED_OF_LIGHT


def expected_pdoa(p: Position, array: AnchorArray, i: int, j: int) -> float:
    """Exact carrier phase difference, wrapped to [-pi, pi)."""
    if i == j:
        raise ValueError("pair indices must differ")
    di = p.distance_to(array.anchor(i))
    dj = p.distance_to(array.anchor(j))
    return float(wrap_angle(TWO_PI * (di - dj) / array.wavelength))


def far_field_pdoa(theta: float, d: float, lam: float) -> float:
    """Unwrapped far-field phase difference (2 pi d / lambda) sin(theta).

    Used for resolution analysis only; the localizers use the exact model.
    """
    return TWO_PI * d / lam * math.sin(theta)


def expected_aoa(p: Position, pair_center: Position, normal=(0.0, 1.0)) -> float:
    """Signed angle between (p - pair_center) and the array normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.hypot(n[0], n[1])
    v = np.array([p.x - pair_center.x, p.y - pair_center.y])
    # signed angle from normal toward the tag (positive = counterclockwise)
    return math.atan2(n[0] * v[1] - n[1] * v[0], n[0] * v[0] + n[1] * v[1])


def _raw_anchor_phases(p: Position, array: AnchorArray) -> np.ndarray:
    """Per-anchor mean raw phase; biased anchors read low by their bias curve."""
    d = np.hypot(array.positions[:, 0] - p.x, array.positions[:, 1] - p.y)
    phase = TWO_PI * d / array.wavelength
    if array.calibration is not None:
        bias = np.array([float(c.bias(di))
                         for c, di in zip(array.calibration, d)])
        phase = phase - bias
    return phase


def sample_measurements(p: Position, array: AnchorArray, pairs, noise: NoiseModel,
                        rng: np.random.Generator, include_twr: bool = False,
                        aoa_groups: Optional[Sequence] = None,
                        noise_origin: str = "pair") -> MeasurementSet:
    """Expected values plus zero-mean Gaussian noise; wrapped after noising.

    With the default noise_origin="pair" every TDoA/PDoA entry gets an
    independent draw at the stated sigma. noise_origin="anchor" instead draws
    one timing and one phase error per receiver and differences them, so
    pairs sharing an anchor are correlated, which is how a receiver bank
    physically behaves. If the array carries calibration parameters the
    synthesized phases include those hardware biases. Deterministic for a
    fixed generator state. `aoa_groups` is a sequence of (i, j) anchor index
    pairs; each contributes one noisy angle measured from the pair's midpoint.
    """
    if noise_origin not in ("pair", "anchor"):
        raise ValueError(f"unknown noise_origin {noise_origin!r}")
    pair_list = resolve_pairs(pairs, array.n)
    tdoa = np.array([expected_tdoa(p, array, i, j) for i, j in pair_list])
    phases = _raw_anchor_phases(p, array)
    pdoa = wrap_angle(np.array([phases[i] - phases[j] for i, j in pair_list]))
    if noise_origin == "anchor":
        et = rng.normal(0.0, noise.sigma_t, size=array.n)
        ep = rng.normal(0.0, noise.sigma_theta, size=array.n)
        tdoa = tdoa + np.array([et[i] - et[j] for i, j in pair_list])
        pdoa = wrap_angle(pdoa + np.array([ep[i] - ep[j] for i, j in pair_list]))
    else:
        tdoa = tdoa + rng.normal(0.0, noise.sigma_t, size=tdoa.shape)
        pdoa = wrap_angle(pdoa + rng.normal(0.0, noise.sigma_theta,
                                            size=pdoa.shape))
    if noise.outlier_prob > 0.0:
        hits = rng.uniform(size=tdoa.shape) < noise.outlier_prob
        extra = rng.uniform(0.0, 0.30 / SPEED_OF_LIGHT, size=tdoa.shape)
        tdoa = tdoa + np.where(hits, extra, 0.0)

    twr = None
    if include_twr:
        twr = np.array([expected_twr(p, array.anchor(i)) for i in range(array.n)])
        twr = twr + rng.normal(0.0, noise.sigma_twr, size=twr.shape)

    aoa = None
    groups = None
    if aoa_groups is not None:
        groups = tuple((int(i), int(j)) for i, j in aoa_groups)
        centers = [Position(*(array.positions[i] + array.positions[j]) / 2.0)
                   for i, j in groups]
        aoa = np.array([expected_aoa(p, c) for c in centers])
        aoa = aoa + rng.normal(0.0, noise.sigma_aoa, size=aoa.shape)

    return MeasurementSet(pairs=tuple(pair_list), tdoa=tdoa, pdoa=pdoa,
                          noise=noise, twr=twr, aoa=aoa, aoa_groups=groups)


@dataclass(frozen=True)
class OscillatorSpec:
    """Oscillator noise description for the clock jitter budget.

    phase_noise maps frequency offset (Hz) to phase noise (dBc/Hz);
    values between table entries interpolate log-linearly in log-offset.
    """

    f_osc: float                 # oscillator frequency, Hz
    f_s: float                   # sampling frequency, Hz
    f_t: float                   # time-stamp clock frequency, Hz
    delta_f: float               # measurement bandwidth, Hz
    phase_noise: tuple = field(default=())  # ((offset_hz, dbc_per_hz), ...)

    def __post_init__(self):
        for name in ("f_osc", "f_s", "f_t", "delta_f"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        table = tuple(sorted((float(f), float(n)) for f, n in self.phase_noise))
        if not table:
            raise ValueError("phase-noise table must be non-empty")
        if any(f <= 0 for f, _ in table):
            raise ValueError("phase-noise offsets must be positive")
        object.__setattr__(self, "phase_noise", table)

    def noise_dbc(self, offset: float) -> float:
        """Phase noise at `offset` Hz, log-linear interpolation in log-offset."""
        if offset <= 0:
            raise ValueError("offset must be positive")
        offs = np.array([f for f, _ in self.phase_noise])
        dbcs = np.array([n for _, n in self.phase_noise])
        return float(np.interp(math.log10(offset), np.log10(offs), dbcs))


def load_oscillator_spec(path) -> OscillatorSpec:
    """Read an OscillatorSpec from a YAML file.

    Expected keys: f_osc, f_s, f_t, delta_f and a phase_noise list of
    {offset_hz, dbc_per_hz} rows.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    table = [(row["offset_hz"], row["dbc_per_hz"]) for row in raw["phase_noise"]]
    return OscillatorSpec(f_osc=float(raw["f_osc"]), f_s=float(raw["f_s"]),
                          f_t=float(raw["f_t"]), delta_f=float(raw["delta_f"]),
                          phase_noise=table)


def jitter_sigma(spec: OscillatorSpec, offset: float) -> float:
    """Clock jitter std: (sqrt(2) / (2 pi f_osc)) * sqrt(delta_f * N_linear)."""
    n_linear = 10.0 ** (spec.noise_dbc(offset) / 10.0)
    return math.sqrt(2.0) / (TWO_PI * spec.f_osc) * math.sqrt(spec.delta_f * n_linear)


def phase_time_sigmas(spec: OscillatorSpec, jitter: float, lam: float) -> tuple:
    """Phase and timestamp error stds implied by a clock jitter level.

    sigma_phi = (c / lambda) * (f_osc / (2 pi f_s)) * jitter   [radians]
    sigma_t   = (f_osc / f_t) * jitter                         [seconds]
    """
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    sigma_phi = (SPEED_OF_LIGHT / lam) * (spec.f_osc / (TWO_PI * spec.f_s)) * jitter
    sigma_t = (spec.f_osc / spec.f_t) * jitter
    return sigma_phi, sigma_t
