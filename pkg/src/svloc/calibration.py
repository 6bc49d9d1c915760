"""Per-anchor phase-bias model and the three-point calibration fit.

Measured carrier phase deviates from the ideal 2*pi*d/lambda by a
distance-dependent bias alpha + beta * d**gamma per anchor. Calibration
recovers these parameters from phase observations at known positions and the
corrected expected-PDoA subtracts them out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import yaml

from .geometry import AnchorArray, Position
from .measurement import TWO_PI, wrap_angle

GAMMA_RANGE = (-2.0, 2.0)


@dataclass(frozen=True)
class CalibrationParams:
    """Additive (alpha), multiplicative (beta) and exponent (gamma) bias terms."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def bias(self, d) -> np.ndarray:
        """alpha + beta * d**gamma at distance(s) d."""
        return self.alpha + self.beta * np.power(np.asarray(d, dtype=float), self.gamma)


IDENTITY = CalibrationParams(0.0, 0.0, 0.0)


def _params(array: AnchorArray, i: int) -> CalibrationParams:
    if array.calibration is None:
        return IDENTITY
    return array.calibration[i]


def biased_phase(d: float, params: CalibrationParams, lam: float) -> float:
    """Unwrapped phase 2*pi*d/lambda plus the anchor's bias at distance d."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return TWO_PI * d / lam + float(params.bias(d))


def expected_pdoa_calibrated(p: Position, array: AnchorArray, i: int, j: int) -> float:
    """Bias-corrected expected phase difference, wrapped to [-pi, pi).

    Subtracting each anchor's bias from its ideal phase makes the model match
    biased hardware; with all-zero parameters this reduces exactly to the
    ideal expected PDoA.
    """
    if i == j:
        raise ValueError("pair indices must differ")
    di = p.distance_to(array.anchor(i))
    dj = p.distance_to(array.anchor(j))
    pi_, pj = _params(array, i), _params(array, j)
    phase_i = TWO_PI * di / array.wavelength - float(pi_.bias(di))
    phase_j = TWO_PI * dj / array.wavelength - float(pj.bias(dj))
    return float(wrap_angle(phase_i - phase_j))


def _alpha_beta_lls(d: np.ndarray, y: np.ndarray, gamma: float):
    """Closed-form least squares for y = alpha + beta * d**gamma at fixed gamma."""
    basis = np.column_stack([np.ones_like(d), np.power(d, gamma)])
    coef, _, _, _ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    return coef[0], coef[1], float(resid @ resid)


def _fit_bias_curve(d: np.ndarray, y: np.ndarray,
                    gamma_range=GAMMA_RANGE, n_grid: int = 161) -> CalibrationParams:
    """Fit y = alpha + beta * d**gamma by a gamma line search.

    Gamma is scanned on a grid dense near zero (log-spaced magnitudes on each
    sign), alpha/beta solved in closed form at each gamma; the best cell is
    then polished by golden-section search.
    """
    lo, hi = gamma_range
    mags = np.logspace(-3, math.log10(max(abs(lo), abs(hi))), n_grid // 2)
    grid = np.concatenate([-mags[::-1], [0.0], mags])
    grid = grid[(grid >= lo) & (grid <= hi)]

    costs = np.array([_alpha_beta_lls(d, y, g)[2] for g in grid])
    k = int(np.argmin(costs))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]

    # golden-section refinement of gamma in [a, b]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1 = _alpha_beta_lls(d, y, x1)[2]
    f2 = _alpha_beta_lls(d, y, x2)[2]
    for _ in range(80):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = _alpha_beta_lls(d, y, x1)[2]
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = _alpha_beta_lls(d, y, x2)[2]
    gamma = x1 if f1 <= f2 else x2
    alpha, beta, _ = _alpha_beta_lls(d, y, gamma)
    return CalibrationParams(float(alpha), float(beta), float(gamma))


def fit_three_point(known: Sequence, array: AnchorArray) -> list:
    """Per-anchor bias fit from raw phase observations at known positions.

    `known` is a sequence of (Position, phases) with `phases[i]` the raw,
    unwrapped phase observed at anchor i. Hardware reads low: a raw phase is
    the ideal 2*pi*d/lambda minus the anchor's bias, so the fit regresses
    y = ideal - measured onto alpha + beta * d**gamma. At least three
    positions with pairwise distinct distances per anchor are required.
    Returns one CalibrationParams per anchor, fit independently.
    """
    if len(known) < 3:
        raise ValueError("need at least 3 calibration points")
    positions = [k[0] for k in known]
    phases = np.asarray([np.asarray(k[1], dtype=float) for k in known])
    if phases.shape != (len(known), array.n):
        raise ValueError("need one phase per anchor per calibration point")

    fitted = []
    for i in range(array.n):
        d = np.array([p.distance_to(array.anchor(i)) for p in positions])
        gaps = np.abs(np.subtract.outer(d, d))
        if np.min(gaps[~np.eye(len(d), dtype=bool)]) < 1e-9:
            raise ValueError(f"calibration distances to anchor {i} are degenerate")
        y = TWO_PI * d / array.wavelength - phases[:, i]
        fitted.append(_fit_bias_curve(d, y))
    return fitted


def raw_phase(d, params: CalibrationParams, lam: float):
    """Mean raw phase a biased anchor reports at distance d: ideal minus bias."""
    return TWO_PI * np.asarray(d, dtype=float) / lam - params.bias(d)


def save_calibration(path, params: Sequence) -> None:
    """Write per-anchor (alpha, beta, gamma) triples to a YAML file."""
    data = {"anchors": [{"index": i, "alpha": float(p.alpha), "beta": float(p.beta),
                         "gamma": float(p.gamma)} for i, p in enumerate(params)]}
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def load_calibration(path) -> list:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    rows = sorted(raw["anchors"], key=lambda r: r["index"])
    return [CalibrationParams(float(r["alpha"]), float(r["beta"]), float(r["gamma"]))
            for r in rows]
