"""Environments, anchor array constructors, tag placement and evaluation grids.

All positions are 2D, in meters. The default convention places anchor arrays
on the y = 0 wall with the room extending into y >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.constants

SPEED_OF_LIGHT = scipy.constants.c  # m/s
DEFAULT_CARRIER_HZ = 3.5e9
# ~0.08565 m at the 3.5 GHz UWB center frequency
DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ


@dataclass(frozen=True)
class Position:
    """A 2D point in meters."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Environment:
    """Rectangular room, [0, width] x [0, height]."""

    width: float = 3.0
    height: float = 3.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("environment dimensions must be positive")

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, p: Position) -> bool:
        return 0.0 <= p.x <= self.width and 0.0 <= p.y <= self.height

    def center(self) -> Position:
        return Position(self.width / 2.0, self.height / 2.0)


@dataclass(frozen=True)
class AnchorArray:
    """Ordered receiver positions plus per-anchor phase-bias calibration.

    ``positions`` is an (N, 2) float array; it is frozen after construction.
    ``calibration`` holds one (alpha, beta, gamma) triple per anchor; the
    all-zero default means ideal (bias-free) hardware.
    """

    positions: np.ndarray
    wavelength: float = DEFAULT_WAVELENGTH
    calibration: tuple = field(default=None)  # tuple of CalibrationParams or None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise ValueError("need an (N, 2) position array with N >= 2")
        if not np.all(np.isfinite(pos)):
            raise ValueError("anchor positions must be finite")
        # pairwise distinct
        diff = pos[:, None, :] - pos[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(d, np.inf)
        if d.min() < 1e-12:
            raise ValueError("anchor positions must be pairwise distinct")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def anchor(self, i: int) -> Position:
        return Position(self.positions[i, 0], self.positions[i, 1])

    def center(self) -> Position:
        c = self.positions.mean(axis=0)
        return Position(c[0], c[1])

    def with_calibration(self, params: Sequence) -> "AnchorArray":
        """Return a copy of this array carrying the given per-anchor params."""
        if len(params) != self.n:
            raise ValueError("need one calibration triple per anchor")
        return AnchorArray(self.positions.copy(), self.wavelength, tuple(params))


def _unit(axis) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    norm = np.hypot(a[0], a[1])
    if norm < 1e-12:
        raise ValueError("axis must be a nonzero vector")
    return a / norm


def make_ula(count: int, aperture: float, center: Position = Position(0.0, 0.0),
             axis=(1.0, 0.0), wavelength: float = DEFAULT_WAVELENGTH) -> AnchorArray:
    """Uniform linear array: `count` anchors spanning `aperture` end to end.

    Anchors are evenly spaced along `axis` and symmetric about `center`;
    consecutive spacing is aperture / (count - 1).
    """
    if count < 2:
        raise ValueError("ULA needs at least 2 anchors")
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    u = _unit(axis)
    offsets = np.linspace(-aperture / 2.0, aperture / 2.0, count)
    pos = center.as_array()[None, :] + offsets[:, None] * u[None, :]
    return AnchorArray(pos, wavelength)


def make_coprime(count: int, aperture: float, center: Position = Position(0.0, 0.0),
                 axis=(1.0, 0.0), pair: tuple = (2, 3),
                 wavelength: float = DEFAULT_WAVELENGTH) -> AnchorArray:
    """Sparse array from two nested sub-lattices with co-prime spacings.

    For a co-prime pair (p, q) the construction places q elements at spacing
    p*u and p elements at spacing q*u (sharing the origin element), then
    scales u so the merged, deduplicated lattice spans `aperture` end to end
    and centers the span on `center`. The union holds p + q - 1 distinct
    elements, which must not exceed `count`.
    """
    p, q = int(pair[0]), int(pair[1])
    if p < 1 or q < 1 or math.gcd(p, q) != 1:
        raise ValueError(f"pair {pair} is not co-prime")
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    lattice = sorted(set(p * k for k in range(q)) | set(q * k for k in range(p)))
    if len(lattice) < 2:
        raise ValueError(f"pair {pair} yields a degenerate lattice")
    if len(lattice) > count:
        raise ValueError(
            f"pair {pair} yields {len(lattice)} distinct positions, more than count={count}")
    span = lattice[-1] - lattice[0]
    u_len = aperture / span
    offsets = np.array(lattice, dtype=float) * u_len
    offsets -= offsets[-1] / 2.0  # center the end-to-end span
    uvec = _unit(axis)
    pos = center.as_array()[None, :] + offsets[:, None] * uvec[None, :]
    return AnchorArray(pos, wavelength)


def make_paired(n_pairs: int, aperture: float, center: Position = Position(0.0, 0.0),
                axis=(1.0, 0.0), pair_spacing: float = DEFAULT_WAVELENGTH / 2.0,
                wavelength: float = DEFAULT_WAVELENGTH) -> AnchorArray:
    """Closely-spaced anchor pairs for angle-of-arrival measurement.

    `n_pairs` pairs of anchors, each pair `pair_spacing` apart (default
    half-wavelength), with the outermost elements spanning `aperture`.
    Anchors are ordered pair by pair: (0,1), (2,3), ...
    """
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    if pair_spacing <= 0 or aperture <= pair_spacing:
        raise ValueError("need 0 < pair_spacing < aperture")
    u = _unit(axis)
    if n_pairs == 1:
        centers = np.array([0.0])
    else:
        half = (aperture - pair_spacing) / 2.0
        centers = np.linspace(-half, half, n_pairs)
    offsets = np.concatenate([[c - pair_spacing / 2.0, c + pair_spacing / 2.0]
                              for c in centers])
    pos = center.as_array()[None, :] + offsets[:, None] * u[None, :]
    return AnchorArray(pos, wavelength)


def eval_grid(env: Environment, resolution: float) -> np.ndarray:
    """Row-major lattice of cell centers covering the environment.

    Returns an (M, 2) array with M = ceil(width/res) * ceil(height/res);
    x varies fastest. Adjacent points differ by exactly `resolution`.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if resolution > min(env.width, env.height):
        raise ValueError("resolution exceeds environment size")
    nx = math.ceil(env.width / resolution - 1e-9)
    ny = math.ceil(env.height / resolution - 1e-9)
    xs = (np.arange(nx) + 0.5) * resolution
    ys = (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)  # row-major: y rows, x fastest
    return np.column_stack([gx.ravel(), gy.ravel()])


def grid_shape(env: Environment, resolution: float) -> tuple:
    """(ny, nx) row/column counts matching eval_grid's layout."""
    nx = math.ceil(env.width / resolution - 1e-9)
    ny = math.ceil(env.height / resolution - 1e-9)
    return ny, nx
