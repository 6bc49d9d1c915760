"""Comparison localizers: TWR trilateration, TDoA-only, AoA-only and the fusion.

These are the reference methods for the dilution-of-precision study. All use
the same damped Gauss-Newton scaffold (environment-center start, coarse-grid
multi-start fallback, in-environment preference) and come in both single-shot
and batched forms; the batched forms carry the Monte-Carlo studies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, AnchorArray, Environment, Position, eval_grid
from .measurement import MeasurementSet, wrap_angle
from .solvers import lm_minimize

MULTISTART_GRID_RES = 0.25
MULTISTART_SEEDS = 3
SOLVE_MARGIN = 0.5  # meters the solve box extends past the room


class BaselineKind(enum.Enum):
    TWR = "twr"
    TDOA = "tdoa"
    AOA = "aoa"
    FUSED = "fused"


@dataclass(frozen=True)
class Fix:
    """A position estimate plus a divergence flag."""

    position: Position
    converged: bool


def _in_env(pos: np.ndarray, env: Environment) -> np.ndarray:
    return ((pos[:, 0] >= -1e-9) & (pos[:, 0] <= env.width + 1e-9)
            & (pos[:, 1] >= -1e-9) & (pos[:, 1] <= env.height + 1e-9))


def _robust_solve(make_fn, n_rows: int, env: Environment, starts=None):
    """Center-start batched LM with coarse-grid multi-start fallback.

    make_fn(rows) returns the residual/Jacobian callback restricted to those
    measurement rows. Rows whose first solve diverges or lands outside the
    environment are re-run from the best MULTISTART_SEEDS coarse-grid seeds;
    in-environment results are preferred, otherwise the best found is
    returned flagged.
    """
    rows_all = np.arange(n_rows)
    if starts is None:
        starts = np.tile(env.center().as_array(), (n_rows, 1))
    # solve inside the room plus a margin: flat-valley fits whose minimum lies
    # far outside pin to the wall of this box instead of running to infinity
    box = ((-SOLVE_MARGIN, -SOLVE_MARGIN),
           (env.width + SOLVE_MARGIN, env.height + SOLVE_MARGIN))
    pos, cost, conv = lm_minimize(make_fn(rows_all), starts, bounds=box)
    inside = _in_env(pos, env)
    ok = conv & inside
    if ok.all():
        return pos, ok

    bad = np.where(~ok)[0]
    grid = eval_grid(env, MULTISTART_GRID_RES)
    G = grid.shape[0]
    rep = np.repeat(bad, G)
    fn_grid = make_fn(rep)
    r, _ = fn_grid(np.tile(grid, (len(bad), 1)))
    grid_cost = np.einsum("bm,bm->b", r, r).reshape(len(bad), G)
    seed_idx = np.argsort(grid_cost, axis=1)[:, :MULTISTART_SEEDS]

    cand_pos = [pos[bad]]
    cand_cost = [cost[bad]]
    cand_conv = [conv[bad]]
    fn_bad = make_fn(bad)
    for s in range(MULTISTART_SEEDS):
        p_s, c_s, v_s = lm_minimize(fn_bad, grid[seed_idx[:, s]], bounds=box,
                                    max_iter=35)
        cand_pos.append(p_s)
        cand_cost.append(c_s)
        cand_conv.append(v_s)
    sel = np.arange(len(bad))
    cand_pos = np.stack(cand_pos, axis=1)        # (R, S+1, 2)
    cand_cost = np.stack(cand_cost, axis=1)      # (R, S+1)
    cand_conv = np.stack(cand_conv, axis=1)
    cand_in = ((cand_pos[..., 0] >= -1e-9) & (cand_pos[..., 0] <= env.width + 1e-9)
               & (cand_pos[..., 1] >= -1e-9) & (cand_pos[..., 1] <= env.height + 1e-9))
    # prefer in-room converged results; when none converges inside the best
    # found (within the solve box) is returned and flagged
    penalty = np.where(cand_in & cand_conv, 0.0,
                       np.where(cand_conv, 1e9,
                                np.where(cand_in, 1e10, 1e11)))
    pick = np.argmin(cand_cost + penalty, axis=1)
    pos[bad] = cand_pos[sel, pick]
    ok[bad] = cand_conv[sel, pick] & cand_in[sel, pick]
    return pos, ok


# ---------------------------------------------------------------------------
# TWR trilateration
# ---------------------------------------------------------------------------

def trilaterate_twr_batch(ranges_s: np.ndarray, array: AnchorArray,
                          env: Environment):
    """Batched trilateration of (B, N) time-of-flight rows; meters residuals."""
    ranges_m = np.asarray(ranges_s, dtype=float) * SPEED_OF_LIGHT
    anchors = array.positions

    def make_fn(rows):
        meas = ranges_m[rows]

        def fn(p):
            diff = p[:, None, :] - anchors[None, :, :]
            d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1e-9)
            r = d - meas
            J = diff / d[..., None]
            return r, J

        return fn

    return _robust_solve(make_fn, ranges_m.shape[0], env)


def trilaterate_twr(ranges_s, array: AnchorArray,
                    env: Environment = Environment()) -> Fix:
    """Position minimizing the squared range errors of per-anchor ToF readings."""
    ranges_s = np.asarray(ranges_s, dtype=float)
    if array.n < 3 or ranges_s.shape[0] != array.n:
        raise ValueError("need one range per anchor and at least 3 anchors")
    pos, ok = trilaterate_twr_batch(ranges_s[None, :], array, env)
    return Fix(Position(pos[0, 0], pos[0, 1]), bool(ok[0]))


# ---------------------------------------------------------------------------
# TDoA-only
# ---------------------------------------------------------------------------

def locate_tdoa_batch(tdoa_s: np.ndarray, pairs, array: AnchorArray,
                      env: Environment, sigma_t: float = 140e-12):
    """Batched hyperbolic solve of (B, K) time-difference rows.

    Seeds come from a coarse shared grid of the cost surface (descent alone
    is unreliable without a good initial estimate on these flat valleys).
    """
    tdoa_s = np.asarray(tdoa_s, dtype=float)
    anchors = array.positions
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    scale = 1.0 / (SPEED_OF_LIGHT * sigma_t)

    # coarse-grid seeding on a shared expected-difference map
    grid = eval_grid(env, max(min(env.width, env.height) / 40.0, 0.02))
    dg = np.hypot(grid[:, None, 0] - anchors[None, :, 0],
                  grid[:, None, 1] - anchors[None, :, 1])
    tg = (dg[:, ii] - dg[:, jj]) / SPEED_OF_LIGHT          # (G, K)
    gcost = np.zeros((tdoa_s.shape[0], grid.shape[0]))
    for k in range(len(pairs)):
        rk = (tdoa_s[:, k, None] - tg[None, :, k]) / sigma_t
        gcost += rk * rk
    seeds = grid[np.argmin(gcost, axis=1)]

    def make_fn(rows):
        meas = tdoa_s[rows]

        def fn(p):
            diff = p[:, None, :] - anchors[None, :, :]
            d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1e-9)
            u = diff / d[..., None]
            r = ((d[:, ii] - d[:, jj]) / SPEED_OF_LIGHT - meas) \
                * (SPEED_OF_LIGHT * scale)
            J = (u[:, ii, :] - u[:, jj, :]) * scale
            return r, J

        return fn

    return _robust_solve(make_fn, tdoa_s.shape[0], env, starts=seeds)


def locate_tdoa(meas: MeasurementSet, array: AnchorArray,
                env: Environment = Environment()) -> Fix:
    """Least-squares position from one packet's time differences."""
    sigma = meas.noise.sigma_t if meas.noise.sigma_t > 0 else 140e-12
    pos, ok = locate_tdoa_batch(meas.tdoa[None, :], list(meas.pairs), array, env,
                                sigma_t=sigma)
    return Fix(Position(pos[0, 0], pos[0, 1]), bool(ok[0]))


# ---------------------------------------------------------------------------
# AoA-only
# ---------------------------------------------------------------------------

def _bearing_linear_ls(centers: np.ndarray, angles: np.ndarray, strict: bool):
    """Closest point to all bearing lines, batched over (B, G) angle rows."""
    # line direction for angle a w.r.t. the +y normal: (-sin a, cos a)
    dx = -np.sin(angles)
    dy = np.cos(angles)
    # A = sum_k (I - d d^T), b = sum_k (I - d d^T) c_k
    a11 = np.sum(1.0 - dx * dx, axis=1)
    a12 = np.sum(-dx * dy, axis=1)
    a22 = np.sum(1.0 - dy * dy, axis=1)
    bx = np.sum((1.0 - dx * dx) * centers[None, :, 0]
                + (-dx * dy) * centers[None, :, 1], axis=1)
    by = np.sum((-dx * dy) * centers[None, :, 0]
                + (1.0 - dy * dy) * centers[None, :, 1], axis=1)
    det = a11 * a22 - a12 * a12
    singular = np.abs(det) < 1e-9
    if singular.any():
        if strict:
            raise ValueError("bearing lines are (near-)parallel; intersection singular")
        det = np.where(singular, np.where(det < 0, -1e-9, 1e-9), det)
    x = (a22 * bx - a12 * by) / det
    y = (a11 * by - a12 * bx) / det
    return np.stack([x, y], axis=-1), ~singular


def locate_aoa_batch(angles: np.ndarray, centers: np.ndarray, env: Environment,
                     sigma_aoa: float = math.radians(1.5),
                     gn_passes: int = 1, strict: bool = False):
    """Batched bearing-line intersection of (B, G) angle rows.

    Linear least squares seeds a single Gauss-Newton pass on the angular
    residuals. Near-parallel rows are flagged (or raised when strict).
    """
    angles = np.asarray(angles, dtype=float)
    centers = np.asarray(centers, dtype=float)
    pos, ok = _bearing_linear_ls(centers, angles, strict)

    def fn(p):
        v = p[:, None, :] - centers[None, :, :]
        r2 = np.maximum(v[..., 0] ** 2 + v[..., 1] ** 2, 1e-12)
        theta = np.arctan2(-v[..., 0], v[..., 1])
        r = wrap_angle(theta - angles) / sigma_aoa
        J = np.stack([-v[..., 1] / r2, v[..., 0] / r2], axis=-1) / sigma_aoa
        return r, J

    pos, _, _ = lm_minimize(fn, pos, max_iter=gn_passes)
    return pos, ok


def locate_aoa(aoas, array: AnchorArray = None,
               env: Environment = Environment()) -> Fix:
    """Least-squares intersection of bearing observations.

    `aoas` is a sequence of (pair_center: Position, angle: radians) with the
    angle measured against the +y array normal. Parallel bearings raise.
    """
    if len(aoas) < 2:
        raise ValueError("need at least 2 bearing observations")
    centers = np.array([[c.x, c.y] for c, _ in aoas])
    angles = np.array([[a for _, a in aoas]])
    pos, ok = locate_aoa_batch(angles, centers, env, strict=True)
    return Fix(Position(pos[0, 0], pos[0, 1]), bool(ok[0]))


# ---------------------------------------------------------------------------
# TWR + AoA + TDoA fusion
# ---------------------------------------------------------------------------

def locate_fused_batch(twr_s: np.ndarray, tdoa_s: np.ndarray, tdoa_pairs,
                       aoa: np.ndarray, aoa_centers: np.ndarray,
                       array: AnchorArray, env: Environment,
                       sigma_twr: float = 150e-12, sigma_t: float = 140e-12,
                       sigma_aoa: float = math.radians(1.5)):
    """Batched variance-weighted joint solve of TWR + TDoA + AoA rows."""
    ranges_m = np.asarray(twr_s, dtype=float) * SPEED_OF_LIGHT
    tdoa_s = np.asarray(tdoa_s, dtype=float)
    aoa = np.asarray(aoa, dtype=float)
    anchors = array.positions
    ii = np.array([i for i, _ in tdoa_pairs])
    jj = np.array([j for _, j in tdoa_pairs])
    w_twr = 1.0 / (SPEED_OF_LIGHT * sigma_twr)
    w_tdoa = 1.0 / (SPEED_OF_LIGHT * sigma_t)

    def make_fn(rows):
        rng_m = ranges_m[rows]
        td = tdoa_s[rows]
        an = aoa[rows]

        def fn(p):
            diff = p[:, None, :] - anchors[None, :, :]
            d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1e-9)
            u = diff / d[..., None]
            r_twr = (d - rng_m) * w_twr
            J_twr = u * w_twr
            r_td = ((d[:, ii] - d[:, jj]) - td * SPEED_OF_LIGHT) * w_tdoa
            J_td = (u[:, ii, :] - u[:, jj, :]) * w_tdoa
            v = p[:, None, :] - aoa_centers[None, :, :]
            r2 = np.maximum(v[..., 0] ** 2 + v[..., 1] ** 2, 1e-12)
            theta = np.arctan2(-v[..., 0], v[..., 1])
            r_aoa = wrap_angle(theta - an) / sigma_aoa
            J_aoa = np.stack([-v[..., 1] / r2, v[..., 0] / r2], axis=-1) / sigma_aoa
            return (np.concatenate([r_twr, r_td, r_aoa], axis=1),
                    np.concatenate([J_twr, J_td, J_aoa], axis=1))

        return fn

    return _robust_solve(make_fn, ranges_m.shape[0], env)


def locate_fused(meas: MeasurementSet, array: AnchorArray,
                 env: Environment = Environment()) -> Fix:
    """Joint TWR + AoA + TDoA solve of one packet (the fusion baseline)."""
    if meas.twr is None or meas.aoa is None or meas.aoa_groups is None:
        raise ValueError("fused baseline needs twr, aoa and aoa_groups")
    centers = np.array([(array.positions[i] + array.positions[j]) / 2.0
                        for i, j in meas.aoa_groups])
    noise = meas.noise
    pos, ok = locate_fused_batch(
        meas.twr[None, :], meas.tdoa[None, :], list(meas.pairs),
        meas.aoa[None, :], centers, array, env,
        sigma_twr=noise.sigma_twr or 150e-12,
        sigma_t=noise.sigma_t or 140e-12,
        sigma_aoa=noise.sigma_aoa or math.radians(1.5))
    return Fix(Position(pos[0, 0], pos[0, 1]), bool(ok[0]))
