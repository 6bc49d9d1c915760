"""Joint TDoA+PDoA likelihood, grid-search localization and the adaptive particle filter.

The negative log-likelihood scores a candidate position against one packet's
measurements; the grid search is the (slow, exhaustive) reference localizer
and `locate_joint` is a fast coarse-to-fine equivalent used by the
Monte-Carlo studies. The particle filter delivers low-latency sequential
estimates with an adaptive particle count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .geometry import SPEED_OF_LIGHT, AnchorArray, Environment, Position, eval_grid
from .measurement import MeasurementSet, TWO_PI, resolve_pairs, wrap_angle
from .solvers import lm_minimize

MODALITIES = ("fused", "tdoa", "pdoa")


@dataclass(frozen=True)
class LikelihoodSpec:
    """Measurement standard deviations and scoring configuration."""

    sigma_t: float = 150e-12        # seconds
    sigma_theta: float = math.radians(5.0)  # radians
    pairing: str = "reference"      # 'reference', 'all', or explicit pair list
    use_calibration: bool = True
    modality: str = "fused"

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality != "pdoa" and self.sigma_t <= 0:
            raise ValueError("sigma_t must be positive")
        if self.modality != "tdoa" and self.sigma_theta <= 0:
            raise ValueError("sigma_theta must be positive")

    @property
    def n_terms_per_pair(self) -> int:
        return 2 if self.modality == "fused" else 1


def _calib_arrays(array: AnchorArray, use_calibration: bool):
    """Per-anchor (alpha, beta, gamma) columns; zeros when uncalibrated."""
    n = array.n
    if not use_calibration or array.calibration is None:
        z = np.zeros(n)
        return z, z, z
    alpha = np.array([p.alpha for p in array.calibration])
    beta = np.array([p.beta for p in array.calibration])
    gamma = np.array([p.gamma for p in array.calibration])
    return alpha, beta, gamma


def _model_phases(dists: np.ndarray, array: AnchorArray, use_calibration: bool):
    """Bias-corrected per-anchor model phase for stacked distances (..., N)."""
    alpha, beta, gamma = _calib_arrays(array, use_calibration)
    phase = TWO_PI * dists / array.wavelength
    if np.any(beta != 0.0) or np.any(alpha != 0.0):
        phase = phase - (alpha + beta * np.power(dists, gamma))
    return phase


def expected_maps(points: np.ndarray, pairs, array: AnchorArray,
                  use_calibration: bool = True):
    """Expected TDoA and PDoA for every (pair, point): two (K, M) arrays."""
    pts = np.asarray(points, dtype=float)
    diff = pts[None, :, :] - array.positions[:, None, :]   # (N, M, 2)
    dists = np.hypot(diff[..., 0], diff[..., 1])           # (N, M)
    phases = _model_phases(dists.T, array, use_calibration).T  # (N, M)
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    tdoa = (dists[ii] - dists[jj]) / SPEED_OF_LIGHT
    pdoa = wrap_angle(phases[ii] - phases[jj])
    return tdoa, pdoa


def _check_pairs(meas: MeasurementSet, array: AnchorArray, spec: LikelihoodSpec):
    want = tuple(resolve_pairs(spec.pairing, array.n))
    if tuple(meas.pairs) != want:
        raise ValueError(
            f"measurement pairs {meas.pairs} do not match spec pairing {want}")
    return want


def nll_points(points: np.ndarray, meas: MeasurementSet, array: AnchorArray,
               spec: LikelihoodSpec, sigma_theta_scale: float = 1.0,
               sigma_t_scale: float = 1.0) -> np.ndarray:
    """Negative log-likelihood score at each point, vectorized: (M,).

    The scale factors temporarily widen the effective sigmas; the particle
    filter uses them to anneal the measurement sharpness after a cold start.
    """
    pairs = _check_pairs(meas, array, spec)
    tdoa_hat, pdoa_hat = expected_maps(points, pairs, array, spec.use_calibration)
    out = np.zeros(tdoa_hat.shape[1])
    if spec.modality in ("fused", "tdoa"):
        rt = (meas.tdoa[:, None] - tdoa_hat) / (spec.sigma_t * sigma_t_scale)
        out += np.einsum("km,km->m", rt, rt)
    if spec.modality in ("fused", "pdoa"):
        sig = spec.sigma_theta * sigma_theta_scale
        rp = wrap_angle(meas.pdoa[:, None] - pdoa_hat) / sig
        out += np.einsum("km,km->m", rp, rp)
    return out


def neg_log_likelihood(p: Position, meas: MeasurementSet, array: AnchorArray,
                       spec: LikelihoodSpec) -> float:
    """Variance-weighted squared error of one candidate position (lower is better)."""
    return float(nll_points(p.as_array()[None, :], meas, array, spec)[0])


def grid_search_locate(meas: MeasurementSet, array: AnchorArray, env: Environment,
                       resolution: float, spec: LikelihoodSpec,
                       chunk: int = 200_000) -> Position:
    """Exhaustive minimization over the environment grid.

    Ties break deterministically to the lowest row-major index. This is the
    reference localizer; cost grows with 1/resolution^2.
    """
    pts = eval_grid(env, resolution)
    best_idx, best_val = 0, np.inf
    for lo in range(0, pts.shape[0], chunk):
        scores = nll_points(pts[lo:lo + chunk], meas, array, spec)
        k = int(np.argmin(scores))
        if scores[k] < best_val:
            best_val = float(scores[k])
            best_idx = lo + k
    return Position(pts[best_idx, 0], pts[best_idx, 1])


# ---------------------------------------------------------------------------
# fast coarse-to-fine localizer (single-packet, batched over measurement rows)
# ---------------------------------------------------------------------------

def _residual_jacobian_factory(tdoa_meas, pdoa_meas, pairs, array: AnchorArray,
                               spec: LikelihoodSpec, sigma_theta_scale: float = 1.0):
    """Build r/J callback for lm_minimize over (B, 2) positions.

    tdoa_meas/pdoa_meas are (B, K); rows follow the batch of positions.
    """
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    alpha, beta, gamma = _calib_arrays(array, spec.use_calibration)
    lam = array.wavelength
    sig_t = spec.sigma_t
    sig_p = spec.sigma_theta * sigma_theta_scale
    anchors = array.positions
    use_tdoa = spec.modality in ("fused", "tdoa")
    use_pdoa = spec.modality in ("fused", "pdoa")

    def fn(p):
        diff = p[:, None, :] - anchors[None, :, :]        # (B, N, 2)
        d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1e-9)
        u = diff / d[..., None]                            # (B, N, 2)
        parts_r, parts_j = [], []
        if use_tdoa:
            t_hat = (d[:, ii] - d[:, jj]) / SPEED_OF_LIGHT
            parts_r.append((t_hat - tdoa_meas) / sig_t)
            parts_j.append((u[:, ii, :] - u[:, jj, :]) / (SPEED_OF_LIGHT * sig_t))
        if use_pdoa:
            phase = TWO_PI * d / lam - (alpha[None, :] + beta[None, :]
                                        * np.power(d, gamma[None, :]))
            # d(phase)/dd per anchor, then chain through the unit vectors
            dphase = TWO_PI / lam - beta[None, :] * gamma[None, :] \
                * np.power(d, gamma[None, :] - 1.0)
            p_hat = phase[:, ii] - phase[:, jj]
            parts_r.append(wrap_angle(p_hat - pdoa_meas) / sig_p)
            parts_j.append((dphase[:, ii, None] * u[:, ii, :]
                            - dphase[:, jj, None] * u[:, jj, :]) / sig_p)
        return np.concatenate(parts_r, axis=1), np.concatenate(parts_j, axis=1)

    return fn


def _coarse_map_argmin(tdoa_meas, pdoa_meas, pairs, array, env, spec,
                       resolution, modality=None, top_k: int = 1,
                       min_separation: float = 0.05):
    """Lowest-score grid points per measurement row on a shared coarse grid."""
    pts = eval_grid(env, resolution)
    tdoa_hat, pdoa_hat = expected_maps(pts, pairs, array, spec.use_calibration)
    mode = modality or spec.modality
    B = tdoa_meas.shape[0] if tdoa_meas is not None else pdoa_meas.shape[0]
    scores = np.zeros((B, pts.shape[0]))
    if mode in ("fused", "tdoa"):
        for k in range(len(pairs)):
            rt = (tdoa_meas[:, k, None] - tdoa_hat[None, k, :]) / spec.sigma_t
            scores += rt * rt
    if mode in ("fused", "pdoa"):
        for k in range(len(pairs)):
            rp = wrap_angle(pdoa_meas[:, k, None] - pdoa_hat[None, k, :]) \
                / spec.sigma_theta
            scores += rp * rp
    if top_k == 1:
        return pts[np.argmin(scores, axis=1)][:, None, :]
    # greedy top-k with spatial suppression
    picks = np.empty((B, top_k, 2))
    work = scores.copy()
    for k in range(top_k):
        idx = np.argmin(work, axis=1)
        picks[:, k, :] = pts[idx]
        d2 = (pts[None, :, 0] - picks[:, k, 0][:, None]) ** 2 \
            + (pts[None, :, 1] - picks[:, k, 1][:, None]) ** 2
        work[d2 < min_separation ** 2] = np.inf
    return picks


def _pull_into_env(pos: np.ndarray, origin: np.ndarray, env: Environment):
    """Pull out-of-room points back toward `origin` until just inside the box."""
    out = ((pos[:, 0] < 0.0) | (pos[:, 0] > env.width)
           | (pos[:, 1] < 0.0) | (pos[:, 1] > env.height))
    if not out.any():
        return pos
    pos = pos.copy()
    d = pos[out] - origin[out] if origin.ndim == 2 else pos[out] - origin
    o = origin[out] if origin.ndim == 2 else np.broadcast_to(origin, pos[out].shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(d[:, 0] > 0, (env.width - o[:, 0]) / d[:, 0],
                      np.where(d[:, 0] < 0, -o[:, 0] / d[:, 0], np.inf))
        ty = np.where(d[:, 1] > 0, (env.height - o[:, 1]) / d[:, 1],
                      np.where(d[:, 1] < 0, -o[:, 1] / d[:, 1], np.inf))
    t = np.clip(np.minimum(tx, ty), 0.0, 1.0) * 0.98
    pos[out] = o + t[:, None] * d
    return pos


def _scan_candidates(fix0, t_in, p_in, pairs, array, env, spec,
                     n_rows=31, n_cols=161, n_select=4, n_sigma=4.0):
    """Fringe candidates from a Fisher-shaped local scan around each fix.

    The time-difference Jacobian at the fix gives the local confidence
    ellipse; the scan grid aligns with its axes, coarse along the weak
    (range-like) direction and fine along the strong (cross-range) one where
    the phase fringes alternate. The best `n_select` scan points, separated
    across fringes, come back as (B, n_select, 2) refinement candidates.
    """
    B = fix0.shape[0]
    center = np.tile(array.center().as_array(), (B, 1))
    fix0 = _pull_into_env(fix0, center, env)

    fn_t = _residual_jacobian_factory(t_in, p_in, pairs, array,
                                      LikelihoodSpec(spec.sigma_t, spec.sigma_theta,
                                                     spec.pairing,
                                                     spec.use_calibration, "tdoa"))
    _, J = fn_t(fix0)
    a11 = np.einsum("bm,bm->b", J[..., 0], J[..., 0])
    a12 = np.einsum("bm,bm->b", J[..., 0], J[..., 1])
    a22 = np.einsum("bm,bm->b", J[..., 1], J[..., 1])
    # eigen-decomposition of the 2x2 information matrix
    tr, dt = a11 + a22, a11 * a22 - a12 * a12
    disc = np.sqrt(np.maximum(tr * tr / 4.0 - dt, 0.0))
    lam_big = tr / 2.0 + disc
    lam_small = np.maximum(tr / 2.0 - disc, 1e-12)
    # eigvec of lam_big = strong (cross-range) direction; the a12 ~ 0 branch
    # handles diagonal information matrices on either axis
    vx = np.where(np.abs(a12) > 1e-12, a12, lam_big - a22)
    vy = lam_big - a11
    norm = np.maximum(np.hypot(vx, vy), 1e-12)
    strong = np.stack([vx / norm, vy / norm], axis=-1)
    degenerate = norm < 1e-9
    if degenerate.any():
        strong[degenerate] = np.array([1.0, 0.0])
    weak = np.stack([-strong[:, 1], strong[:, 0]], axis=-1)
    sig_strong = np.clip(1.0 / np.sqrt(lam_big), 0.02, 0.30)
    sig_weak = np.clip(1.0 / np.sqrt(lam_small), 0.075, 0.55)

    rho = np.linspace(-n_sigma, n_sigma, n_rows)   # weak-direction sigma multiples
    tau = np.linspace(-n_sigma, n_sigma, n_cols)   # strong-direction multiples
    off_w = rho[None, :, None] * sig_weak[:, None, None]      # (B, R, 1)
    off_s = tau[None, None, :] * sig_strong[:, None, None]    # (B, 1, C)
    px = (fix0[:, 0, None, None] + off_w * weak[:, 0, None, None]
          + off_s * strong[:, 0, None, None]).astype(np.float32)  # (B, R, C)
    py = (fix0[:, 1, None, None] + off_w * weak[:, 1, None, None]
          + off_s * strong[:, 1, None, None]).astype(np.float32)

    # float32 hot loop: per-anchor distances, then per-pair scoring
    anchors = array.positions.astype(np.float32)
    alpha, beta, gamma = _calib_arrays(array, spec.use_calibration)
    biased = bool(np.any(alpha != 0.0) or np.any(beta != 0.0))
    d = np.empty(px.shape + (array.n,), dtype=np.float32)
    for a in range(array.n):
        d[..., a] = np.sqrt((px - anchors[a, 0]) ** 2 + (py - anchors[a, 1]) ** 2)
    inv_c = np.float32(1.0 / SPEED_OF_LIGHT)
    inv_st = np.float32(1.0 / spec.sigma_t)
    inv_sp = np.float32(1.0 / spec.sigma_theta)
    k_phase = np.float32(TWO_PI / array.wavelength)
    inv_2pi = np.float32(1.0 / TWO_PI)
    two_pi = np.float32(TWO_PI)
    score = np.zeros(px.shape, dtype=np.float32)
    for k, (i, j) in enumerate(pairs):
        dd = d[..., i] - d[..., j]
        rt = (dd * inv_c - t_in[:, k, None, None].astype(np.float32)) * inv_st
        score += rt * rt
        rp = dd * k_phase - p_in[:, k, None, None].astype(np.float32)
        if biased:
            rp -= (alpha[i] - alpha[j]
                   + beta[i] * np.power(d[..., i], gamma[i])
                   - beta[j] * np.power(d[..., j], gamma[j])).astype(np.float32)
        rp -= np.rint(rp * inv_2pi) * two_pi
        rp *= inv_sp
        score += rp * rp
    outside = ((px < 0.0) | (px > env.width) | (py < 0.0) | (py > env.height))
    score[outside] = np.inf
    pts = np.stack([px, py], axis=-1)

    # greedy top-n with cross-range suppression so picks span distinct fringes
    aperture = np.max(np.hypot(
        *(array.positions[:, None, :] - array.positions[None, :, :])
        .transpose(2, 0, 1)))
    rng_dist = np.maximum(np.hypot(*(fix0 - center).T), 0.3)
    fringe = array.wavelength * rng_dist / aperture
    col_step = np.maximum(sig_strong * 8.0 / (n_cols - 1), 1e-6)
    sup = np.clip((0.35 * fringe / col_step).astype(int), 2, n_cols // 3)
    flat = score.reshape(B, -1)
    cols_idx = np.arange(n_cols)
    cands = np.empty((B, n_select, 2))
    rowsel = np.arange(B)
    for m in range(n_select):
        idx = np.argmin(flat, axis=1)
        all_inf = ~np.isfinite(flat[rowsel, idx])
        cands[:, m, :] = pts.reshape(B, -1, 2)[rowsel, idx]
        cands[all_inf, m, :] = fix0[all_inf]
        if m + 1 < n_select:
            pick_col = idx % n_cols
            mask = np.abs(cols_idx[None, :] - pick_col[:, None]) <= sup[:, None]
            flat = np.where(np.broadcast_to(mask[:, None, :], score.shape)
                            .reshape(B, -1), np.float32(np.inf), flat)
    return cands


def _polish_and_pick(cands, t_in, p_in, pairs, array, env, spec):
    """LM-polish every candidate and keep the best in-room result per row."""
    B, n_c = cands.shape[0], cands.shape[1]
    flat = cands.reshape(-1, 2)
    t_rep = np.repeat(t_in, n_c, axis=0)
    p_rep = np.repeat(p_in, n_c, axis=0)
    fn = _residual_jacobian_factory(t_rep, p_rep, pairs, array, spec)
    box = ((-0.25, -0.25), (env.width + 0.25, env.height + 0.25))
    refined, cost, _ = lm_minimize(fn, flat, max_iter=25, bounds=box)
    refined = refined.reshape(B, n_c, 2)
    cost = cost.reshape(B, n_c)
    # out-of-room refinements lose to any in-room candidate
    inside = ((refined[..., 0] >= -1e-9) & (refined[..., 0] <= env.width + 1e-9)
              & (refined[..., 1] >= -1e-9) & (refined[..., 1] <= env.height + 1e-9))
    cost = np.where(inside, cost, cost + 1e12)
    best = np.argmin(cost, axis=1)
    out = refined[np.arange(B), best]
    out[:, 0] = np.clip(out[:, 0], 0.0, env.width)
    out[:, 1] = np.clip(out[:, 1], 0.0, env.height)
    return out, cost[np.arange(B), best]


def locate_joint_batch(tdoa_meas, pdoa_meas, array: AnchorArray, env: Environment,
                       spec: LikelihoodSpec, pairs=None, n_select: int = 4):
    """Batched fast localizer for (B, K) measurement rows.

    Fused/TDoA modes seed from a coarse time-difference search; for fused
    scoring a confidence-shaped local scan (fine across-range, coarse
    along-range) nominates candidates on the few plausible phase fringes,
    damped Gauss-Newton polishes each, and the best in-room polish wins.
    Rows whose best score still fails a chi-square plausibility gate get one
    wider rescan (the time-difference error occasionally outruns its local
    confidence ellipse). PDoA-only mode falls back to a fine full-room search
    with several refined candidates, which deliberately retains the phase
    ambiguity. Returns positions (B, 2) and final scores (B,).
    """
    if pairs is None:
        pairs = resolve_pairs(spec.pairing, array.n)
    B = (tdoa_meas if tdoa_meas is not None else pdoa_meas).shape[0]
    K = len(pairs)
    zeros = np.zeros((B, K))
    t_in = tdoa_meas if tdoa_meas is not None else zeros
    p_in = pdoa_meas if pdoa_meas is not None else zeros

    if spec.modality == "pdoa":
        cands = _coarse_map_argmin(None, p_in, pairs, array, env, spec,
                                   resolution=0.01, modality="pdoa", top_k=6)
        return _polish_and_pick(cands, t_in, p_in, pairs, array, env, spec)

    seed_res = max(min(env.width, env.height) / 40.0, 0.02)
    seeds = _coarse_map_argmin(t_in, None, pairs, array, env, spec,
                               resolution=seed_res, modality="tdoa")[:, 0, :]
    fn_t = _residual_jacobian_factory(t_in, p_in, pairs, array,
                                      LikelihoodSpec(spec.sigma_t, spec.sigma_theta,
                                                     spec.pairing,
                                                     spec.use_calibration, "tdoa"))
    box = ((-0.5, -0.5), (env.width + 0.5, env.height + 0.5))
    fix0, _, _ = lm_minimize(fn_t, seeds, max_iter=40, bounds=box)
    if spec.modality == "tdoa":
        return _polish_and_pick(fix0[:, None, :], t_in, p_in, pairs, array, env, spec)

    cands = _scan_candidates(fix0, t_in, p_in, pairs, array, env, spec,
                             n_select=n_select)
    out, cost = _polish_and_pick(cands, t_in, p_in, pairs, array, env, spec)

    # implausible fits (the time-difference fix outran its confidence ellipse)
    # fall back to a full-room coarse search; the gate is relative to the
    # batch's own cost scale so that mis-stated sigmas do not retry everything
    gate = stats.chi2.ppf(0.999, df=2 * K)
    if B >= 20:
        gate = max(gate, 4.0 * float(np.median(cost)))
    retry = cost > gate
    if retry.any():
        rows = np.where(retry)[0]
        cands_r = _coarse_map_argmin(t_in[rows], p_in[rows], pairs, array, env,
                                     spec, resolution=0.015, modality="fused",
                                     top_k=8, min_separation=0.04)
        out_r, cost_r = _polish_and_pick(cands_r, t_in[rows], p_in[rows], pairs,
                                         array, env, spec)
        improved = cost_r < cost[rows]
        out[rows[improved]] = out_r[improved]
        cost[rows[improved]] = cost_r[improved]
    return out, cost


def locate_joint(meas: MeasurementSet, array: AnchorArray, env: Environment,
                 spec: LikelihoodSpec) -> Position:
    """Single-packet fast localizer; coarse-to-fine equivalent of the grid search."""
    _check_pairs(meas, array, spec)
    pos, _ = locate_joint_batch(meas.tdoa[None, :], meas.pdoa[None, :], array, env,
                                spec, pairs=list(meas.pairs))
    return Position(pos[0, 0], pos[0, 1])


# ---------------------------------------------------------------------------
# adaptive particle filter
# ---------------------------------------------------------------------------

@dataclass
class ParticleFilter:
    """Weighted particle population with adaptive size.

    The measurement sharpness is annealed over the first few updates after
    (re)initialization: the tempered phase likelihood lets the cloud contract
    through the coarse time-difference basin before the razor-thin phase
    fringes take over. The particle count shrinks with the weighted spread of
    the cloud, never below min_count nor above the initial count.
    """

    particles: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator
    env: Environment
    density_init: float
    min_count: int = 100
    max_count: int = 0
    process_noise: float = 0.008     # random-walk std per update, meters
    spread_per_count: float = 0.0    # particles per meter of spread
    anneal_start: float = 12.0
    anneal_decay: float = 0.5
    updates_since_init: int = 0
    estimate: Optional[Position] = None
    confidence: float = 0.0          # weighted spread, meters (smaller = tighter)
    gate_fails: int = 0
    reinit_count: int = 0
    last_min_nll: float = math.inf

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    def spread(self) -> float:
        mean = np.average(self.particles, weights=self.weights, axis=0)
        var = np.average((self.particles - mean) ** 2, weights=self.weights, axis=0)
        return math.sqrt(float(var.sum()))


def pf_init(env: Environment, density: float, rng: np.random.Generator,
            process_noise: float = 0.008, min_count: int = 100,
            anneal_start: float = 12.0) -> ParticleFilter:
    """Uniform particles over the environment at `density` per square meter."""
    if density <= 0:
        raise ValueError("density must be positive")
    n = max(int(round(density * env.area)), 1)
    particles = np.column_stack([rng.uniform(0.0, env.width, n),
                                 rng.uniform(0.0, env.height, n)])
    weights = np.full(n, 1.0 / n)
    spread_uniform = math.sqrt((env.width ** 2 + env.height ** 2) / 12.0)
    pf = ParticleFilter(particles=particles, weights=weights, rng=rng, env=env,
                        density_init=density, min_count=min(min_count, n),
                        max_count=n, process_noise=process_noise,
                        spread_per_count=n / spread_uniform,
                        anneal_start=anneal_start)
    mean = particles.mean(axis=0)
    pf.estimate = Position(mean[0], mean[1])
    pf.confidence = pf.spread()
    return pf


def _reinit_uniform(pf: ParticleFilter) -> None:
    n = pf.max_count
    pf.particles = np.column_stack([pf.rng.uniform(0.0, pf.env.width, n),
                                    pf.rng.uniform(0.0, pf.env.height, n)])
    pf.weights = np.full(n, 1.0 / n)
    pf.updates_since_init = 0
    pf.gate_fails = 0
    pf.reinit_count += 1


def _systematic_resample(pf: ParticleFilter, target: int) -> None:
    positions = (pf.rng.uniform() + np.arange(target)) / target
    cum = np.cumsum(pf.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, positions)
    pf.particles = pf.particles[idx]
    pf.weights = np.full(target, 1.0 / target)


def _adapt_target(pf: ParticleFilter) -> int:
    target = int(round(pf.spread_per_count * pf.spread()))
    return int(np.clip(target, pf.min_count, pf.max_count))


def pf_adapt(pf: ParticleFilter) -> ParticleFilter:
    """Resample the population to the spread-scaled target count."""
    target = _adapt_target(pf)
    if target != pf.n:
        _systematic_resample(pf, target)
    return pf


def pf_update(pf: ParticleFilter, meas: MeasurementSet, array: AnchorArray,
              spec: LikelihoodSpec) -> tuple:
    """One predict / weight / resample cycle; returns (pf, estimate)."""
    n_meas = len(meas.pairs) * spec.n_terms_per_pair

    # predict: zero-mean random walk
    pf.particles = pf.particles + pf.rng.normal(0.0, pf.process_noise,
                                                pf.particles.shape)

    # annealed sharpness after (re)initialization; the phase term anneals
    # fully while the time term anneals by its square root so it can steer
    # the cloud between fringes before the phases lock in
    temper = max(1.0, pf.anneal_start * pf.anneal_decay ** pf.updates_since_init)
    nll = nll_points(pf.particles, meas, array, spec, sigma_theta_scale=temper,
                     sigma_t_scale=math.sqrt(temper))
    pf.last_min_nll = float(nll.min())

    with np.errstate(invalid="ignore", divide="ignore"):
        logw = np.log(pf.weights) - 0.5 * nll
        logw -= logw.max()
        w = np.exp(logw)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        # total weight underflow: recover instead of failing
        _reinit_uniform(pf)
        nll = nll_points(pf.particles, meas, array, spec,
                         sigma_theta_scale=pf.anneal_start,
                         sigma_t_scale=math.sqrt(pf.anneal_start))
        finite = np.isfinite(nll)
        if finite.any():
            w = np.where(finite, np.exp(-0.5 * (nll - nll[finite].min())), 0.0)
            total = w.sum()
        else:
            # unusable packet: keep the uniform re-initialization
            w = np.ones(pf.n)
            total = float(pf.n)
    pf.weights = w / total

    mean = np.average(pf.particles, weights=pf.weights, axis=0)
    pf.estimate = Position(mean[0], mean[1])
    pf.confidence = pf.spread()

    ess = 1.0 / float(np.sum(pf.weights ** 2))
    if ess < pf.n / 2.0:
        _systematic_resample(pf, _adapt_target(pf))

    # divergence guard: consistent misfit after annealing triggers a restart
    if temper <= 1.0:
        gate = stats.chi2.ppf(0.999, df=n_meas)
        if pf.last_min_nll > gate:
            pf.gate_fails += 1
        else:
            pf.gate_fails = 0
        if pf.gate_fails >= 5:
            _reinit_uniform(pf)

    pf.updates_since_init += 1
    return pf, pf.estimate
