import math

import numpy as np
import pytest

from svloc.estimator import (LikelihoodSpec, grid_search_locate, locate_joint,
                             locate_joint_batch, neg_log_likelihood, nll_points,
                             pf_adapt, pf_init, pf_update)
from svloc.geometry import Environment, Position, make_ula
from svloc.measurement import NoiseModel, sample_measurements

DEG = math.pi / 180.0
ENV = Environment()
ARR = make_ula(6, 1.0, Position(1.5, 0.0))
SPEC = LikelihoodSpec(150e-12, 5.0 * DEG)
NOISE = NoiseModel(sigma_t=150e-12, sigma_theta=5.0 * DEG)


def clean_measurement(p, array=ARR, pairing="reference"):
    return sample_measurements(p, array, pairing, NoiseModel(),
                               np.random.default_rng(0))


class TestNegLogLikelihood:
    def test_zero_at_truth_noiseless(self):
        p = Position(1.1, 2.2)
        m = clean_measurement(p)
        assert neg_log_likelihood(p, m, ARR, SPEC) == pytest.approx(0.0, abs=1e-12)

    def test_truth_is_global_minimum_on_grid(self):
        p = Position(1.05, 2.15)
        m = clean_measurement(p)
        from svloc.geometry import eval_grid
        scores = nll_points(eval_grid(ENV, 0.05), m, ARR, SPEC)
        assert neg_log_likelihood(p, m, ARR, SPEC) <= scores.min() + 1e-9

    def test_mismatched_pairs_rejected(self):
        p = Position(1.0, 1.0)
        m = clean_measurement(p, pairing="all")
        with pytest.raises(ValueError):
            neg_log_likelihood(p, m, ARR, SPEC)

    def test_pdoa_only_two_anchor_ambiguity(self):
        # a 2-anchor array scores phase-only: several near-zero minima appear
        arr2 = make_ula(2, 1.0, Position(1.5, 0.0))
        m = clean_measurement(Position(1.5, 1.5), arr2)
        spec = LikelihoodSpec(150e-12, 5.0 * DEG, modality="pdoa")
        from svloc.geometry import eval_grid, grid_shape
        import scipy.ndimage as ndi
        s = nll_points(eval_grid(ENV, 0.01), m, arr2, spec)
        s = s.reshape(grid_shape(ENV, 0.01))
        mins = (s == ndi.minimum_filter(s, size=5)) & (s < 1.0)
        ys, xs = np.nonzero(mins)
        # count minima separated by > 10 cm
        picked = []
        for y, x in zip(ys, xs):
            if all(math.hypot(x - q[1], y - q[0]) >= 10 for q in picked):
                picked.append((y, x))
        assert len(picked) >= 2


class TestGridSearch:
    def test_on_node_exact(self):
        p = Position(1.525, 2.025)   # a 5 cm grid cell center
        m = clean_measurement(p)
        est = grid_search_locate(m, ARR, ENV, 0.05, SPEC)
        assert est.x == pytest.approx(p.x) and est.y == pytest.approx(p.y)

    def test_off_grid_within_cell_geometry(self):
        # fine grid: nearest nodes carry negligible phase mismatch
        p = Position(1.5031, 2.0017)
        m = clean_measurement(p)
        est = grid_search_locate(m, ARR, ENV, 0.002, SPEC)
        assert est.distance_to(p) <= 0.002 * math.sqrt(2) / 2 + 1e-9

    def test_pinned_regression(self):
        # recorded from the first audited run of this fixed-seed scenario
        rng = np.random.default_rng(2024)
        truth = Position(1.5, 2.0)
        m = sample_measurements(truth, ARR, "reference", NOISE, rng)
        est = grid_search_locate(m, ARR, ENV, 0.01, SPEC)
        assert est.x == pytest.approx(1.505, abs=1e-9)
        assert est.y == pytest.approx(2.015, abs=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        m = sample_measurements(Position(2.0, 1.0), ARR, "reference", NOISE, rng)
        e1 = grid_search_locate(m, ARR, ENV, 0.03, SPEC)
        e2 = grid_search_locate(m, ARR, ENV, 0.03, SPEC)
        assert (e1.x, e1.y) == (e2.x, e2.y)


class TestLocateJoint:
    def test_matches_exhaustive_fine_grid(self):
        # coarse-to-fine localizer reproduces the exhaustive result
        rng = np.random.default_rng(11)
        agree = 0
        for k in range(12):
            truth = Position(rng.uniform(0.4, 2.6), rng.uniform(0.6, 2.8))
            m = sample_measurements(truth, ARR, "reference", NOISE, rng,
                                    noise_origin="anchor")
            fast = locate_joint(m, ARR, ENV, SPEC)
            ref = grid_search_locate(m, ARR, ENV, 0.002, SPEC)
            if fast.distance_to(ref) < 0.004:
                agree += 1
        assert agree >= 10

    def test_noiseless_recovers_truth(self):
        p = Position(0.9, 1.7)
        m = clean_measurement(p)
        est = locate_joint(m, ARR, ENV, SPEC)
        assert est.distance_to(p) < 1e-5

    def test_modalities(self):
        p = Position(1.2, 2.0)
        m = clean_measurement(p)
        for modality in ("tdoa", "pdoa"):
            spec = LikelihoodSpec(150e-12, 5.0 * DEG, modality=modality)
            est = locate_joint(m, ARR, ENV, spec)
            assert est.distance_to(p) < 0.05  # noiseless: both modalities land


class TestParticleFilter:
    def test_init_count_and_weights(self):
        pf = pf_init(ENV, 500.0, np.random.default_rng(0))
        assert pf.n == 4500
        assert np.allclose(pf.weights, 1.0 / 4500)
        assert pf.particles[:, 0].min() >= 0 and pf.particles[:, 0].max() <= 3

    def test_single_particle(self):
        pf = pf_init(Environment(1.0, 1.0), 1.0, np.random.default_rng(0))
        assert pf.n == 1 and pf.weights[0] == 1.0

    def test_init_deterministic(self):
        a = pf_init(ENV, 500.0, np.random.default_rng(3))
        b = pf_init(ENV, 500.0, np.random.default_rng(3))
        assert np.array_equal(a.particles, b.particles)

    def test_weights_normalized_every_update(self):
        rng = np.random.default_rng(5)
        truth = Position(1.4, 1.9)
        pf = pf_init(ENV, 500.0, rng)
        for _ in range(8):
            m = sample_measurements(truth, ARR, "reference", NOISE, rng,
                                    noise_origin="anchor")
            pf, _ = pf_update(pf, m, ARR, SPEC)
            assert abs(pf.weights.sum() - 1.0) < 1e-9
            assert pf.min_count <= pf.n <= pf.max_count

    def test_noiseless_convergence_fixed_point(self):
        rng = np.random.default_rng(6)
        truth = Position(1.6, 2.1)
        m = clean_measurement(truth)
        pf = pf_init(ENV, 500.0, rng)
        errs = []
        for _ in range(10):
            pf, est = pf_update(pf, m, ARR, SPEC)
            errs.append(est.distance_to(truth))
        assert errs[-1] < 0.01 and errs[-2] < 0.01

    def test_estimate_trajectory_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            truth = Position(1.0, 2.0)
            pf = pf_init(ENV, 500.0, rng)
            out = []
            for _ in range(6):
                m = sample_measurements(truth, ARR, "reference", NOISE, rng,
                                        noise_origin="anchor")
                pf, est = pf_update(pf, m, ARR, SPEC)
                out.append((est.x, est.y))
            return out

        assert run() == run()

    def test_underflow_recovery(self):
        # a non-finite packet zeroes every weight; the filter re-initializes
        # uniformly instead of failing (log-space weighting already shields
        # merely-tiny likelihoods from underflow)
        rng = np.random.default_rng(10)
        truth = Position(1.5, 1.5)
        m = sample_measurements(truth, ARR, "reference", NOISE, rng)
        object.__setattr__(m, "tdoa", np.full_like(m.tdoa, np.inf))
        pf = pf_init(ENV, 500.0, rng)
        pf, est = pf_update(pf, m, ARR, SPEC)
        assert np.isfinite(pf.weights).all()
        assert abs(pf.weights.sum() - 1.0) < 1e-9
        assert pf.reinit_count >= 1

    def test_convergence_within_five_updates(self):
        # cold start lands near the grid answer within five packets
        rng = np.random.default_rng(12)
        truth = Position(1.3, 1.8)
        pf = pf_init(ENV, 500.0, rng)
        for _ in range(5):
            m = sample_measurements(truth, ARR, "reference", NOISE, rng,
                                    noise_origin="anchor")
            pf, est = pf_update(pf, m, ARR, SPEC)
        ref = grid_search_locate(m, ARR, ENV, 0.01, SPEC)
        assert est.distance_to(ref) < 2 * max(ref.distance_to(truth), 0.02)

    def test_variance_shrinks_in_trend(self):
        rng = np.random.default_rng(13)
        truth = Position(1.5, 2.0)
        pf = pf_init(ENV, 500.0, rng)
        spreads = []
        for _ in range(20):
            m = sample_measurements(truth, ARR, "reference", NOISE, rng,
                                    noise_origin="anchor")
            pf, _ = pf_update(pf, m, ARR, SPEC)
            spreads.append(pf.confidence)
        early = np.mean(spreads[:5])
        late = np.mean(spreads[-5:])
        assert late < early / 5


class TestPfAdapt:
    def test_tight_cluster_drops_to_min(self):
        pf = pf_init(ENV, 500.0, np.random.default_rng(0))
        pf.particles = np.tile([1.5, 1.5], (pf.n, 1)) \
            + np.random.default_rng(1).normal(0, 0.005, (pf.n, 2))
        pf.weights = np.full(pf.n, 1.0 / pf.n)
        pf_adapt(pf)
        assert pf.n == pf.min_count

    def test_uniform_cloud_keeps_initial(self):
        pf = pf_init(ENV, 500.0, np.random.default_rng(2))
        n0 = pf.n
        pf_adapt(pf)
        assert pf.n == n0

    def test_target_monotone_in_spread(self):
        from svloc.estimator import _adapt_target
        pf = pf_init(ENV, 500.0, np.random.default_rng(3))
        rng = np.random.default_rng(4)
        targets = []
        for scale in (0.003, 0.03, 0.2, 0.8):
            pf.particles = np.tile([1.5, 1.5], (pf.max_count, 1)) \
                + rng.normal(0, scale, (pf.max_count, 2))
            pf.weights = np.full(pf.max_count, 1.0 / pf.max_count)
            targets.append(_adapt_target(pf))
        assert all(a <= b for a, b in zip(targets, targets[1:]))
