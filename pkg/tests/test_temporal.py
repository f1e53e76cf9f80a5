import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import rotation_about
from fieldreg.association import Detection
from fieldreg.geometry import Correspondences, Intrinsics, Pose, look_at, project
from fieldreg.metrics import angular_error, reprojection_error_normalized
from fieldreg.simulator import NoiseModel, TrajectoryConfig, simulate
from fieldreg.temporal import (
    COASTING,
    REGISTERED,
    UNREGISTERED,
    FilterConfig,
    FilterState,
    PipelineConfig,
    SequenceRegistrar,
    compute_weights,
    estimate_pose,
    initialize_particles,
    log_particle_weight,
    maybe_reinitialize,
    particle_weight,
    perturb,
    resample,
    smooth_intrinsics,
)

K = Intrinsics(1500.0, 1920, 1080)
BASE = look_at((14.0, -15.0, 12.0), (14.0, 7.5, 0.0))


def state_from(poses, weights=None, **cfg):
    st_ = FilterState(FilterConfig(**cfg))
    st_.quats = np.array([p.quaternion for p in poses])
    st_.trans = np.array([p.t for p in poses])
    n = len(poses)
    st_.weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return st_


class TestResample:
    def test_single_weight(self):
        poses = [Pose.from_rotvec([0, 0, 0.1 * i], [i, 0, 10]) for i in range(5)]
        s = resample(state_from(poses, [0, 0, 1, 0, 0]))
        assert np.all(s.trans == poses[2].t)
        assert np.allclose(s.weights, 0.2)

    def test_uniform_weights(self):
        poses = [Pose.from_rotvec([0, 0, 0], [i, 0, 10]) for i in range(50)]
        s = resample(state_from(poses), np.random.default_rng(0))
        counts = np.bincount(s.trans[:, 0].astype(int), minlength=50)
        assert counts.min() >= 0 and counts.max() <= 2

    def test_multiplicities_match_expectation(self):
        n = 1000
        w = np.zeros(n)
        w[:3] = [0.5, 0.3, 0.2]
        poses = [Pose.from_rotvec([0, 0, 0], [i, 0, 10]) for i in range(n)]
        for seed in range(100):
            s = resample(state_from(poses, w), np.random.default_rng(seed))
            counts = np.bincount(s.trans[:, 0].astype(int), minlength=3)[:3]
            expected = n * np.array([0.5, 0.3, 0.2])
            sigma = np.sqrt(n * np.array([0.5, 0.3, 0.2]) * np.array([0.5, 0.7, 0.8]))
            assert np.all(np.abs(counts - expected) <= 3 * sigma)


class TestPerturb:
    def test_zero_noise(self):
        s = state_from([BASE] * 10, rotation_std_deg=(0, 0, 0), translation_std_m=(0, 0, 0))
        q, t = s.quats.copy(), s.trans.copy()
        perturb(s)
        np.testing.assert_allclose(s.quats, q, atol=1e-15)
        np.testing.assert_array_equal(s.trans, t)

    def test_translation_covariance(self):
        std = (0.1, 0.2, 0.05)
        s = state_from([BASE] * 100_000, rotation_std_deg=(0, 0, 0), translation_std_m=std)
        perturb(s, np.random.default_rng(1))
        cov = np.cov(s.trans.T)
        np.testing.assert_allclose(np.diag(cov), np.square(std), rtol=0.05)
        assert np.all(np.abs(cov - np.diag(np.diag(cov))) < 0.05 * min(std) ** 2)

    def test_unit_quaternions(self):
        s = state_from([BASE] * 100, rotation_std_deg=(5, 5, 5))
        perturb(s)
        np.testing.assert_allclose(np.linalg.norm(s.quats, axis=1), 1.0, atol=1e-12)


class TestWeights:
    def test_zero_error(self):
        assert particle_weight(0.0, 0.0) == 1.0

    def test_spot_value(self):
        assert abs(particle_weight(2.0, np.inf, 2.0, 2.0, 1.0) - np.exp(-0.5)) < 1e-12

    def test_ratio(self):
        assert particle_weight(0.5, np.inf, alpha=1.0) / particle_weight(50.0, np.inf, alpha=1.0) > 1e4

    def test_strictly_decreasing(self):
        # beyond about 10 px the semantic term drops below double precision next to the player term
        xs = np.linspace(0, 8, 400)
        for xp in (0.0, 1.0, 5.0):
            assert np.all(np.diff(particle_weight(xs, xp)) < 0)

    def test_semantic_log_weight_decreasing(self):
        xs = np.linspace(0, 500, 4000)
        assert np.all(np.diff(log_particle_weight(xs, np.inf, 2.0, 2.0, 1.0)) < 0)

    def test_normalized(self):
        rng = np.random.default_rng(2)
        world = np.column_stack([rng.uniform(0, 28, 10), rng.uniform(0, 15, 10)])
        corrs = Correspondences.from_arrays(world, project(K, BASE, world))
        s = state_from([BASE] * 300, rotation_std_deg=(1, 1, 1), translation_std_m=(0.2, 0.2, 0.2))
        perturb(s)
        players = np.column_stack([rng.uniform(0, 28, 5), rng.uniform(0, 15, 5)])
        compute_weights(s, K, corrs, project(K, BASE, players), players)
        assert np.all(s.weights >= 0)
        assert abs(s.weights.sum() - 1) < 1e-12

    def test_players_only(self):
        rng = np.random.default_rng(3)
        players = np.column_stack([rng.uniform(0, 28, 5), rng.uniform(0, 15, 5)])
        s = state_from([BASE, Pose(BASE.R, BASE.t + [1.0, 0, 0])])
        compute_weights(s, K, Correspondences.empty(), project(K, BASE, players), players)
        assert s.weights[0] > s.weights[1]


class TestEstimatePose:
    def test_identical(self):
        p = estimate_pose(state_from([BASE] * 7))
        np.testing.assert_allclose(p.R, BASE.R, atol=1e-12)
        np.testing.assert_allclose(p.t, BASE.t, atol=1e-12)

    def test_one_hot(self):
        other = Pose.from_rotvec([0.3, 0.2, 0.1], [1, 2, 3])
        p = estimate_pose(state_from([BASE, other], [1.0, 0.0]))
        np.testing.assert_allclose(p.R, BASE.R, atol=1e-12)
        np.testing.assert_array_equal(p.t, BASE.t)

    def test_symmetric_cloud(self):
        poses = [Pose(rotation_about([0, 0, 1], d) @ BASE.R, BASE.t) for d in (5.0, -5.0)]
        p = estimate_pose(state_from(poses))
        assert angular_error(p.R, BASE.R) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_and_sign_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 20
        poses = [Pose(Rotation.from_rotvec(rng.normal(0, 0.05, 3)).as_matrix() @ BASE.R, BASE.t + rng.normal(0, 0.3, 3)) for _ in range(n)]
        w = rng.random(n)
        a = estimate_pose(state_from(poses, w / w.sum()))
        perm = rng.permutation(n)
        s = state_from([poses[i] for i in perm], (w / w.sum())[perm])
        s.quats[rng.random(n) < 0.5] *= -1
        b = estimate_pose(s)
        assert angular_error(a.R, b.R) < 1e-9
        np.testing.assert_allclose(a.t, b.t, atol=1e-12)


class TestIntrinsicsSmoothing:
    def _run(self, values, window=30):
        s = FilterState(FilterConfig(window=window))
        for f in values:
            out = smooth_intrinsics(s, Intrinsics(f, 1920, 1080))
        return out.f

    def test_constant(self):
        assert self._run([1000.0] * 20) == 1000.0

    def test_outlier_rejected(self):
        assert self._run([1000.0] * 9 + [5000.0], window=10) == 1000.0

    def test_ramp(self):
        assert self._run(np.linspace(1000, 1100, 11), window=11) == pytest.approx(1050.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(4, 40), st.data())
    def test_robust_to_quarter_outliers(self, k, data):
        n_out = k // 4
        outliers = data.draw(st.lists(st.floats(1.0, 1e5), min_size=n_out, max_size=n_out))
        values = [1500.0] * (k - n_out) + outliers
        order = data.draw(st.permutations(range(k)))
        assert self._run([values[i] for i in order], window=k) == 1500.0

    def test_unbounded_window(self):
        s = FilterState(FilterConfig(window=None))
        for f in [1000.0] * 100 + [1200.0] * 60:
            smooth_intrinsics(s, Intrinsics(f, 1920, 1080))
        assert s.intrinsics.f == 1000.0

    def test_missing_estimate_reuses_history(self):
        s = FilterState(FilterConfig())
        smooth_intrinsics(s, Intrinsics(1234.0, 1920, 1080))
        assert smooth_intrinsics(s, None).f == 1234.0


class TestReinitialization:
    def _data(self, pose):
        rng = np.random.default_rng(4)
        world = np.column_stack([rng.uniform(0, 28, 12), rng.uniform(0, 15, 12)])
        return Correspondences.from_arrays(world, project(K, pose, world))

    def test_tie_keeps_particles(self):
        s = FilterState(FilterConfig())
        initialize_particles(s, BASE)
        q = s.quats.copy()
        assert not maybe_reinitialize(s, BASE, BASE, K, self._data(BASE))
        np.testing.assert_array_equal(s.quats, q)

    def test_stale_filter_reinitialized(self):
        moved = look_at((0.0, -15.0, 12.0), (10.0, 7.5, 0.0))
        s = FilterState(FilterConfig())
        initialize_particles(s, BASE)
        assert maybe_reinitialize(s, moved, BASE, K, self._data(moved))
        assert angular_error(estimate_pose(s).R, moved.R) < 1.0

    def test_tracking_filter_kept(self):
        rng = np.random.default_rng(5)
        data = self._data(BASE)
        noisy = Pose(rotation_about([1, 1, 0], 0.5) @ BASE.R, BASE.t + rng.normal(0, 0.2, 3))
        s = FilterState(FilterConfig())
        initialize_particles(s, BASE)
        assert not maybe_reinitialize(s, noisy, BASE, K, data)


def _frames(truth, dets):
    return [(d, fr.players) for d, fr in zip(dets, truth.frames)]


class TestPipeline:
    def test_zero_noise_sequence(self, basketball):
        traj = TrajectoryConfig(n_frames=60)
        truth, dets = simulate(basketball, traj, NoiseModel.exact(), seed=1)
        est = SequenceRegistrar(basketball, (1920, 1080)).run(_frames(truth, dets))
        assert est[0].reinitialized
        for e, fr in zip(est, truth.frames):
            assert e.status == REGISTERED
            uv_gt = project(fr.intrinsics, fr.pose, basketball.world_points())
            uv = project(e.intrinsics, e.pose, basketball.world_points())
            assert np.max(np.linalg.norm(uv - uv_gt, axis=1)) < 1e-3

    def test_filter_does_not_corrupt_exact_data(self, basketball):
        traj = TrajectoryConfig(n_frames=30)
        truth, dets = simulate(basketball, traj, NoiseModel.exact(), seed=2)
        cfg = PipelineConfig(filter=FilterConfig(rotation_std_deg=(0, 0, 0), translation_std_m=(0, 0, 0)))
        est = SequenceRegistrar(basketball, (1920, 1080), cfg).run(_frames(truth, dets))
        for e, fr in zip(est, truth.frames):
            assert angular_error(fr.pose.R, e.pose.R) < 1e-6
            assert np.linalg.norm(fr.pose.t - e.pose.t) < 1e-6

    def test_deterministic(self, basketball):
        traj = TrajectoryConfig(n_frames=20)
        truth, dets = simulate(basketball, traj, NoiseModel(dropout=0.3, outlier_prob=0.05), seed=3)
        runs = [SequenceRegistrar(basketball, (1920, 1080)).run(_frames(truth, dets)) for _ in range(2)]
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a.pose.R, b.pose.R)
            np.testing.assert_array_equal(a.pose.t, b.pose.t)
            assert a.intrinsics.f == b.intrinsics.f

    def test_empty_frames_coast(self, basketball):
        traj = TrajectoryConfig(n_frames=12)
        truth, dets = simulate(basketball, traj, NoiseModel.exact(), seed=4)
        frames = _frames(truth, dets)
        for i in (5, 6):
            frames[i] = ([], None)
        est = SequenceRegistrar(basketball, (1920, 1080)).run(frames)
        assert [e.status for e in est[4:8]] == [REGISTERED, COASTING, COASTING, REGISTERED]
        assert est[5].pose is not None

    def test_no_data_before_first_fix(self, basketball):
        reg = SequenceRegistrar(basketball, (1920, 1080))
        assert reg.step([Detection(10.0, 10.0, "semantic", 1)]).status == UNREGISTERED

    def test_filter_beats_single_frame(self, basketball):
        traj = TrajectoryConfig(n_frames=150)
        truth, dets = simulate(basketball, traj, NoiseModel(semantic_px=1.0, dropout=0.3, outlier_prob=0.05), seed=0)
        errs = {}
        for use_filter in (True, False):
            est = SequenceRegistrar(basketball, (1920, 1080), PipelineConfig(use_filter=use_filter)).run(_frames(truth, dets))
            errs[use_filter] = np.array(
                [reprojection_error_normalized(fr.intrinsics, fr.pose, e.intrinsics, e.pose, basketball) for e, fr in zip(est, truth.frames)]
            )
        assert np.mean(errs[True] <= errs[False]) >= 0.7
        assert errs[True].mean() < errs[False].mean()
