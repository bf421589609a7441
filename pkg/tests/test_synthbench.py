import json

import numpy as np
import pytest

from gocor.corrvol import CorrespondenceVolume, CorrMode, VolumeKind, global_corr
from gocor.errors import EmptyInputError, SceneGeometryError
from gocor.objective import ObjectiveParams
from gocor.solver import InitializerConfig, SolverConfig, init_filter_map
from gocor.synthbench import make_repetitive_scene, margin_statistic, run_disambiguation_experiment


class TestRepetitiveScene:
    """Seeded repeated-pattern scenes."""

    def test_query_is_shifted_reference(self):
        scene = make_repetitive_scene(seed=3)
        dy, dx = scene.shift
        np.testing.assert_array_equal(scene.f_q[dy:, dx:], scene.f_r[:-dy, :-dx])

    def test_zero_shift_gives_zero_flow(self):
        scene = make_repetitive_scene(shift=(0, 0), seed=1)
        np.testing.assert_array_equal(scene.gt_flow.flow, 0.0)
        np.testing.assert_array_equal(scene.f_q, scene.f_r)

    def test_flow_convention(self):
        scene = make_repetitive_scene(shift=(2, 1))
        np.testing.assert_array_equal(scene.gt_flow.flow[..., 0], 1.0)
        np.testing.assert_array_equal(scene.gt_flow.flow[..., 1], 2.0)
        assert scene.true_loc == (scene.probe[0] + 2, scene.probe[1] + 1)

    def test_deterministic(self):
        a, b = make_repetitive_scene(seed=5), make_repetitive_scene(seed=5)
        np.testing.assert_array_equal(a.f_r, b.f_r)
        np.testing.assert_array_equal(a.f_q, b.f_q)
        assert a.copy_origins == b.copy_origins

    def test_copies_share_patch_vectors(self):
        scene = make_repetitive_scene(seed=2, n_repeats=3)
        ps = scene.patch_size
        (y0, x0), *others = scene.copy_origins
        first = scene.f_r[y0:y0 + ps, x0:x0 + ps]
        norms = np.linalg.norm(first, axis=-1)
        np.testing.assert_allclose(norms, 1.0, rtol=1e-12)
        for y, x in others:
            block = scene.f_r[y:y + ps, x:x + ps]
            # the context component is orthogonal to every patch vector
            np.testing.assert_allclose(np.einsum("abd,abd->ab", first, block), 1.0, atol=1e-12)
        assert len(scene.distractor_locations) == 2

    def test_context_is_shared_within_a_copy(self):
        scene = make_repetitive_scene(seed=6)
        ps = scene.patch_size
        (y0, x0), (y1, x1) = scene.copy_origins
        ctx = scene.f_r[y1:y1 + ps, x1:x1 + ps] - scene.f_r[y0:y0 + ps, x0:x0 + ps]
        np.testing.assert_allclose(ctx, np.broadcast_to(ctx[0, 0], ctx.shape), atol=1e-12)
        assert np.linalg.norm(ctx[0, 0]) == pytest.approx(2.0)

    def test_background_level(self):
        scene = make_repetitive_scene(seed=1)
        mask = np.ones(scene.f_r.shape[:2], dtype=bool)
        for k in range(2):
            mask &= ~scene.copy_mask(k)
        rms = np.sqrt(np.mean(np.sum(scene.f_r[mask] ** 2, axis=-1)))
        assert 0.05 < rms < 0.2

    def test_noise_only_touches_query(self):
        clean = make_repetitive_scene(seed=4)
        noisy = make_repetitive_scene(seed=4, noise_std=0.05)
        np.testing.assert_array_equal(clean.f_r, noisy.f_r)
        assert not np.array_equal(clean.f_q, noisy.f_q)

    def test_copy_mask(self):
        scene = make_repetitive_scene(seed=0)
        mask = scene.copy_mask(0)
        assert mask.sum() == 9
        assert mask[scene.probe]

    @pytest.mark.parametrize("kwargs", [
        {"n_repeats": 1},
        {"patch_size": 4},
        {"height": 6, "width": 6, "n_repeats": 4},
        {"height": 4, "width": 4, "shift": (3, 3)},
    ])
    def test_infeasible_geometry(self, kwargs):
        with pytest.raises(SceneGeometryError):
            make_repetitive_scene(**kwargs)


class TestMarginStatistic:
    """True-match confidence minus the best distant confidence."""

    def test_one_hot_volume(self):
        data = np.zeros((4, 4, 4, 4))
        data[1, 1, 2, 3] = 1.0
        assert margin_statistic(CorrespondenceVolume(VolumeKind.GLOBAL, data), (1, 1), (2, 3)) == 1.0

    def test_constant_volume(self):
        data = np.full((2, 2, 5, 5), 0.3)
        assert margin_statistic(CorrespondenceVolume(VolumeKind.LOCAL, data, 2), (0, 0), (1, 1), 1.0) == 0.0

    def test_plain_correlation_ties_on_clean_scene(self):
        scene = make_repetitive_scene(seed=0)
        w0 = init_filter_map(scene.f_r, InitializerConfig())
        volume = global_corr(w0, scene.f_q)
        assert abs(margin_statistic(volume, scene.probe, scene.true_loc)) <= 1e-6
        scores = volume.probe_slice(*scene.probe)
        true_score = scores[scene.true_loc]
        for loc in scene.distractor_locations:
            assert scores[loc] == pytest.approx(true_score, abs=1e-12)

    def test_true_location_outside_radius(self):
        volume = CorrespondenceVolume(VolumeKind.LOCAL, np.zeros((5, 5, 3, 3)), 1)
        with pytest.raises(ValueError):
            margin_statistic(volume, (0, 0), (3, 3))

    def test_no_distant_locations(self):
        volume = CorrespondenceVolume(VolumeKind.GLOBAL, np.ones((2, 2, 2, 2)))
        with pytest.raises(EmptyInputError):
            margin_statistic(volume, (0, 0), (0, 0), rho_excl=5.0)


class TestDisambiguationExperiment:
    """Repeated-pattern disambiguation over solver iterations."""

    def test_report_schema(self):
        scene = make_repetitive_scene(seed=0)
        report = run_disambiguation_experiment(scene, ObjectiveParams(), SolverConfig(num_iter=3), seed=0)
        assert [it.iteration for it in report.iterations] == [0, 1, 2, 3]
        assert set(report.timings) == {"solve", "volumes", "evaluate"}
        dumped = json.loads(report.model_dump_json())
        assert "timings" not in dumped and "flow_pair" not in dumped
        assert 0.0 <= report.region_pck <= 100.0

    def test_iteration_zero_is_a_tie(self):
        scene = make_repetitive_scene(seed=1)
        report = run_disambiguation_experiment(scene, ObjectiveParams(), SolverConfig(num_iter=0))
        assert abs(report.margins[0]) <= 1e-6

    def test_margins_grow_and_argmax_resolves(self):
        wins = 0
        for seed in range(20):
            scene = make_repetitive_scene(seed=seed)
            report = run_disambiguation_experiment(scene, ObjectiveParams(), SolverConfig(num_iter=3), seed=seed)
            m = report.margins
            if abs(m[0]) <= 1e-6 and all(b >= a for a, b in zip(m, m[1:])) and m[3] > m[0] and report.final_correct:
                wins += 1
        assert wins >= 18

    def test_distractor_confidence_falls(self):
        scene = make_repetitive_scene(seed=0)
        report = run_disambiguation_experiment(scene, ObjectiveParams(), SolverConfig(num_iter=3))
        twin = [it.true_confidence - it.margin for it in report.iterations]
        assert all(b < a for a, b in zip(twin, twin[1:]))

    def test_matches_separate_solves(self):
        scene = make_repetitive_scene(seed=2)
        params = ObjectiveParams()
        full = run_disambiguation_experiment(scene, params, SolverConfig(num_iter=3))
        short = run_disambiguation_experiment(scene, params, SolverConfig(num_iter=2))
        assert full.iterations[2].margin == short.iterations[2].margin

    def test_local_mode(self):
        scene = make_repetitive_scene(seed=0)
        report = run_disambiguation_experiment(scene, ObjectiveParams(), SolverConfig.for_mode(CorrMode.local(4)))
        assert len(report.iterations) == 8
        assert all(np.isfinite(report.margins))
