import math

import numpy as np
import pytest

from viewalign.correspondence import mutual_nearest_matches
from viewalign.geometry import CameraPose
from viewalign.simulate import (
    DEFAULT_INTRINSICS,
    CorruptionConfig,
    SimCamera,
    make_reference,
    make_scene,
    perturbed_start,
    render,
)


def pairwise_angles_deg(descriptors):
    d = np.stack(descriptors)
    sims = np.clip(d @ d.T, -1.0, 1.0)
    n = len(d)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            out.append(math.degrees(math.acos(sims[i, j])))
    return np.array(out)


class TestMakeScene:
    def test_deterministic_per_seed(self):
        a = make_scene(3, n_landmarks=20, distractor_count=2)
        b = make_scene(3, n_landmarks=20, distractor_count=2)
        for la, lb in zip(a.landmarks, b.landmarks):
            assert np.array_equal(la.position, lb.position)
            assert np.array_equal(la.descriptor, lb.descriptor)
            assert la.saliency == lb.saliency

    def test_min_pairwise_angle_without_distractors(self):
        scene = make_scene(0, n_landmarks=30)
        angles = pairwise_angles_deg([lm.descriptor for lm in scene.landmarks])
        assert angles.min() > 5.0

    def test_distractors_create_exact_near_duplicates(self):
        scene = make_scene(1, n_landmarks=25, distractor_count=3)
        angles = pairwise_angles_deg([lm.descriptor for lm in scene.landmarks])
        assert int((angles < 2.0).sum()) == 3

    def test_minimum_landmark_count(self):
        with pytest.raises(ValueError):
            make_scene(0, n_landmarks=4)

    def test_landmarks_in_depth_band(self):
        scene = make_scene(5, n_landmarks=40)
        zs = np.array([lm.position[2] for lm in scene.landmarks])
        assert zs.min() >= 1.0 and zs.max() <= 3.0


class TestRender:
    def test_deterministic(self):
        scene = make_scene(2, n_landmarks=20)
        pose = perturbed_start(scene, 1)
        corr = CorruptionConfig(pixel_noise_sigma=1.0, outlier_rate=0.2, seed=9)
        a = render(scene, pose, DEFAULT_INTRINSICS, corr)
        b = render(scene, pose, DEFAULT_INTRINSICS, corr)
        assert np.array_equal(a.grid.descriptors, b.grid.descriptors)
        assert np.array_equal(a.grid.saliency, b.grid.saliency)
        assert np.array_equal(a.depth, b.depth)

    def test_landmark_cells_carry_descriptor_and_depth(self):
        scene = make_scene(4, n_landmarks=15)
        view = render(scene, CameraPose.identity(), DEFAULT_INTRINSICS)
        for placement in view.placements:
            r, c = placement.cell
            lm = scene.landmarks[placement.landmark]
            assert np.allclose(view.grid.descriptors[r, c], lm.descriptor)
            assert view.grid.saliency[r, c] == pytest.approx(lm.saliency)
            center = view.grid.patch_center(r, c)
            assert view.depth[int(center.v), int(center.u)] == pytest.approx(
                placement.depth, rel=1e-6
            )

    def test_background_saliency_low(self):
        scene = make_scene(4, n_landmarks=10)
        view = render(scene, CameraPose.identity(), DEFAULT_INTRINSICS)
        mask = np.ones((view.grid.rows, view.grid.cols), dtype=bool)
        for placement in view.placements:
            mask[placement.cell] = False
        assert view.grid.saliency[mask].max() < 0.1

    def test_outlier_count_exact(self):
        scene = make_scene(6, n_landmarks=20)
        corr = CorruptionConfig(outlier_rate=0.3, seed=0)
        view = render(scene, CameraPose.identity(), DEFAULT_INTRINSICS, corr)
        n_visible = 20  # all landmarks visible from the goal pose
        displaced = [p for p in view.placements if p.displaced]
        assert len(displaced) == round(0.3 * n_visible)

    def test_clean_matching_recovers_exactly_the_visible_pairs(self):
        # oracle for the correspondence module: with corruption disabled the
        # mutual matcher returns exactly the landmark cells visible both ways
        scene = make_scene(7, n_landmarks=30)
        reference = make_reference(scene, DEFAULT_INTRINSICS)
        for seed in range(5):
            pose = perturbed_start(scene, seed, max_translation=0.15, max_rotation_deg=5)
            view = render(scene, pose, DEFAULT_INTRINSICS)
            pairs = mutual_nearest_matches(view.grid, reference.grid)
            view_cells = {p.landmark: p.cell for p in view.placements}
            ref_cells = {p.landmark: p.cell for p in reference.placements}
            expected = {
                (view_cells[i], ref_cells[i]) for i in view_cells if i in ref_cells
            }
            got = {(p.cell_a, p.cell_b) for p in pairs}
            assert got == expected

    def test_background_never_pairs_across_polarity(self):
        scene = make_scene(8, n_landmarks=12)
        reference = make_reference(scene, DEFAULT_INTRINSICS)
        view = render(scene, CameraPose.identity(), DEFAULT_INTRINSICS)
        pairs = mutual_nearest_matches(view.grid, reference.grid)
        landmark_cells = {p.cell for p in view.placements}
        assert all(p.cell_a in landmark_cells for p in pairs)

    def test_rendered_views_serialize_to_grid_files(self, tmp_path):
        from viewalign.correspondence import load_depth, load_grid, save_depth, save_grid

        scene = make_scene(13, n_landmarks=15)
        view = render(scene, perturbed_start(scene, 0), DEFAULT_INTRINSICS)
        save_grid(view.grid, tmp_path / "view.dgrd")
        save_depth(view.depth, tmp_path / "view.dpth")
        grid = load_grid(tmp_path / "view.dgrd")
        assert np.allclose(grid.descriptors, np.asarray(view.grid.descriptors, np.float32))
        assert np.array_equal(load_depth(tmp_path / "view.dpth"), view.depth)

    def test_alignment_metric_zero_at_reference_pose(self):
        scene = make_scene(9, n_landmarks=25)
        reference = make_reference(scene, DEFAULT_INTRINSICS)
        view = render(scene, CameraPose.identity(), DEFAULT_INTRINSICS)
        pairs = mutual_nearest_matches(view.grid, reference.grid)
        dists = [
            math.hypot(p.pixel_a.u - p.pixel_b.u, p.pixel_a.v - p.pixel_b.v) for p in pairs
        ]
        assert pytest.approx(0.0) == float(np.mean(dists))


class TestSimCamera:
    def test_capture_varies_noise_per_frame_deterministically(self):
        scene = make_scene(10, n_landmarks=15)
        corr = CorruptionConfig(pixel_noise_sigma=2.0, seed=4)
        cam1 = SimCamera(scene, DEFAULT_INTRINSICS, corruption=corr)
        cam2 = SimCamera(scene, DEFAULT_INTRINSICS, corruption=corr)
        a1, a2 = cam1.capture(), cam1.capture()
        b1, b2 = cam2.capture(), cam2.capture()
        assert np.array_equal(a1.grid.descriptors, b1.grid.descriptors)
        assert np.array_equal(a2.grid.descriptors, b2.grid.descriptors)
        assert not np.array_equal(a1.depth, a2.depth)  # per-frame reseeding

    def test_move_composes_inverse_delta(self):
        scene = make_scene(11, n_landmarks=15)
        start = perturbed_start(scene, 0)
        cam = SimCamera(scene, DEFAULT_INTRINSICS, start_pose=start)
        # moving by the delta equal to the current pose lands at the goal
        cam.move(start)
        assert np.abs(cam.pose.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(cam.pose.translation).max() < 1e-9

    def test_move_outside_workspace_rejected(self):
        from viewalign.alignment import CameraUnavailable

        scene = make_scene(12, n_landmarks=15)
        cam = SimCamera(scene, DEFAULT_INTRINSICS)
        huge = CameraPose(np.eye(3), np.array([5.0, 0.0, 0.0]))
        with pytest.raises(CameraUnavailable):
            cam.move(huge)
