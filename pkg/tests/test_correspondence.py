import numpy as np
import pytest

from viewalign.correspondence import (
    DescriptorGrid,
    DimensionMismatch,
    EmptyInput,
    InsufficientCorrespondences,
    SelectionConfig,
    attach_depth,
    grid_rows,
    load_depth,
    load_grid,
    mutual_nearest_matches,
    save_depth,
    save_grid,
    select_correspondences,
)
from viewalign.geometry import PixelPoint, back_project


def make_grid(descriptors, saliency=None, patch_size=8, stride=8):
    """Build a grid around an explicit (rows, cols, dim) descriptor array."""
    desc = np.asarray(descriptors, dtype=float)
    rows, cols, dim = desc.shape
    norms = np.linalg.norm(desc, axis=2, keepdims=True)
    desc = desc / norms
    if saliency is None:
        saliency = np.full((rows, cols), 0.5)
    return DescriptorGrid(
        rows=rows,
        cols=cols,
        dim=dim,
        descriptors=desc,
        saliency=np.asarray(saliency, dtype=float),
        patch_size=patch_size,
        stride=stride,
        image_width=(cols - 1) * stride + patch_size,
        image_height=(rows - 1) * stride + patch_size,
    )


def brute_force_mutual(a: DescriptorGrid, b: DescriptorGrid) -> set[tuple[int, int]]:
    """Oracle: exhaustive mutual-nearest search over every candidate pair."""
    da = a.flat_descriptors()
    db = b.flat_descriptors()
    out = set()
    for i in range(len(da)):
        sims_i = [float(da[i] @ db[j]) for j in range(len(db))]
        j = int(np.argmax(sims_i))
        sims_j = [float(da[k] @ db[j]) for k in range(len(da))]
        if int(np.argmax(sims_j)) == i:
            out.add((i, j))
    return out


def random_unit_grid(seed, rows, cols, dim=8):
    rng = np.random.default_rng(seed)
    return make_grid(rng.normal(size=(rows, cols, dim)))


class TestMutualNearest:
    def test_identity_on_one_hot_grids(self):
        eye = np.eye(4).reshape(2, 2, 4)
        a = make_grid(eye)
        b = make_grid(eye)
        pairs = mutual_nearest_matches(a, b)
        assert len(pairs) == 4
        for p in pairs:
            assert p.cell_a == p.cell_b
            assert p.similarity == pytest.approx(1.0)

    def test_crossed_pairs(self):
        # A = [a, b], B = [b~, a~]: strong diagonal-crossing similarities
        a_vec = np.array([1.0, 0.0, 0.0])
        b_vec = np.array([0.0, 1.0, 0.0])
        mix = 0.9 * np.array([0.0, 1.0, 0.1]) / np.linalg.norm([0.0, 1.0, 0.1])

        def tilt(v, other, s=0.9):
            out = s * v + (1 - s) * other
            return out

        a = make_grid(np.stack([a_vec, b_vec]).reshape(1, 2, 3))
        b = make_grid(np.stack([tilt(b_vec, a_vec), tilt(a_vec, b_vec)]).reshape(1, 2, 3))
        pairs = mutual_nearest_matches(a, b)
        got = {(p.cell_a[1], p.cell_b[1]) for p in pairs}
        assert got == {(0, 1), (1, 0)}
        # confirms against the exhaustive oracle
        assert {(0, 1), (1, 0)} == brute_force_mutual(a, b)

    def test_non_reciprocated_cell_excluded(self):
        # A0 prefers B0 but B0 prefers A1: A0 must not appear in any pair.
        a0 = np.array([1.0, 0.2, 0.0])
        a1 = np.array([1.0, 0.0, 0.0])
        b0 = np.array([1.0, 0.0, 0.05])
        b1 = np.array([0.0, 0.0, 1.0])
        a = make_grid(np.stack([a0, a1]).reshape(1, 2, 3))
        b = make_grid(np.stack([b0, b1]).reshape(1, 2, 3))
        oracle = brute_force_mutual(a, b)
        pairs = mutual_nearest_matches(a, b)
        got = {
            (p.cell_a[0] * 2 + p.cell_a[1], p.cell_b[0] * 2 + p.cell_b[1]) for p in pairs
        }
        assert got == oracle
        assert all(flat_a != 0 for flat_a, _ in got)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_oracle(self, seed):
        a = random_unit_grid(seed, 6, 7)
        b = random_unit_grid(seed + 100, 5, 6)
        pairs = mutual_nearest_matches(a, b)
        got = {
            (p.cell_a[0] * a.cols + p.cell_a[1], p.cell_b[0] * b.cols + p.cell_b[1])
            for p in pairs
        }
        assert got == brute_force_mutual(a, b)

    def test_large_grid_against_oracle(self):
        a = random_unit_grid(42, 16, 16)
        b = random_unit_grid(43, 16, 16)
        pairs = mutual_nearest_matches(a, b)
        got = {
            (p.cell_a[0] * a.cols + p.cell_a[1], p.cell_b[0] * b.cols + p.cell_b[1])
            for p in pairs
        }
        assert got == brute_force_mutual(a, b)

    def test_symmetry_under_swap(self):
        a = random_unit_grid(1, 5, 5)
        b = random_unit_grid(2, 5, 5)
        fwd = {(p.cell_a, p.cell_b) for p in mutual_nearest_matches(a, b)}
        rev = {(p.cell_b, p.cell_a) for p in mutual_nearest_matches(b, a)}
        assert fwd == rev

    def test_sorted_row_major(self):
        a = random_unit_grid(3, 6, 6)
        b = random_unit_grid(4, 6, 6)
        pairs = mutual_nearest_matches(a, b)
        keys = [p.cell_a[0] * a.cols + p.cell_a[1] for p in pairs]
        assert keys == sorted(keys)

    def test_dimension_mismatch(self):
        a = random_unit_grid(0, 2, 2, dim=4)
        b = random_unit_grid(0, 2, 2, dim=5)
        with pytest.raises(DimensionMismatch):
            mutual_nearest_matches(a, b)

    def test_similarity_equals_row_and_column_max(self):
        a = random_unit_grid(9, 8, 8)
        b = random_unit_grid(10, 8, 8)
        sim = a.flat_descriptors() @ b.flat_descriptors().T
        for p in mutual_nearest_matches(a, b):
            i = p.cell_a[0] * a.cols + p.cell_a[1]
            j = p.cell_b[0] * b.cols + p.cell_b[1]
            assert p.similarity == pytest.approx(sim[i].max())
            assert p.similarity == pytest.approx(sim[:, j].max())


def identity_pairs(grid_a, grid_b):
    return mutual_nearest_matches(grid_a, grid_b)


class TestSelection:
    def _distinct_pairs(self, seed, n, dim=6):
        """Pairs with pairwise-distinct descriptors via two random grids."""
        a = random_unit_grid(seed, 1, n, dim=dim)
        b = make_grid(np.asarray(a.descriptors).copy())
        return mutual_nearest_matches(a, b)

    def test_all_returned_when_count_equals_k(self):
        pairs = self._distinct_pairs(0, 6)
        assert len(pairs) == 6
        cfg = SelectionConfig(k=6, kmeans_seed=0)
        # brute force: with k = n distinct descriptors, every point ends up
        # alone in a cluster at convergence, so selection keeps everything
        assert select_correspondences(pairs, cfg) == pairs

    def test_well_separated_groups_keep_most_salient_member(self):
        # 12 pairs in 4 tight orthogonal-anchor groups; k=4 must select
        # exactly the max-saliency member of each group.
        rng = np.random.default_rng(0)
        base = []
        for axis in range(4):
            anchor = np.zeros(4)
            anchor[axis] = 1.0
            for _ in range(3):
                v = anchor + rng.normal(scale=0.02, size=4)
                base.append(v / np.linalg.norm(v))
        desc = np.stack(base).reshape(1, 12, 4)
        sal = np.array([[0.2, 0.9, 0.5, 0.3, 0.95, 0.1, 0.7, 0.6, 0.65, 0.15, 0.25, 0.8]])
        a = make_grid(desc, sal)
        b = make_grid(desc, sal)
        pairs = mutual_nearest_matches(a, b)
        assert len(pairs) == 12
        selected = select_correspondences(pairs, SelectionConfig(k=4, kmeans_seed=1))
        # exhaustive oracle: the most salient column of each group of three
        expected = {int(np.argmax(sal[0, g * 3 : g * 3 + 3])) + g * 3 for g in range(4)}
        assert {p.cell_a[1] for p in selected} == expected

    def test_k_larger_than_pairs_returns_all(self):
        pairs = self._distinct_pairs(1, 5)
        assert select_correspondences(pairs, SelectionConfig(k=30)) == pairs

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            select_correspondences([], SelectionConfig(k=4))

    def test_k_below_minimum_rejected(self):
        with pytest.raises(ValueError):
            SelectionConfig(k=3)

    def test_deterministic_given_seed(self):
        pairs = self._distinct_pairs(7, 40, dim=8)
        cfg = SelectionConfig(k=8, kmeans_seed=123)
        first = select_correspondences(pairs, cfg)
        second = select_correspondences(pairs, cfg)
        assert first == second

    def test_output_size_and_cluster_uniqueness(self):
        from viewalign.correspondence import _kmeans_labels

        pairs = self._distinct_pairs(11, 50, dim=8)
        cfg = SelectionConfig(k=10, kmeans_seed=5)
        selected = select_correspondences(pairs, cfg)
        feats = np.stack(
            [np.concatenate([p.descriptor_a, p.descriptor_b]) for p in pairs]
        )
        labels = _kmeans_labels(feats, cfg.k, cfg.kmeans_seed, cfg.kmeans_max_iters)
        occupied = len(set(labels.tolist()))
        assert len(selected) == min(cfg.k, occupied) <= cfg.k
        # no two selected pairs share a cluster
        sel_idx = [pairs.index(p) for p in selected]
        assert len({labels[i] for i in sel_idx}) == len(sel_idx)


class TestAttachDepth:
    def _grid_pairs(self, intr, rows=4, cols=5):
        a = random_unit_grid(21, rows, cols)
        b = make_grid(np.asarray(a.descriptors).copy())
        pairs = mutual_nearest_matches(a, b)
        assert len(pairs) == rows * cols
        return a, pairs

    def test_valid_depths_back_project(self, intr):
        grid, pairs = self._grid_pairs(intr)
        depth = np.full((intr.height, intr.width), 2.5, dtype=np.float32)
        corrs = attach_depth(pairs, depth, intr)
        assert len(corrs) == len(pairs)
        for c, p in zip(corrs, pairs):
            # oracle: per-point inverse pinhole
            expected = back_project(intr, p.pixel_a, 2.5)
            assert np.allclose(tuple(c.scene_point), tuple(expected))
            assert c.reference_pixel == p.pixel_b

    def test_zero_depth_pair_dropped(self, intr):
        grid, pairs = self._grid_pairs(intr)
        depth = np.full((intr.height, intr.width), 2.5, dtype=np.float32)
        victim = pairs[3]
        depth[int(victim.pixel_a.v), int(victim.pixel_a.u)] = 0.0
        corrs = attach_depth(pairs, depth, intr)
        assert len(corrs) == len(pairs) - 1
        assert all(c.reference_pixel != victim.pixel_b for c in corrs)

    def test_all_invalid_raises(self, intr):
        _, pairs = self._grid_pairs(intr)
        depth = np.zeros((intr.height, intr.width), dtype=np.float32)
        with pytest.raises(InsufficientCorrespondences):
            attach_depth(pairs, depth, intr)

    def test_shape_mismatch_rejected(self, intr):
        _, pairs = self._grid_pairs(intr)
        with pytest.raises(ValueError):
            attach_depth(pairs, np.ones((10, 10)), intr)


class TestGridValidation:
    def test_non_unit_descriptor_rejected(self):
        desc = np.zeros((1, 1, 4))
        desc[0, 0] = [2.0, 0, 0, 0]
        with pytest.raises(ValueError):
            DescriptorGrid(1, 1, 4, desc, np.array([[0.5]]), 8, 8, 8, 8)

    def test_header_arithmetic_enforced(self):
        desc = np.zeros((2, 2, 4))
        desc[..., 0] = 1.0
        with pytest.raises(ValueError):
            DescriptorGrid(2, 2, 4, desc, np.full((2, 2), 0.5), 8, 8, 8, 8)

    def test_rows_formula(self):
        assert grid_rows(224, 8, 4) == 55
        assert grid_rows(480, 16, 16) == 30

    def test_patch_center(self):
        g = random_unit_grid(0, 3, 3, dim=4)
        assert g.patch_center(0, 0) == PixelPoint(4.0, 4.0)
        assert g.patch_center(2, 1) == PixelPoint(12.0, 20.0)


class TestBinaryRoundTrip:
    def test_grid_round_trip(self, tmp_path):
        g = random_unit_grid(5, 4, 6, dim=12)
        path = tmp_path / "view.dgrd"
        save_grid(g, path)
        loaded = load_grid(path)
        assert loaded.rows == g.rows and loaded.cols == g.cols and loaded.dim == g.dim
        assert loaded.patch_size == g.patch_size and loaded.stride == g.stride
        assert np.allclose(loaded.descriptors, np.asarray(g.descriptors, dtype=np.float32))
        assert np.allclose(loaded.saliency, np.asarray(g.saliency, dtype=np.float32))

    def test_depth_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0, 5, size=(48, 64)).astype(np.float32)
        path = tmp_path / "frame.dpth"
        save_depth(depth, path)
        assert np.array_equal(load_depth(path), depth)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dgrd"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_grid(path)

    def test_truncated_payload_rejected(self, tmp_path):
        g = random_unit_grid(5, 4, 6, dim=12)
        path = tmp_path / "view.dgrd"
        save_grid(g, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="payload"):
            load_grid(path)
