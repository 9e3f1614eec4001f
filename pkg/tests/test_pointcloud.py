import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidardiff.errors import FormatError, InsufficientPoints, IoError, ShapeError
from lidardiff.pointcloud import (DensityEstimate, PointCloud, knn_density, load_scan, save_scan,
                                  smooth_depths)
from lidardiff.projection import cartesian_to_spherical


def brute_force_density(xyz, k):
    d = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, :k].mean(axis=1)


def line_cloud(xs, depths=None):
    return PointCloud(np.column_stack([xs, np.zeros(len(xs)), np.zeros(len(xs))]))


class TestLoadScan:
    def test_two_records(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(np.array([[1, 2, 3, 0.5], [4, 5, 6, 1.0]], dtype="<f4").tobytes())
        assert path.stat().st_size == 32
        cloud = load_scan(path)
        assert len(cloud) == 2
        np.testing.assert_array_equal(cloud.xyz, [[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(cloud.intensity, [0.5, 1.0])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(FormatError, match="empty scan"):
            load_scan(path)

    def test_truncated_record(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\0" * 17)
        with pytest.raises(FormatError, match="truncated record"):
            load_scan(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_scan(tmp_path / "nope.bin")

    def test_intensity_clamped(self, tmp_path):
        path = tmp_path / "scan.bin"
        path.write_bytes(np.array([[1, 0, 0, -3.0], [0, 1, 0, 7.5]], dtype="<f4").tobytes())
        np.testing.assert_array_equal(load_scan(path).intensity, [0.0, 1.0])

    @pytest.mark.parametrize("suffix", [".bin", ".lpci"])
    def test_save_load_round_trip(self, tmp_path, suffix):
        rng = np.random.default_rng(0)
        cloud = PointCloud(rng.normal(size=(20, 3)), rng.uniform(size=20))
        path = tmp_path / f"c{suffix}"
        save_scan(cloud, path)
        back = load_scan(path)
        np.testing.assert_allclose(back.xyz, cloud.xyz, rtol=1e-6)
        np.testing.assert_allclose(back.intensity, cloud.intensity, rtol=1e-6)

    def test_non_finite_rejected(self):
        with pytest.raises(FormatError):
            PointCloud([[np.nan, 0, 0]])

    def test_arrays_are_read_only(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]])
        with pytest.raises(ValueError):
            cloud.xyz[0, 0] = 5


class TestKnnDensity:
    def test_collinear_k1(self):
        dens = knn_density(line_cloud([0.0, 1.0, 2.0]), k=1)
        np.testing.assert_allclose(dens.values, [1, 1, 1])

    def test_collinear_k2_matches_brute_force(self):
        cloud = line_cloud([0.0, 1.0, 2.0])
        oracle = brute_force_density(cloud.xyz, 2)
        np.testing.assert_allclose(oracle, [1.5, 1.0, 1.5])
        np.testing.assert_allclose(knn_density(cloud, 2).values, oracle)

    def test_k_equal_to_size(self):
        with pytest.raises(InsufficientPoints):
            knn_density(line_cloud([0.0, 1.0, 2.0]), k=3)

    def test_k_zero(self):
        with pytest.raises(InsufficientPoints):
            knn_density(line_cloud([0.0, 1.0, 2.0]), k=0)

    @pytest.mark.parametrize("k", [1, 5, 10])
    def test_random_cloud_matches_brute_force(self, k):
        xyz = np.random.default_rng(k).normal(size=(200, 3)) * 5
        np.testing.assert_allclose(knn_density(PointCloud(xyz), k).values,
                                   brute_force_density(xyz, k), rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(12, 60))
    def test_permutation_invariant(self, seed, n):
        rng = np.random.default_rng(seed)
        xyz = rng.uniform(-10, 10, size=(n, 3))
        perm = rng.permutation(n)
        a = knn_density(PointCloud(xyz), 10).values
        b = knn_density(PointCloud(xyz[perm]), 10).values
        np.testing.assert_allclose(b, a[perm], rtol=1e-12)


class TestSmoothDepths:
    def test_isolated_point_unchanged(self):
        cloud = PointCloud([[1, 0, 0], [1.1, 0, 0], [50, 50, 0]])
        dens = DensityEstimate([0.01, 0.01, 0.01], 1)
        out = smooth_depths(cloud, dens)
        np.testing.assert_allclose(out.depth, cloud.depth, rtol=1e-12)

    def test_constant_depth_unchanged(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(100, 3))
        xyz = 7.0 * v / np.linalg.norm(v, axis=1, keepdims=True)
        cloud = PointCloud(xyz)
        out = smooth_depths(cloud, knn_density(cloud, 10))
        np.testing.assert_allclose(out.depth, 7.0, rtol=1e-12)
        again = smooth_depths(out, knn_density(out, 10))
        np.testing.assert_allclose(again.xyz, out.xyz, rtol=1e-12)

    def test_spike_pulled_toward_mean(self):
        # x = 1, 10, -1 on one line: depths [1, 10, 1]
        cloud = PointCloud([[1.0, 0, 0], [10.0, 0, 0], [-1.0, 0, 0]])
        dens = knn_density(cloud, 1)
        np.testing.assert_allclose(dens.values, [2, 9, 2])
        # huge sigma -> uniform weights; radius 10 * 9 = 90 covers all three for the middle point
        out = smooth_depths(cloud, dens, sigma_scale=1e6, radius_scale=10.0)
        hand = (1 + 10 + 1) / 3
        assert out.depth[1] < 10
        assert out.depth[1] == pytest.approx(hand, rel=1e-9)

    def test_length_mismatch(self):
        cloud = line_cloud([0.0, 1.0, 2.0])
        with pytest.raises(ShapeError):
            smooth_depths(cloud, DensityEstimate([1.0, 1.0], 1))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_angles_kept_and_depth_within_window(self, seed):
        rng = np.random.default_rng(seed)
        xyz = rng.uniform(-20, 20, size=(80, 3))
        cloud = PointCloud(xyz)
        dens = knn_density(cloud, 10)
        out = smooth_depths(cloud, dens, sigma_scale=1.0, radius_scale=3.0)
        before = cartesian_to_spherical(cloud.xyz)
        after = cartesian_to_spherical(out.xyz)
        np.testing.assert_allclose(after[:, :2], before[:, :2], atol=1e-9)
        depth = cloud.depth
        for i in range(len(xyz)):
            window = np.linalg.norm(xyz - xyz[i], axis=1) <= 3.0 * dens.values[i]
            lo, hi = depth[window].min(), depth[window].max()
            assert lo - 1e-9 <= out.depth[i] <= hi + 1e-9
