"""
Unit tests for density map encoding and on-disk formats.
"""
import numpy as np
import pytest

from lgdc.core.exceptions import DataError, IndivisibleShape, NonPositiveSigma, PointOutOfBounds, ShapeMismatch
from lgdc.density import (
    DensityMap,
    PointAnnotation,
    RoiMask,
    apply_mask,
    count_inside,
    downsample_mask,
    downsample_preserving_count,
    encode_density,
    integrate_count,
    point_kernel,
)
from lgdc.density.io import read_annotation, read_dmap, read_roi, write_annotation, write_dmap, write_png_preview, write_roi
from lgdc.ndcore import Tensor


def random_annotation(rng, count: int, size=(40, 48)) -> PointAnnotation:
    height, width = size
    points = np.column_stack([rng.uniform(0, width, count), rng.uniform(0, height, count)])
    return PointAnnotation(points, size)


class TestEncodeDensity:
    """Tests for point annotation to density map encoding."""

    def test_empty_annotation(self):
        """No heads gives an all-zero map."""
        dm = encode_density(PointAnnotation(np.zeros((0, 2)), (16, 16)), sigma=2.0)

        assert dm.grid.shape == (1, 16, 16)
        assert integrate_count(dm) == 0.0

    def test_single_centred_point(self):
        """A centred head integrates to one."""
        dm = encode_density(PointAnnotation([(8.0, 8.0)], (16, 16)), sigma=2.0)

        assert abs(integrate_count(dm) - 1.0) < 1e-6
        assert np.unravel_index(np.argmax(dm.numpy()), (16, 16)) in {(7, 7), (7, 8), (8, 7), (8, 8)}

    def test_border_points_match_kernel_oracle(self):
        """Heads near the border still sum to the head count; each equals its own kernel."""
        points = [(0.2, 0.3), (15.9, 0.1), (0.0, 11.7), (15.5, 11.9), (7.0, 6.0)]
        ann = PointAnnotation(points, (12, 16))

        dm = encode_density(ann, sigma=4.0)
        oracle = sum(point_kernel(x, y, 4.0, (12, 16)) for x, y in points)

        assert abs(integrate_count(dm) - 5.0) < 1e-6
        np.testing.assert_allclose(dm.numpy(), oracle, atol=1e-15)

    @pytest.mark.parametrize("sigma", [1.0, 2.0, 4.0, 8.0])
    def test_count_preservation(self, rng, sigma):
        """The integral equals the head count for every kernel width."""
        for count in (0, 1, 7, 100):
            dm = encode_density(random_annotation(rng, count), sigma=sigma)
            assert abs(integrate_count(dm) - count) < 1e-6

    def test_linearity(self, rng):
        """Encoding a union equals the sum of the encodings."""
        a = random_annotation(rng, 6)
        b = random_annotation(rng, 9)

        both = PointAnnotation(np.concatenate([a.points, b.points]), a.image_size)
        union = encode_density(both, sigma=3.0).numpy()
        parts = encode_density(a, sigma=3.0).numpy() + encode_density(b, sigma=3.0).numpy()

        np.testing.assert_allclose(union, parts, atol=1e-12)

    def test_nonnegative(self, rng):
        """Density values are never negative."""
        dm = encode_density(random_annotation(rng, 30), sigma=2.0)

        assert (dm.numpy() >= 0).all()

    def test_point_out_of_bounds(self):
        """A head at x == W is rejected."""
        with pytest.raises(PointOutOfBounds):
            encode_density(PointAnnotation([(16.0, 3.0)], (16, 16)), sigma=2.0)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_non_positive_sigma(self, sigma):
        """Sigma must be strictly positive."""
        with pytest.raises(NonPositiveSigma):
            encode_density(PointAnnotation([(3.0, 3.0)], (8, 8)), sigma=sigma)


class TestApplyMask:
    """Tests for ROI masking."""

    def test_all_ones_is_identity(self, rng):
        """A full ROI leaves the map unchanged."""
        dm = encode_density(random_annotation(rng, 10), sigma=2.0)

        masked = apply_mask(dm, RoiMask.full(*dm.shape))

        np.testing.assert_array_equal(masked.numpy(), dm.numpy())

    def test_all_zeros_annihilates(self, rng):
        """An empty ROI zeroes the map."""
        dm = encode_density(random_annotation(rng, 10), sigma=2.0)

        masked = apply_mask(dm, RoiMask.from_array(np.zeros(dm.shape)))

        assert integrate_count(masked) == 0.0

    def test_half_plane_removes_masked_points(self, rng):
        """Masking the right half removes the mass of heads on that side."""
        height, width = 40, 48
        left = np.column_stack([rng.uniform(2, 18, 12), rng.uniform(0, height, 12)])
        right = np.column_stack([rng.uniform(30, 46, 8), rng.uniform(0, height, 8)])
        ann = PointAnnotation(np.vstack([left, right]), (height, width))
        dm = encode_density(ann, sigma=1.5)
        inside = np.zeros((height, width))
        inside[:, : width // 2] = 1

        masked = apply_mask(dm, RoiMask.from_array(inside))

        assert abs(integrate_count(masked) - 12) < 0.05 * 20
        assert integrate_count(masked) <= integrate_count(dm)

    def test_shape_mismatch(self):
        """Map and mask shapes must agree."""
        dm = DensityMap(Tensor(np.zeros((1, 8, 8))))

        with pytest.raises(ShapeMismatch):
            apply_mask(dm, RoiMask.full(8, 9))

    def test_roi_values_must_be_binary(self):
        """A mask holding 0.5 is rejected."""
        with pytest.raises(ShapeMismatch):
            RoiMask(Tensor(np.full((1, 4, 4), 0.5)))


class TestDownsample:
    """Tests for count-preserving downsampling."""

    def test_factor_one_is_identity(self, rng):
        """factor=1 returns the map unchanged."""
        dm = DensityMap(Tensor(rng.random((1, 8, 8))))

        np.testing.assert_array_equal(downsample_preserving_count(dm, 1).numpy(), dm.numpy())

    def test_quarter_cells(self):
        """2x2 blocks of 0.25 become cells of 1.0."""
        dm = DensityMap(Tensor(np.full((1, 4, 4), 0.25)))

        pooled = downsample_preserving_count(dm, 2)

        np.testing.assert_array_equal(pooled.numpy(), np.ones((2, 2)))

    def test_sum_preserved(self, rng):
        """Random maps keep their integral under factor 4."""
        dm = DensityMap(Tensor(rng.random((1, 32, 24))))

        pooled = downsample_preserving_count(dm, 4)

        assert pooled.shape == (8, 6)
        assert abs(integrate_count(pooled) - integrate_count(dm)) < 1e-12

    def test_indivisible(self):
        """Shapes not divisible by the factor are rejected."""
        with pytest.raises(IndivisibleShape):
            downsample_preserving_count(DensityMap(Tensor(np.zeros((1, 6, 8)))), 4)

    def test_mask_majority_rule(self):
        """A feature cell is inside when at least half its pixels are."""
        inside = np.zeros((4, 4))
        inside[0, 0:2] = 1  # two of four pixels in the top-left block
        inside[2, 2] = 1  # one of four in the bottom-right block

        coarse = downsample_mask(RoiMask.from_array(inside), 2)

        np.testing.assert_array_equal(coarse.mask.data[0], [[1.0, 0.0], [0.0, 0.0]])

    def test_count_inside(self):
        """Heads on ROI pixels are counted; no ROI counts everything."""
        ann = PointAnnotation([(1.5, 1.5), (6.2, 1.0), (6.9, 7.9)], (8, 8))
        inside = np.zeros((8, 8))
        inside[:, :4] = 1

        assert count_inside(ann, RoiMask.from_array(inside)) == 1
        assert count_inside(ann, None) == 3


class TestFormats:
    """Tests for annotation, ROI and DMAP files."""

    def test_annotation_file(self, tmp_path):
        """Image path on the first line, then one ``x y`` per line."""
        path = tmp_path / "img.txt"
        write_annotation(path, "img.ppm", np.array([[1.5, 2.25], [3.0, 4.0]]))

        image_path, points = read_annotation(path)

        assert image_path == "img.ppm"
        np.testing.assert_allclose(points, [[1.5, 2.25], [3.0, 4.0]])

    def test_edge_point_reloads_in_bounds(self, tmp_path):
        """A head clamped just inside the right and bottom edge reads back bit-exact and valid."""
        edge = np.nextafter(64.0, 0.0)
        path = tmp_path / "edge.txt"
        write_annotation(path, "edge.ppm", np.array([[edge, 13.198696], [0.0, edge]]))

        _, points = read_annotation(path)

        np.testing.assert_array_equal(points, [[edge, 13.198696], [0.0, edge]])
        PointAnnotation(points, (64, 64)).validate()

    def test_annotation_without_points(self, tmp_path):
        """An image with no heads is valid."""
        path = tmp_path / "empty.txt"
        path.write_text("empty.ppm\n", encoding="utf-8")

        _, points = read_annotation(path)

        assert points.shape == (0, 2)

    def test_malformed_annotation(self, tmp_path):
        """A line with three numbers is a data error."""
        path = tmp_path / "bad.txt"
        path.write_text("img.ppm\n1 2 3\n", encoding="utf-8")

        with pytest.raises(DataError):
            read_annotation(path)

    def test_dmap_file(self, tmp_path, rng):
        """DMAP keeps float64 values bit-exact behind a 16-byte header."""
        grid = rng.random((5, 7))
        path = tmp_path / "map.dmap"

        write_dmap(path, grid)

        raw = path.read_bytes()
        assert raw[:4] == b"DMAP"
        assert len(raw) == 16 + 5 * 7 * 8
        np.testing.assert_array_equal(read_dmap(path), grid)

    def test_dmap_bad_magic(self, tmp_path):
        """A file without the magic is rejected."""
        path = tmp_path / "map.dmap"
        path.write_bytes(b"XXXX" + bytes(12))

        with pytest.raises(DataError):
            read_dmap(path)

    def test_dmap_truncated_payload(self, tmp_path):
        """Payload length must match the header."""
        path = tmp_path / "map.dmap"
        write_dmap(path, np.ones((3, 3)))
        path.write_bytes(path.read_bytes()[:-8])

        with pytest.raises(DataError):
            read_dmap(path)

    def test_roi_file(self, tmp_path):
        """Nonzero PGM pixels are inside."""
        inside = np.zeros((6, 5))
        inside[1:4, 2:] = 1
        path = tmp_path / "roi.pgm"

        write_roi(path, RoiMask.from_array(inside))

        np.testing.assert_array_equal(read_roi(path).mask.data[0], inside)

    def test_png_preview_of_zero_map(self, tmp_path):
        """An all-zero map still produces a preview."""
        path = tmp_path / "zero.png"

        write_png_preview(path, np.zeros((4, 4)))

        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
