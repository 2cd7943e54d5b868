"""Raster decoding and patch geometry tests."""

import sys

import numpy as np
import numpy.testing as npt
import pytest

from hmpsearch import (
    DecodeError,
    IntensityImage,
    InvalidInputError,
    UnsupportedFormatError,
    extract_patches,
    group_into_cells,
    load_image,
    read_manifest,
    resize_max_side,
)
from hmpsearch.images import assign_to_cells


def write_p5(path, width, height, samples, maxval=255):
    header = f"P5\n{width} {height}\n{maxval}\n".encode()
    path.write_bytes(header + bytes(samples))


def write_p6(path, width, height, samples, maxval=255):
    header = f"P6\n{width} {height}\n{maxval}\n".encode()
    path.write_bytes(header + bytes(samples))


class TestLoadImage:
    def test_p5_scales_to_unit_range(self, tmp_path):
        path = tmp_path / "gray.pgm"
        write_p5(path, 2, 2, [0, 255, 128, 64])
        img = load_image(path)
        assert (img.height, img.width) == (2, 2)
        npt.assert_allclose(
            img.pixels, [[0.0, 1.0], [128 / 255, 64 / 255]], atol=1e-15
        )

    def test_p6_white_pixel_is_full_luminance(self, tmp_path):
        path = tmp_path / "white.ppm"
        write_p6(path, 1, 1, [255, 255, 255])
        img = load_image(path)
        assert img.pixels[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_p6_luminance_weights(self, tmp_path):
        path = tmp_path / "rgb.ppm"
        write_p6(path, 3, 1, [255, 0, 0, 0, 255, 0, 0, 0, 255])
        img = load_image(path)
        npt.assert_allclose(img.pixels[0], [0.299, 0.587, 0.114], atol=1e-12)

    def test_p5_with_comments_and_sixteen_bit(self, tmp_path):
        path = tmp_path / "wide.pgm"
        header = b"P5\n# a comment\n2 1\n65535\n"
        path.write_bytes(header + (30000).to_bytes(2, "big") + (65535).to_bytes(2, "big"))
        img = load_image(path)
        npt.assert_allclose(img.pixels[0], [30000 / 65535, 1.0], atol=1e-12)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n4 ")
        with pytest.raises(DecodeError) as err:
            load_image(path)
        assert "bad.pgm" in str(err.value)

    def test_truncated_pixels_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        write_p5(path, 4, 4, [7] * 10)
        with pytest.raises(DecodeError):
            load_image(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DecodeError):
            load_image(tmp_path / "absent.pgm")

    def test_garbage_bytes_rejected(self, tmp_path):
        path = tmp_path / "noise.bin"
        path.write_bytes(bytes(range(64)))
        with pytest.raises(DecodeError):
            load_image(path)

    def test_unsupported_without_pillow(self, tmp_path, monkeypatch):
        path = tmp_path / "photo.jpg"
        path.write_bytes(b"\xff\xd8\xff\xe0 not really a jpeg")
        monkeypatch.setitem(sys.modules, "PIL", None)
        monkeypatch.setitem(sys.modules, "PIL.Image", None)
        with pytest.raises(UnsupportedFormatError):
            load_image(path)

    def test_determinism(self, tmp_path):
        path = tmp_path / "img.pgm"
        rng = np.random.default_rng(0)
        write_p5(path, 6, 5, list(rng.integers(0, 256, size=30)))
        a = load_image(path)
        b = load_image(path)
        assert a.pixels.tobytes() == b.pixels.tobytes()


class TestIntensityImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            IntensityImage(np.array([[0.0, 1.5]]))

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            IntensityImage(np.empty((0, 3)))


class TestExtractPatches:
    def test_six_by_six_window_count(self):
        img = IntensityImage(np.linspace(0, 1, 36).reshape(6, 6))
        grid = extract_patches(img, 5, 1)
        assert grid.count == 4
        assert grid.grid_shape == (2, 2)

    def test_constant_image_gives_zero_patches(self):
        img = IntensityImage(np.full((8, 8), 0.37))
        grid = extract_patches(img, 5, 1)
        npt.assert_allclose(grid.patches, 0.0, atol=1e-12)

    def test_strided_count_matches_formula(self):
        rng = np.random.default_rng(1)
        img = IntensityImage(rng.uniform(size=(36, 36)))
        grid = extract_patches(img, 5, 2)
        assert grid.count == 16 * 16

    def test_patch_means_are_zero(self):
        rng = np.random.default_rng(2)
        img = IntensityImage(rng.uniform(size=(12, 10)))
        grid = extract_patches(img, 3, 2)
        npt.assert_allclose(grid.patches.mean(axis=1), 0.0, atol=1e-9)

    def test_patches_are_window_copies_up_to_mean(self):
        rng = np.random.default_rng(3)
        pixels = rng.uniform(size=(7, 7))
        grid = extract_patches(IntensityImage(pixels), 3, 2)
        window = pixels[2:5, 4:7].ravel()
        # patch at grid row 1, col 2 with stride 2 starts at pixel (2, 4)
        idx = 1 * grid.grid_shape[1] + 2
        npt.assert_allclose(grid.patches[idx], window - window.mean(), atol=1e-12)

    def test_centers_in_pixel_coordinates(self):
        img = IntensityImage(np.zeros((6, 6)) + 0.5)
        grid = extract_patches(img, 5, 1)
        npt.assert_allclose(grid.centers[0], [2.0, 2.0])
        npt.assert_allclose(grid.centers[-1], [3.0, 3.0])

    def test_oversized_patch_rejected(self):
        img = IntensityImage(np.full((4, 4), 0.5))
        with pytest.raises(InvalidInputError):
            extract_patches(img, 5, 1)


class TestGroupIntoCells:
    def test_two_by_two_split_of_sixteen(self):
        rng = np.random.default_rng(4)
        img = IntensityImage(rng.uniform(size=(16, 16)))
        grid = extract_patches(img, 1, 1)
        cells = group_into_cells(grid, 16, 2)
        assert len(cells) == 4
        # the patch centered at (3, 3) is index 3*16+3 and lands in cell 0
        assert 3 * 16 + 3 in cells[0]
        for idx in cells[0]:
            assert grid.centers[idx, 0] < 8 and grid.centers[idx, 1] < 8

    def test_single_cell_holds_everything(self):
        rng = np.random.default_rng(5)
        img = IntensityImage(rng.uniform(size=(10, 10)))
        grid = extract_patches(img, 3, 1)
        cells = group_into_cells(grid, 10, 1)
        assert sorted(cells[0]) == list(range(grid.count))

    def test_three_by_three_partition_is_complete(self):
        rng = np.random.default_rng(6)
        img = IntensityImage(rng.uniform(size=(36, 36)))
        grid = extract_patches(img, 5, 1)
        cells = group_into_cells(grid, 36, 3)
        assert len(cells) == 9
        everything = sorted(idx for cell in cells for idx in cell)
        assert everything == list(range(grid.count))

    def test_indivisible_geometry_rejected(self):
        rng = np.random.default_rng(7)
        img = IntensityImage(rng.uniform(size=(10, 10)))
        grid = extract_patches(img, 3, 1)
        with pytest.raises(InvalidInputError) as err:
            group_into_cells(grid, 10, 3)
        assert "10" in str(err.value) and "3" in str(err.value)

    def test_point_outside_region_rejected(self):
        with pytest.raises(InvalidInputError):
            assign_to_cells(np.array([[9.0, 1.0]]), 8, 2)


class TestManifest:
    def test_parses_and_resolves_paths(self, tmp_path):
        manifest = tmp_path / "data.tsv"
        manifest.write_text("a\timgs/a.pgm\nb\t/abs/b.pgm\n\n")
        records = read_manifest(manifest)
        assert records[0][0] == "a"
        assert records[0][1] == str(tmp_path / "imgs/a.pgm")
        assert records[1][1] == "/abs/b.pgm"

    def test_rejects_duplicate_ids(self, tmp_path):
        manifest = tmp_path / "data.tsv"
        manifest.write_text("a\tx.pgm\na\ty.pgm\n")
        with pytest.raises(InvalidInputError):
            read_manifest(manifest)

    def test_rejects_missing_tab(self, tmp_path):
        manifest = tmp_path / "data.tsv"
        manifest.write_text("just-one-field\n")
        with pytest.raises(InvalidInputError):
            read_manifest(manifest)


class TestResize:
    def test_no_op_when_small_enough(self):
        img = IntensityImage(np.full((8, 6), 0.25))
        assert resize_max_side(img, 10) is img

    def test_longest_side_capped(self):
        rng = np.random.default_rng(8)
        img = IntensityImage(rng.uniform(size=(40, 20)))
        out = resize_max_side(img, 10)
        assert max(out.height, out.width) == 10
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_constant_image_stays_constant(self):
        img = IntensityImage(np.full((30, 30), 0.6))
        out = resize_max_side(img, 7)
        npt.assert_allclose(out.pixels, 0.6, atol=1e-12)
