from __future__ import annotations

import numpy as np
import pytest

from ci_tta.errors import CorruptImageError, InvalidArgumentError
from ci_tta.imgcore import (
    Kernel1D,
    bicubic_upsample_grid,
    bilinear_sample,
    control_pixel_positions,
    gaussian_kernel,
    read_image,
    sample_bilinear,
    separable_blur,
    write_imgf,
)
from oracles import bicubic_upsample_direct, bilinear_direct, conv2d_direct


class TestGaussianKernel:
    def test_single_tap_is_one(self):
        k = gaussian_kernel(1, 1.0)
        assert k.taps.tolist() == [1.0]
        assert k.radius == 0

    def test_three_taps_std_08(self):
        # frozen from the direct evaluation: exp(-x^2 / (2*0.8^2)) at x in
        # {-1, 0, 1}, normalized to sum 1
        k = gaussian_kernel(3, 0.8)
        expected = [0.2389942656229905, 0.5220114687540189, 0.2389942656229905]
        assert np.allclose(k.taps, expected, atol=1e-12)

    @pytest.mark.parametrize("kappa,std", [(1, 0.25), (3, 0.75), (9, 2.25), (23, 5.75), (5, 0.1)])
    def test_taps_sum_to_one(self, kappa, std):
        k = gaussian_kernel(kappa, std)
        assert abs(k.taps.sum() - 1.0) <= 1e-9
        assert (k.taps >= 0).all()
        assert np.abs(k.taps - k.taps[::-1]).max() <= 1e-12

    @pytest.mark.parametrize("kappa,std", [(2, 1.0), (0, 1.0), (-3, 1.0), (3, 0.0), (3, -1.0)])
    def test_rejects_bad_arguments(self, kappa, std):
        with pytest.raises(InvalidArgumentError):
            gaussian_kernel(kappa, std)

    def test_kernel1d_invariants_enforced(self):
        with pytest.raises(InvalidArgumentError):
            Kernel1D(np.array([0.5, 0.5]))  # even length
        with pytest.raises(InvalidArgumentError):
            Kernel1D(np.array([0.2, 0.2, 0.2]))  # does not sum to 1
        with pytest.raises(InvalidArgumentError):
            Kernel1D(np.array([0.1, 0.5, 0.4]))  # asymmetric
        with pytest.raises(InvalidArgumentError):
            Kernel1D(np.array([-0.5, 2.0, -0.5]))  # negative taps


class TestSeparableBlur:
    def test_constant_plane_stays_constant(self, rng):
        plane = np.full((7, 5), 0.37)
        out = separable_blur(plane, gaussian_kernel(5, 1.25))
        assert np.abs(out - 0.37).max() <= 1e-9

    def test_identity_kernel_is_identity(self, rng):
        plane = rng.random((6, 9))
        out = separable_blur(plane, Kernel1D(np.array([1.0])))
        assert np.array_equal(out, plane)

    def test_matches_direct_2d_convolution(self, rng):
        taps = gaussian_kernel(3, 0.75).taps
        for _ in range(25):
            plane = rng.random((8, 8))
            fast = separable_blur(plane, Kernel1D(taps))
            slow = conv2d_direct(plane, taps)
            assert np.abs(fast - slow).max() <= 1e-9

    def test_matches_direct_on_rectangles_and_wide_kernels(self, rng):
        for kappa, std in [(5, 1.25), (7, 1.75)]:
            taps = gaussian_kernel(kappa, std).taps
            plane = rng.random((6, 11))
            assert np.abs(separable_blur(plane, Kernel1D(taps)) - conv2d_direct(plane, taps)).max() <= 1e-9

    def test_preserves_mean_of_constant_input(self):
        plane = np.full((10, 10), 2.5)
        out = separable_blur(plane, gaussian_kernel(7, 1.75))
        assert abs(out.mean() - plane.mean()) <= 1e-6

    def test_preserves_sum_for_interior_supported_input(self, rng):
        kernel = gaussian_kernel(5, 1.25)
        plane = np.zeros((12, 12))
        plane[3:9, 3:9] = rng.random((6, 6))  # zero margin >= radius
        out = separable_blur(plane, kernel)
        assert abs(out.sum() - plane.sum()) <= 1e-6

    def test_linear_in_input(self, rng):
        kernel = gaussian_kernel(3, 0.75)
        a, b = rng.random((5, 5)), rng.random((5, 5))
        lhs = separable_blur(2.0 * a + 3.0 * b, kernel)
        rhs = 2.0 * separable_blur(a, kernel) + 3.0 * separable_blur(b, kernel)
        assert np.abs(lhs - rhs).max() <= 1e-9


class TestBilinearSample:
    def test_lattice_points_are_exact(self, rng):
        img = rng.random((5, 7, 3))
        for y in range(5):
            for x in range(7):
                for c in range(3):
                    assert bilinear_sample(img, float(x), float(y), c) == img[y, x, c]

    def test_midpoint_of_2x2_averages(self):
        img = np.array([[0.1, 0.2], [0.3, 0.4]]).reshape(2, 2, 1)
        assert bilinear_sample(img, 0.5, 0.5, 0) == pytest.approx(0.25, abs=1e-12)

    def test_out_of_range_clamps(self, rng):
        img = rng.random((4, 4, 2))
        assert bilinear_sample(img, -5.0, 1.0, 1) == bilinear_sample(img, 0.0, 1.0, 1)
        assert bilinear_sample(img, 99.0, 2.0, 0) == bilinear_sample(img, 3.0, 2.0, 0)
        assert bilinear_sample(img, 1.0, -2.5, 0) == bilinear_sample(img, 1.0, 0.0, 0)

    def test_matches_direct_reference(self, rng):
        for _ in range(120):
            h, w, c = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 3)
            img = rng.random((h, w, c))
            x = float(rng.uniform(-2, w + 2))
            y = float(rng.uniform(-2, h + 2))
            ch = int(rng.integers(0, c))
            assert bilinear_sample(img, x, y, ch) == pytest.approx(
                bilinear_direct(img, x, y, ch), abs=1e-12
            )

    def test_continuity_lipschitz(self, rng):
        img = rng.random((6, 6, 1))
        lipschitz = max(
            np.abs(np.diff(img[:, :, 0], axis=0)).max(),
            np.abs(np.diff(img[:, :, 0], axis=1)).max(),
        )
        eps = 1e-4
        for _ in range(200):
            x = float(rng.uniform(0, 5))
            y = float(rng.uniform(0, 5))
            delta = abs(bilinear_sample(img, x + eps, y, 0) - bilinear_sample(img, x, y, 0))
            assert delta <= lipschitz * eps + 1e-12

    def test_rejects_non_finite_coordinates(self, rng):
        img = rng.random((3, 3, 1))
        with pytest.raises(InvalidArgumentError):
            bilinear_sample(img, float("nan"), 0.0, 0)
        with pytest.raises(InvalidArgumentError):
            bilinear_sample(img, 0.0, float("inf"), 0)
        with pytest.raises(InvalidArgumentError):
            sample_bilinear(img, np.array([0.0, np.nan]), np.array([0.0, 0.0]))

    def test_rejects_bad_channel(self, rng):
        img = rng.random((3, 3, 2))
        with pytest.raises(InvalidArgumentError):
            bilinear_sample(img, 0.0, 0.0, 2)


class TestBicubicUpsampleGrid:
    def test_zero_grid_gives_zero_plane(self):
        out = bicubic_upsample_grid(np.zeros((4, 4)), 16, 16)
        assert np.array_equal(out, np.zeros((16, 16)))

    def test_constant_grid_gives_constant_plane(self):
        out = bicubic_upsample_grid(np.full((3, 5), 1.7), 20, 30)
        assert np.abs(out - 1.7).max() <= 1e-9

    def test_control_values_reproduced_at_pinned_pixels(self, rng):
        ctrl = rng.standard_normal((4, 4))
        out = bicubic_upsample_grid(ctrl, 16, 16)
        ys = control_pixel_positions(4, 16)
        xs = control_pixel_positions(4, 16)
        for i in range(4):
            for j in range(4):
                assert abs(out[ys[i], xs[j]] - ctrl[i, j]) <= 1e-6

    def test_pinned_reproduction_at_non_divisible_sizes(self, rng):
        ctrl = rng.standard_normal((4, 4)) * 2.24
        out = bicubic_upsample_grid(ctrl, 224, 224)
        ys = control_pixel_positions(4, 224)
        xs = control_pixel_positions(4, 224)
        for i in range(4):
            for j in range(4):
                assert abs(out[ys[i], xs[j]] - ctrl[i, j]) <= 1e-6

    def test_matches_direct_reference(self, rng):
        for _ in range(30):
            gy, gx = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            out_h, out_w = int(rng.integers(gy, 14)), int(rng.integers(gx, 14))
            ctrl = rng.standard_normal((gy, gx))
            fast = bicubic_upsample_grid(ctrl, out_h, out_w)
            slow = bicubic_upsample_direct(ctrl, out_h, out_w)
            assert np.abs(fast - slow).max() <= 1e-9

    def test_linear_in_control_values(self, rng):
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        lhs = bicubic_upsample_grid(1.5 * a - 0.7 * b, 17, 19)
        rhs = 1.5 * bicubic_upsample_grid(a, 17, 19) - 0.7 * bicubic_upsample_grid(b, 17, 19)
        assert np.abs(lhs - rhs).max() <= 1e-6

    def test_rejects_small_grid(self):
        with pytest.raises(InvalidArgumentError):
            bicubic_upsample_grid(np.zeros((1, 4)), 8, 8)
        with pytest.raises(InvalidArgumentError):
            bicubic_upsample_grid(np.zeros((4, 1)), 8, 8)

    def test_rejects_plane_smaller_than_grid(self):
        with pytest.raises(InvalidArgumentError):
            bicubic_upsample_grid(np.zeros((4, 4)), 3, 8)


class TestImageFiles:
    def test_imgf_roundtrip(self, tmp_path, rng):
        img = rng.random((5, 4, 3))
        path = tmp_path / "img.imgf"
        write_imgf(path, img)
        back = read_image(path)
        assert back.shape == (5, 4, 3)
        assert np.abs(back - img).max() <= 1e-7  # float32 payload

    def test_imgf_roundtrip_is_exact_for_float32_values(self, tmp_path, rng):
        img = rng.random((3, 3, 2)).astype(np.float32).astype(np.float64)
        path = tmp_path / "img.imgf"
        write_imgf(path, img)
        assert np.array_equal(read_image(path), img)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.imgf"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CorruptImageError):
            read_image(path)

    def test_truncated_payload_rejected(self, tmp_path, rng):
        path = tmp_path / "img.imgf"
        write_imgf(path, rng.random((4, 4, 1)))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CorruptImageError):
            read_image(path)

    def test_ppm_parsed_and_scaled(self, tmp_path):
        header = b"P6\n# a comment\n2 2\n255\n"
        pixels = bytes([0, 0, 0, 255, 255, 255, 128, 64, 32, 10, 20, 30])
        path = tmp_path / "img.ppm"
        path.write_bytes(header + pixels)
        img = read_image(path)
        assert img.shape == (2, 2, 3)
        assert img[0, 0].tolist() == [0.0, 0.0, 0.0]
        assert img[0, 1].tolist() == [1.0, 1.0, 1.0]
        assert img[1, 0, 0] == pytest.approx(128 / 255)

    def test_ppm_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(CorruptImageError):
            read_image(path)
