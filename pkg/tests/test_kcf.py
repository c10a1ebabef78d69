"""Correlation-filter core: kernel maps, training, detection, updates.

Shift recovery and equivariance are exact properties of the circulant
algebra, so features here go in un-tapered; the tracker applies the cosine
window at its call sites.
"""

import numpy as np
import pytest
import scipy.fft

from cftrack.errors import ConfigError
from cftrack.kcf import (KcfParams, detect, gaussian_labels, hann_window,
                         kernel_correlation, train_model, update_model)


def circular_corr_oracle(x, z):
    """corr(tau) = sum_c sum_n x_c(n + tau) z_c(n), quadruple loop."""
    c, h, w = x.shape
    out = np.zeros((h, w))
    for dr in range(h):
        for dc in range(w):
            acc = 0.0
            for ch in range(c):
                for r in range(h):
                    for cc in range(w):
                        acc += x[ch, (r + dr) % h, (cc + dc) % w] * z[ch, r, cc]
            out[dr, dc] = acc
    return out


def features(rng, c=3, h=12, w=12):
    return rng.normal(size=(c, h, w)).astype(np.float32)


class TestGaussianLabels:
    def test_center_peak(self):
        lab = gaussian_labels(9, 11, 2.0)
        assert lab[4, 5] == 1.0
        assert lab.max() == 1.0

    def test_one_cell_offset(self):
        sigma = 1.7
        lab = gaussian_labels(9, 9, sigma)
        assert abs(lab[4, 5] - np.exp(-1.0 / (2 * sigma ** 2))) < 1e-6

    def test_matches_double_loop(self):
        h, w, sigma = 8, 10, 2.3
        lab = gaussian_labels(h, w, sigma)
        for r in range(h):
            for c in range(w):
                dr = min(abs(r - h // 2), h - abs(r - h // 2))
                dc = min(abs(c - w // 2), w - abs(c - w // 2))
                ref = np.exp(-(dr ** 2 + dc ** 2) / (2 * sigma ** 2))
                assert abs(lab[r, c] - ref) < 1e-6

    def test_circular_symmetry(self):
        lab = gaussian_labels(10, 10, 1.5)
        np.testing.assert_allclose(lab, np.roll(lab[::-1, ::-1], (1, 1), (0, 1)),
                                   atol=1e-6)


class TestHannWindow:
    def test_corners_zero(self):
        win = hann_window(8, 8)
        assert win[0, 0] == win[0, -1] == win[-1, 0] == win[-1, -1] == 0.0

    def test_3x3_center_one(self):
        assert hann_window(3, 3)[1, 1] == 1.0

    def test_outer_product_of_hann_vectors(self):
        win = hann_window(8, 8)
        ref = np.outer(np.hanning(8), np.hanning(8))
        np.testing.assert_allclose(win, ref, atol=1e-6)


class TestKernelCorrelation:
    def test_gaussian_self_peak_is_one(self, rng):
        x = features(rng)
        k = kernel_correlation(x, x, KcfParams())
        assert abs(k[0, 0] - 1.0) < 1e-5
        assert k.max() <= 1.0 + 1e-6 and k.min() > 0.0

    def test_zero_inputs_constant_one(self):
        x = np.zeros((2, 8, 8), dtype=np.float32)
        k = kernel_correlation(x, x, KcfParams())
        np.testing.assert_allclose(k, 1.0, atol=1e-6)

    def test_linear_matches_spatial_oracle(self, rng):
        x = features(rng, c=3, h=8, w=8)
        z = features(rng, c=3, h=8, w=8)
        k = kernel_correlation(x, z, KcfParams(kernel_type="linear"))
        ref = circular_corr_oracle(x, z) / x.size
        np.testing.assert_allclose(k, ref, atol=1e-4)

    def test_flip_symmetry(self, rng):
        # k_xz(tau) == k_zx(-tau)
        x = features(rng, h=8, w=8)
        z = features(rng, h=8, w=8)
        params = KcfParams()
        kxz = kernel_correlation(x, z, params)
        kzx = kernel_correlation(z, x, params)
        flipped = np.roll(kzx[::-1, ::-1], (1, 1), (0, 1))
        np.testing.assert_allclose(kxz, flipped, atol=1e-5)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ConfigError, match="mismatch"):
            kernel_correlation(features(rng, h=8), features(rng, h=9), KcfParams())


class TestTrainDetect:
    def test_self_detection_peaks_at_center(self, rng):
        x = features(rng, c=4, h=16, w=16)
        model = train_model(x, KcfParams())
        resp = detect(model, x)
        assert np.unravel_index(resp.argmax(), resp.shape) == (8, 8)

    def test_large_lambda_kills_response(self, rng):
        x = features(rng, h=16, w=16)
        model = train_model(x, KcfParams(lambda_value=1e6))
        assert np.abs(detect(model, x)).max() < 1e-3

    def test_training_deterministic(self, rng):
        x = features(rng)
        a = train_model(x, KcfParams())
        b = train_model(x, KcfParams())
        np.testing.assert_array_equal(a.xf, b.xf)
        np.testing.assert_array_equal(a.alphaf, b.alphaf)

    def test_shift_recovery_exact(self, rng):
        x = features(rng, c=2, h=24, w=24)
        model = train_model(x, KcfParams())
        for _ in range(20):
            dr = int(rng.integers(-5, 6))
            dc = int(rng.integers(-5, 6))
            resp = detect(model, np.roll(x, (dr, dc), axis=(1, 2)))
            peak = np.unravel_index(resp.argmax(), resp.shape)
            assert (peak[0] - 12, peak[1] - 12) == (dr, dc)

    def test_shift_equivariance(self, rng):
        x = features(rng, c=2, h=16, w=16)
        model = train_model(x, KcfParams())
        z = features(rng, c=2, h=16, w=16)
        base = detect(model, z)
        shifted = detect(model, np.roll(z, (3, -2), axis=(1, 2)))
        np.testing.assert_allclose(shifted, np.roll(base, (3, -2), axis=(0, 1)),
                                   atol=1e-4)

    def test_zero_features_flat_response(self, rng):
        x = features(rng, h=12, w=12)
        model = train_model(x, KcfParams())
        resp = detect(model, np.zeros_like(x))
        assert resp.max() - resp.min() < 1e-5 * max(1.0, abs(float(resp.max())))

    def test_response_is_real_up_to_float_noise(self, rng):
        # complex residue of the response before taking the real part
        x = features(rng, h=16, w=16)
        model = train_model(x, KcfParams())
        k = kernel_correlation(x, x, model.params)
        resp_c = np.fft.ifft2(np.fft.fft2(k) * model.alphaf)
        assert np.abs(resp_c.imag).max() < 1e-5

    def test_grid_mismatch(self, rng):
        model = train_model(features(rng, h=12, w=12), KcfParams())
        with pytest.raises(ConfigError):
            detect(model, features(rng, h=10, w=10))


class TestUpdate:
    def test_eta_zero_noop(self, rng):
        model = train_model(features(rng), KcfParams())
        xf, alphaf = model.xf.copy(), model.alphaf.copy()
        update_model(model, features(rng), eta=0.0)
        np.testing.assert_array_equal(model.xf, xf)
        np.testing.assert_array_equal(model.alphaf, alphaf)

    def test_eta_one_full_replacement(self, rng):
        params = KcfParams()
        model = train_model(features(rng), params)
        new = features(rng)
        update_model(model, new, eta=1.0)
        fresh = train_model(new, params)
        np.testing.assert_array_equal(model.xf, fresh.xf)
        np.testing.assert_array_equal(model.alphaf, fresh.alphaf)
        assert model.x_energy == fresh.x_energy

    def test_yf_and_hann_fixed(self, rng):
        model = train_model(features(rng), KcfParams())
        yf, hann = model.yf.copy(), model.hann.copy()
        update_model(model, features(rng), eta=0.3)
        np.testing.assert_array_equal(model.yf, yf)
        np.testing.assert_array_equal(model.hann, hann)

    def test_repeated_half_updates_converge(self, rng):
        params = KcfParams()
        model = train_model(features(rng), params)
        target = features(rng)
        fresh = train_model(target, params)
        def gap():
            return float(np.abs(model.xf - fresh.xf).sum()
                         + np.abs(model.alphaf - fresh.alphaf).sum())

        start = gap()
        dist = start
        for _ in range(6):
            update_model(model, target, eta=0.5)
            new_dist = gap()
            assert new_dist < dist
            dist = new_dist
        assert dist < start / 32  # each half-update halves the gap


class TestParams:
    def test_validation(self):
        with pytest.raises(ConfigError):
            KcfParams(kernel_type="poly")
        with pytest.raises(ConfigError):
            KcfParams(lambda_value=0.0)
        with pytest.raises(ConfigError):
            KcfParams(eta=1.5)
        with pytest.raises(ConfigError):
            KcfParams(window_scale=1.0)
