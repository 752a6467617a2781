"""Convolution and pooling against brute-force oracles."""

import numpy as np
import pytest

from sigverify.errors import ImageTooSmall, PoolTooFine
from sigverify.featurelearn import AutoencoderParams, FeatureBank, Hyperparams, WhiteningTransform
from sigverify.featurelearn.autoencoder import sigmoid
from sigverify.features import FeatureMaps, convolve, extract, extract_many, mean_pool, pool_bounds
from sigverify.preprocess import preprocess_pipeline
from sigverify.synthetic import generate_synthetic_signature

from conftest import SMALL


def random_bank(rng, ph, pw, h, k=None, mode="pca"):
    d = 2 * ph * pw
    k = k or int(rng.integers(2, d + 1))
    tf = WhiteningTransform(mean=rng.normal(size=d), basis=rng.normal(size=(k, d)) * 0.3,
                            epsilon=0.1, retained_k=k, variance_kept=1.0, mode=mode)
    params = AutoencoderParams(rng.normal(size=(h, k)) * 0.5, rng.normal(size=h),
                               rng.normal(size=(k, h)), rng.normal(size=k))
    return FeatureBank(params, tf, Hyperparams(hidden_size=h), ph, pw)


def convolve_oracle(bank, stack):
    """Five nested loops: unit, row, col, channel x patch row, patch col."""
    _, H, W = stack.shape
    ph, pw = bank.patch_h, bank.patch_w
    oh, ow = H - ph + 1, W - pw + 1
    h = bank.hidden_size
    out = np.zeros((h, oh, ow))
    for r in range(oh):
        for c in range(ow):
            patch = stack[:, r:r + ph, c:c + pw].ravel()
            patch = patch - patch.mean()
            z = bank.whitening.basis @ (patch - bank.whitening.mean)
            for j in range(h):
                acc = bank.params.b1[j]
                for q in range(len(z)):
                    acc += bank.params.W1[j, q] * z[q]
                out[j, r, c] = 1.0 / (1.0 + np.exp(-acc))
    return out


def pool_oracle(maps, pr, pc):
    h, oh, ow = maps.shape

    def edges(n, parts):
        base, rem = divmod(n, parts)
        e = [0]
        for i in range(parts):
            e.append(e[-1] + base + (1 if i >= parts - rem else 0))
        return e

    re, ce = edges(oh, pr), edges(ow, pc)
    out = []
    for j in range(h):
        for a in range(pr):
            for b in range(pc):
                s, n = 0.0, 0
                for r in range(re[a], re[a + 1]):
                    for c in range(ce[b], ce[b + 1]):
                        s += maps[j, r, c]
                        n += 1
                out.append(s / n)
    return np.array(out)


class TestConvolve:
    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            ph, pw = (int(v) for v in rng.integers(2, 6, 2))
            bank = random_bank(rng, ph, pw, int(rng.integers(1, 6)))
            img = rng.random((2, 16, 16))
            np.testing.assert_allclose(convolve(bank, img).maps, convolve_oracle(bank, img),
                                       atol=1e-10, rtol=0)

    def test_delta_feature(self):
        # whitening = identity on a DC-free pixel difference; encoder picks that coordinate
        ph = pw = 2
        d = 8
        basis = np.zeros((1, d))
        basis[0, 0], basis[0, 1] = 1.0, -1.0
        tf = WhiteningTransform(np.zeros(d), basis, 0.0, 1, 1.0)
        params = AutoencoderParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
        bank = FeatureBank(params, tf, Hyperparams(hidden_size=1), ph, pw)
        img = np.random.default_rng(1).random((2, 6, 6))
        maps = convolve(bank, img).maps[0]
        expected = sigmoid(img[0, :-1, :-1] - img[0, :-1, 1:])
        np.testing.assert_allclose(maps, expected, atol=1e-14)

    def test_constant_image_gives_constant_maps(self):
        rng = np.random.default_rng(2)
        bank = random_bank(rng, 3, 3, 4)
        maps = convolve(bank, np.full((2, 10, 12), 0.37)).maps
        assert maps.shape == (4, 8, 10)
        assert np.ptp(maps, axis=(1, 2)).max() < 1e-14

    def test_zero_image(self):
        rng = np.random.default_rng(3)
        bank = random_bank(rng, 3, 3, 4)
        v = extract(bank, np.zeros((2, 9, 9)), 3, 3).values.reshape(4, 9)
        z = bank.whitening.apply(np.zeros(18))
        expected = sigmoid(bank.params.W1 @ z + bank.params.b1)
        np.testing.assert_allclose(v, np.repeat(expected[:, None], 9, axis=1), atol=1e-14)

    def test_image_too_small(self):
        bank = random_bank(np.random.default_rng(4), 5, 5, 2)
        with pytest.raises(ImageTooSmall):
            convolve(bank, np.zeros((2, 4, 8)))


class TestPool:
    def test_bounds_put_remainder_last(self):
        assert pool_bounds(10, 3).tolist() == [0, 3, 6, 10]
        assert pool_bounds(11, 3).tolist() == [0, 3, 7, 11]
        assert pool_bounds(9, 3).tolist() == [0, 3, 6, 9]

    def test_constant_map(self):
        v = mean_pool(FeatureMaps(np.full((3, 7, 8), 0.25)), 3, 3)
        assert np.all(v.values == 0.25) and len(v) == 27

    def test_full_resolution_grid(self):
        m = np.random.default_rng(5).random((2, 4, 5))
        v = mean_pool(FeatureMaps(m), 4, 5)
        np.testing.assert_array_equal(v.values, m.ravel())

    def test_matches_region_sum_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            h, oh, ow = (int(v) for v in rng.integers(1, 12, 3))
            pr, pc = int(rng.integers(1, oh + 1)), int(rng.integers(1, ow + 1))
            m = rng.random((h, oh, ow))
            np.testing.assert_allclose(mean_pool(FeatureMaps(m), pr, pc).values,
                                       pool_oracle(m, pr, pc), atol=1e-12, rtol=0)

    def test_too_fine(self):
        with pytest.raises(PoolTooFine):
            mean_pool(FeatureMaps(np.zeros((1, 2, 5))), 3, 3)


class TestExtract:
    def test_deterministic_and_fixed_length(self, small_bank):
        imgs = [preprocess_pipeline(generate_synthetic_signature(s, 2, 0.05), SMALL) for s in range(3)]
        a = extract_many(small_bank, imgs)
        b = extract_many(small_bank, imgs)
        assert a.tobytes() == b.tobytes()
        assert a.shape == (3, small_bank.hidden_size * 9)

    def test_same_template_closer_than_other_template(self, small_bank):
        wins = 0
        for trial in range(50):
            t0, t1 = 2 * trial, 2 * trial + 1
            a = extract(small_bank, preprocess_pipeline(generate_synthetic_signature(3 * trial, t0, 0.02), SMALL))
            b = extract(small_bank, preprocess_pipeline(generate_synthetic_signature(3 * trial + 1, t0, 0.02), SMALL))
            c = extract(small_bank, preprocess_pipeline(generate_synthetic_signature(3 * trial + 2, t1, 0.02), SMALL))
            wins += np.linalg.norm(a.values - b.values) < np.linalg.norm(a.values - c.values)
        assert wins >= 45
