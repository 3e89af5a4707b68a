import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retro.data import shapes_corpus
from retro.metrics import format_summary, parse_summary, psnr, roc_auc, sliced_wasserstein, ssim


def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == math.inf


def test_psnr_uniform_8bit_offset():
    a = np.full((16, 16), 100 / 255)
    b = a + 16 / 255
    assert psnr(a, b) == pytest.approx(20 * math.log10(255 / 16), abs=1e-9)
    assert psnr(a, b) == pytest.approx(24.0484, abs=1e-4)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    img = rng.random((32, 32, 3))
    noise = rng.standard_normal(img.shape)
    vals = [psnr(img, img + s * noise) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ssim_identical_is_one():
    a = shapes_corpus(1, seed=2)[0]
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_inverted_is_low():
    # regression bound; measured mean over these 16 corpus images is -0.39
    vals = [ssim(a, 1.0 - a) for a in shapes_corpus(16, seed=3)]
    assert np.mean(vals) < 0.5


def test_ssim_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_small_image_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ssim_matches_direct_window_loop():
    rng = np.random.default_rng(5)
    a, b = rng.random((10, 9)), rng.random((10, 9))
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(10 - 8 + 1):
        for j in range(9 - 8 + 1):
            pa, pb = a[i : i + 8, j : j + 8].ravel(), b[i : i + 8, j : j + 8].ravel()
            ma, mb = pa.mean(), pb.mean()
            va, vb = ((pa - ma) ** 2).mean(), ((pb - mb) ** 2).mean()
            cov = ((pa - ma) * (pb - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


# ---------------------------------------------------------------- sliced wasserstein


def test_sw_identical_sets_zero():
    a = np.random.default_rng(0).normal(size=(50, 4))
    assert sliced_wasserstein(a, a.copy(), 16, 1) == 0.0


def test_sw_singletons_1d():
    assert sliced_wasserstein(np.array([[0.5]]), np.array([[3.0]]), 8, 0) == pytest.approx(2.5)


def test_sw_shifted_gaussian_monte_carlo():
    # E|u_1| for u uniform on the unit sphere in d dims, estimated independently
    d, delta = 4, 2.0
    rng = np.random.default_rng(7)
    u = rng.standard_normal((200_000, d))
    e_abs_u1 = np.mean(np.abs(u[:, 0]) / np.linalg.norm(u, axis=1))
    a = rng.standard_normal((256, d))
    b = rng.standard_normal((256, d))
    b[:, 0] += delta
    val = sliced_wasserstein(a, b, 64, seed=3)
    assert val == pytest.approx(delta * e_abs_u1, rel=0.2)


def test_sw_dimension_mismatch():
    with pytest.raises(ValueError):
        sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 3)))


def test_sw_unequal_sizes():
    a = np.zeros((3, 1))
    b = np.full((5, 1), 2.0)
    assert sliced_wasserstein(a, b, 4, 0) == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40), m=st.integers(1, 40), d=st.integers(1, 5))
def test_sw_symmetric_and_deterministic(seed, n, m, d):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(m, d)) + 0.5
    ab = sliced_wasserstein(a, b, 16, seed)
    assert ab == pytest.approx(sliced_wasserstein(b, a, 16, seed), abs=1e-12)
    assert ab == sliced_wasserstein(a, b, 16, seed)
    assert ab >= 0


# ---------------------------------------------------------------- roc


def test_roc_perfect_separation():
    assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])).auc == 1.0


def test_roc_random_labels_near_half():
    rng = np.random.default_rng(11)
    scores = rng.random(10_000)
    labels = rng.integers(0, 2, 10_000)
    assert 0.47 <= roc_auc(scores, labels).auc <= 0.53


def test_roc_reversal():
    rng = np.random.default_rng(12)
    s, y = rng.random(300), rng.integers(0, 2, 300)
    assert roc_auc(-s, y).auc == pytest.approx(1 - roc_auc(s, y).auc, abs=1e-12)


def test_roc_ties_averaged():
    # all scores tied: one diagonal step, AUC 0.5
    assert roc_auc(np.zeros(6), np.array([0, 1, 0, 1, 1, 0])).auc == pytest.approx(0.5)


def test_roc_matches_pair_counting():
    rng = np.random.default_rng(13)
    s = np.round(rng.random(200), 1)  # many ties
    y = rng.integers(0, 2, 200)
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    assert roc_auc(s, y).auc == pytest.approx(wins / (pos.size * neg.size), abs=1e-12)


def test_roc_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))


def test_roc_curve_monotone():
    rng = np.random.default_rng(14)
    c = roc_auc(rng.random(100), rng.integers(0, 2, 100))
    assert np.all(np.diff(c.tpr) >= 0) and np.all(np.diff(c.fpr) >= 0)
    assert 0.0 <= c.auc <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_roc_monotone_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=80)
    y = rng.integers(0, 2, 80)
    y[0], y[1] = 0, 1
    assert roc_auc(np.exp(2 * s) + 3, y).auc == pytest.approx(roc_auc(s, y).auc, abs=1e-12)


def test_summary_round_trip():
    vals = {"psnr": 21.5, "ssim": 0.8, "psnr_inf": math.inf}
    text = format_summary(vals)
    assert text.splitlines()[0].startswith("psnr=")
    assert parse_summary(text) == vals
