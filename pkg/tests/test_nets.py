import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retro import autodiff as ad
from retro.autodiff import Tensor, grad_check
from retro.nets import (
    VAE,
    ImageDiscriminator,
    LatentDiscriminator,
    MappingNet,
    MappingSpec,
    UNet,
    UnetSpec,
    VaeSpec,
    decode,
    detect,
    downscale_mask,
    encode,
    map_latent,
    partial_nonlocal,
    restore,
    unet_forward,
)

SMALL_VAE = VaeSpec(in_ch=3, widths=(4, 6), z_ch=4, n_res=1)


def scalar_nonlocal(F, m, W):
    """Triple-loop evaluation of the masked embedded-Gaussian nonlocal block.

    F: C x L features, m: L mask, W: dict of (weight matrix, bias) per embedding.
    """
    C, L = F.shape

    def emb(name, v):
        w, b = W[name]
        return [sum(w[o, c] * v[c] for c in range(len(v))) + b[o] for o in range(w.shape[0])]

    th = [emb("theta", F[:, i]) for i in range(L)]
    ph = [emb("phi", F[:, j]) for j in range(L)]
    mu = [emb("mu", F[:, j]) for j in range(L)]
    out = np.zeros((C, L))
    aff = np.zeros((L, L))
    for i in range(L):
        f = [np.exp(sum(a * b for a, b in zip(th[i], ph[j]))) for j in range(L)]
        den = sum((1 - m[k]) * f[k] for k in range(L))
        for j in range(L):
            aff[i, j] = (1 - m[j]) * f[j] / den
        agg = [sum(aff[i, j] * mu[j][c] for j in range(L)) for c in range(C)]
        out[:, i] = emb("nu", agg)
    return out, aff


def random_pnl_params(rng, c, k, scale=0.3):
    raw = {
        "theta": (rng.normal(0, scale, (k, c)), rng.normal(0, scale, k)),
        "phi": (rng.normal(0, scale, (k, c)), rng.normal(0, scale, k)),
        "mu": (rng.normal(0, scale, (c, c)), rng.normal(0, scale, c)),
        "nu": (rng.normal(0, scale, (c, c)), rng.normal(0, scale, c)),
    }
    params = {}
    for name, (w, b) in raw.items():
        params[f"{name}.w"] = Tensor(w.reshape(w.shape[0], w.shape[1], 1, 1))
        params[f"{name}.b"] = Tensor(b)
    return raw, params


# ---------------------------------------------------------------- encode / decode


def test_encode_zero_eps_gives_mean():
    vae = VAE(SMALL_VAE, seed=1)
    x = Tensor(np.random.default_rng(0).random((2, 3, 8, 8)))
    code = encode(vae, x, eps=np.zeros((2, 4, 2, 2)))
    np.testing.assert_array_equal(code.z.data, code.mu.data)


def test_encode_vanishing_sigma():
    vae = VAE(SMALL_VAE, seed=1)
    x = Tensor(np.random.default_rng(0).random((1, 3, 8, 8)))
    mu, _ = vae.encode_stats(x)
    eps = np.random.default_rng(1).standard_normal(mu.shape)
    z = mu + ad.exp(Tensor(np.full(mu.shape, -40.0)) * 0.5) * Tensor(eps)
    np.testing.assert_allclose(z.data, mu.data, atol=1e-8)


def test_reparam_gradient_wrt_logvar():
    rng = np.random.default_rng(3)
    mu = rng.normal(size=(1, 4, 2, 2))
    eps = rng.standard_normal(mu.shape)
    lv0 = rng.normal(size=mu.shape)

    def f(logvar):
        return ad.tsum(Tensor(mu) + ad.exp(logvar * 0.5) * Tensor(eps))

    rep = grad_check(f, lv0, tol=1e-6)
    assert rep.passed
    np.testing.assert_allclose(rep.analytic, (0.5 * np.exp(0.5 * lv0) * eps).ravel(), atol=1e-12)


def test_encode_gradient_flows_through_mu_and_logvar():
    vae = VAE(SMALL_VAE, seed=2)
    x = Tensor(np.random.default_rng(0).random((1, 3, 8, 8)))
    code = encode(vae, x, rng=np.random.default_rng(5))
    ad.backward(ad.tsum(code.z))
    assert np.any(vae.params["enc.mu.w"].grad != 0)
    assert np.any(vae.params["enc.logvar.w"].grad != 0)


def test_encode_rejects_indivisible():
    with pytest.raises(ad.ShapeError):
        VAE(SMALL_VAE).encode_stats(Tensor(np.zeros((1, 3, 10, 8))))


@settings(max_examples=10, deadline=None)
@given(h=st.integers(2, 4), w=st.integers(1, 4), seed=st.integers(0, 100))
def test_encode_decode_shapes_and_range(h, w, seed):
    vae = VAE(SMALL_VAE, seed=seed)
    x = Tensor(np.random.default_rng(seed).random((2, 3, 4 * h, 4 * w)))
    code = encode(vae, x, rng=np.random.default_rng(seed))
    assert code.mu.shape == code.logvar.shape == code.z.shape == (2, 4, h, w)
    out = decode(vae, code.z)
    assert out.shape == x.shape
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_single_position_latent_rejected():
    # instance norm over a 1x1 plane is undefined
    with pytest.raises(ad.ShapeError):
        VAE(SMALL_VAE).encode_stats(Tensor(np.zeros((1, 3, 4, 4))))


def test_decode_rejects_wrong_latent():
    with pytest.raises(ad.ShapeError):
        decode(VAE(SMALL_VAE), Tensor(np.zeros((1, 5, 2, 2))))


# ---------------------------------------------------------------- partial nonlocal


def test_pnl_matches_scalar_oracle():
    rng = np.random.default_rng(10)
    c, h, w = 8, 4, 4
    F = rng.normal(size=(1, c, h, w))
    m = (rng.random((1, h, w)) < 0.4).astype(float)
    m[0, 0, 0] = 0
    raw, params = random_pnl_params(rng, c, c // 2)
    out, aff = partial_nonlocal(Tensor(F), m, params, return_affinity=True)
    ref, ref_aff = scalar_nonlocal(F[0].reshape(c, h * w), m[0].ravel(), raw)
    np.testing.assert_allclose(out.data[0].reshape(c, -1), ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(aff.data[0], ref_aff, rtol=0, atol=1e-12)


def test_pnl_uniform_attention_over_equal_keys():
    rng = np.random.default_rng(11)
    c = 4
    vec = rng.normal(size=c)
    F = np.broadcast_to(vec[None, :, None, None], (1, c, 3, 3)).copy()
    _, params = random_pnl_params(rng, c, 2)
    params["nu.w"] = Tensor(np.eye(c).reshape(c, c, 1, 1))
    params["nu.b"] = Tensor(np.zeros(c))
    out, aff = partial_nonlocal(Tensor(F), np.zeros((1, 3, 3)), params, return_affinity=True)
    np.testing.assert_allclose(aff.data, 1 / 9, atol=1e-15)
    mu_f = params["mu.w"].data[:, :, 0, 0] @ vec + params["mu.b"].data
    np.testing.assert_allclose(out.data[0].reshape(c, -1), np.repeat(mu_f[:, None], 9, axis=1), atol=1e-14)


def test_pnl_masked_value_gets_no_gradient():
    rng = np.random.default_rng(12)
    c = 4
    F = Tensor(rng.normal(size=(1, c, 2, 2)), requires_grad=True)
    m = np.array([[[0.0, 1.0], [0.0, 0.0]]])
    _, params = random_pnl_params(rng, c, 2)
    # zero logits isolate the value path
    params["theta.w"] = Tensor(np.zeros((2, c, 1, 1)))
    params["phi.w"] = Tensor(np.zeros((2, c, 1, 1)))
    out = partial_nonlocal(F, m, params)
    ad.backward(ad.tsum(out * out))
    assert np.all(F.grad[0, :, 0, 1] == 0.0)
    assert np.any(F.grad[0, :, 0, 0] != 0.0)


def test_pnl_fully_masked_raises():
    rng = np.random.default_rng(13)
    _, params = random_pnl_params(rng, 4, 2)
    with pytest.raises(ad.FullyMaskedError):
        partial_nonlocal(Tensor(rng.normal(size=(1, 4, 2, 2))), np.ones((1, 2, 2)), params)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pnl_affinity_rows_and_masked_columns(seed):
    rng = np.random.default_rng(seed)
    c, h, w = 6, 3, 4
    m = (rng.random((2, h, w)) < 0.5).astype(float)
    m[:, 0, 0] = 0
    _, params = random_pnl_params(rng, c, 3, scale=0.6)
    _, aff = partial_nonlocal(Tensor(rng.normal(size=(2, c, h, w))), m, params, return_affinity=True)
    np.testing.assert_allclose(aff.data.sum(axis=-1), 1.0, atol=1e-9)
    cols = m.reshape(2, -1) > 0.5
    for n in range(2):
        assert np.all(aff.data[n][:, cols[n]] == 0.0)


# ---------------------------------------------------------------- map_latent


def test_map_latent_zero_mask_is_local_branch():
    net = MappingNet(MappingSpec(z_ch=4, n_res=1), seed=3)
    z = Tensor(np.random.default_rng(0).normal(size=(2, 4, 4, 4)))
    out = map_latent(net, z, np.zeros((2, 4, 4)))
    assert out.data.tobytes() == net.local(z).data.tobytes()


def test_map_latent_checkerboard_selects_branches():
    net = MappingNet(MappingSpec(z_ch=4, n_res=1), seed=4)
    z = Tensor(np.random.default_rng(1).normal(size=(1, 4, 4, 4)))
    m = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)[None]
    out = map_latent(net, z, m).data
    local = net.local(z).data
    glob = net.global_(partial_nonlocal(z, m, net.pnl_params())).data
    sel = np.broadcast_to(m[:, None] > 0.5, out.shape)
    assert np.array_equal(out[sel], glob[sel])
    assert np.array_equal(out[~sel], local[~sel])


def test_map_latent_full_mask_raises():
    net = MappingNet(MappingSpec(z_ch=4, n_res=1), seed=4)
    with pytest.raises(ad.FullyMaskedError):
        map_latent(net, Tensor(np.zeros((1, 4, 2, 2))), np.ones((1, 2, 2)))


def test_downscale_mask_is_conservative():
    m = np.zeros((8, 8))
    m[5, 2] = 1
    out = downscale_mask(m)
    assert out.tolist() == [[0, 0], [1, 0]]


# ---------------------------------------------------------------- discriminators, U-Net


def test_image_disc_exposes_layers():
    d = ImageDiscriminator(seed=0)
    feats = d.features(Tensor(np.random.default_rng(0).random((2, 3, 32, 32))))
    assert len(feats) == 3 and feats[-1].shape == (2, 1, 8, 8)
    assert all(np.all(np.isfinite(f.data)) for f in feats)


def test_latent_disc_scalar_per_sample():
    d = LatentDiscriminator(seed=0)
    assert d(Tensor(np.random.default_rng(0).normal(size=(3, 32, 8, 8)))).shape == (3,)


def test_unet_shape_and_probabilities():
    net = UNet(UnetSpec(widths=(4, 6, 8)), seed=1)
    x = Tensor(np.random.default_rng(2).random((2, 3, 16, 12)))
    logits = unet_forward(net, x)
    assert logits.shape == (2, 16, 12)
    p = ad.sigmoid(logits).data
    assert np.all((p > 0) & (p < 1))


def test_unet_every_parameter_receives_gradient():
    net = UNet(UnetSpec(widths=(4, 6, 8)), seed=1)
    ad.backward(ad.tsum(net(Tensor(np.random.default_rng(3).random((1, 3, 16, 16))))))
    dead = [k for k, p in net.params.items() if p.grad is None or not np.any(p.grad != 0)]
    assert dead == []


def test_unet_rejects_indivisible():
    with pytest.raises(ad.ShapeError):
        UNet()(Tensor(np.zeros((1, 3, 10, 8))))


# ---------------------------------------------------------------- restore


def _models(seed=0):
    spec = VaeSpec(widths=(4, 8), z_ch=4, n_res=1)
    return VAE(spec, seed), MappingNet(MappingSpec(z_ch=4, n_res=1), seed + 1), VAE(spec, seed + 2)


def test_restore_untrained_valid_image():
    v1, m, v2 = _models()
    img = np.random.default_rng(0).random((16, 16, 3))
    mask = np.zeros((16, 16))
    mask[3:6, 3:6] = 1
    out = restore(img, v1, m, v2, mask)
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_restore_pads_odd_sizes():
    v1, m, v2 = _models()
    out = restore(np.random.default_rng(1).random((13, 18, 3)), v1, m, v2)
    assert out.shape == (13, 18, 3)


def test_restore_deterministic():
    v1, m, v2 = _models(3)
    img = np.random.default_rng(2).random((16, 16, 3))
    mask = np.zeros((16, 16))
    mask[8:, :5] = 1
    assert restore(img, v1, m, v2, mask).tobytes() == restore(img, v1, m, v2, mask).tobytes()


def test_detect_probabilities():
    p = detect(UNet(UnetSpec(widths=(4, 6, 8))), np.random.default_rng(0).random((12, 12, 3)))
    assert p.shape == (12, 12) and np.all((p > 0) & (p < 1))


def test_all_forwards_finite():
    rng = np.random.default_rng(7)
    v1, m, v2 = _models(5)
    x = Tensor(rng.random((2, 3, 16, 16)))
    code = encode(v1, x, rng=rng)
    mask = np.zeros((2, 4, 4))
    mask[:, 1, 1] = 1
    for t in (code.mu, code.logvar, code.z, decode(v1, code.z), map_latent(m, code.mu, mask)):
        assert np.all(np.isfinite(t.data))


def test_restoration_composite_gradient():
    """Gradient of the full restore chain wrt the input passes finite differences on 8x8."""
    rng = np.random.default_rng(8)
    v1, m, v2 = _models(7)
    mask = np.zeros((1, 2, 2))
    mask[0, 0, 1] = 1
    target = rng.random((1, 3, 8, 8))

    def f(x):
        mu, _ = v1.encode_stats(x)
        out = v2.decode(map_latent(m, mu, mask))
        return ad.tsum(ad.square(out - Tensor(target)))

    point = rng.random((1, 3, 8, 8))
    rep = grad_check(f, point, coords=rng.choice(point.size, 40, replace=False))
    assert rep.passed, rep.max_error
