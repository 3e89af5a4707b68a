"""Training objectives. All reductions are means so weights do not depend on resolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nets import LatentCode, encode, map_latent


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0  # reconstruction
    lambda1: float = 60.0  # latent l1 in the mapping loss
    lambda2: float = 10.0  # feature matching
    kl: float = 1.0
    gan: float = 1.0
    latent_adv: float = 1.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {v}")


def kl_loss(code: LatentCode) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)), averaged over latent entries."""
    mu, logvar = code.mu, code.logvar
    per = ad.square(mu) + ad.exp(logvar) - logvar - 1.0
    return ad.mean(per) * 0.5


def recon_l1(out: Tensor, target) -> Tensor:
    target = ad.as_tensor(target)
    if out.shape != target.shape:
        raise ShapeError(f"recon_l1: {out.shape} vs {target.shape}")
    return ad.mean(ad.tabs(out - target))


def _sq_to(x: Tensor, target: float) -> Tensor:
    return ad.mean(ad.square(x - target))


def lsgan_d(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return _sq_to(d_real, 1.0) + _sq_to(d_fake, 0.0)


def lsgan_g(d_fake: Tensor) -> Tensor:
    return _sq_to(d_fake, 1.0)


def latent_adv_loss(d_on_zx: Tensor, d_on_zr: Tensor):
    """(discriminator loss, encoder loss) for the latent domain discriminator.

    The discriminator labels real-photo codes 1 and synthetic codes 0; the
    encoder is scored against the swapped labels.
    """
    d_loss = _sq_to(d_on_zx, 0.0) + _sq_to(d_on_zr, 1.0)
    e_loss = _sq_to(d_on_zx, 1.0) + _sq_to(d_on_zr, 0.0)
    return d_loss, e_loss


def feature_matching(stack_fake: Sequence[Tensor], stack_real: Sequence[Tensor]) -> Tensor:
    """Sum over layers of the per-activation mean absolute gap."""
    if len(stack_fake) != len(stack_real):
        raise ShapeError(f"feature_matching: {len(stack_fake)} vs {len(stack_real)} layers")
    total = None
    for a, b in zip(stack_fake, stack_real):
        b = ad.as_tensor(b)
        if a.shape != b.shape:
            raise ShapeError(f"feature_matching: layer shapes {a.shape} vs {b.shape}")
        term = ad.mean(ad.tabs(a - b))
        total = term if total is None else total + term
    return total


def focal_loss(logits: Tensor, target: np.ndarray, gamma: float = 2.0, alpha_pos: float = 0.25, alpha_neg: Optional[float] = None) -> Tensor:
    """Mean focal loss -a_t (1 - p_t)^gamma log p_t over pixels.

    ``alpha_neg`` defaults to ``1 - alpha_pos``.
    """
    y = np.asarray(target, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"focal_loss: target {y.shape} vs logits {logits.shape}")
    if alpha_neg is None:
        alpha_neg = 1.0 - alpha_pos
    sign = np.where(y > 0.5, 1.0, -1.0)
    signed = logits * Tensor(sign)  # log p_t = log_sigmoid(sign * logit)
    log_pt = ad.log_sigmoid(signed)
    pt = ad.sigmoid(signed)
    a_t = Tensor(np.where(y > 0.5, alpha_pos, alpha_neg))
    if gamma == 0:
        per = a_t * log_pt
    else:
        per = a_t * ad.power(1.0 - pt, gamma) * log_pt
    return -ad.mean(per)


# ---------------------------------------------------------------- composite objectives


@dataclass
class VaePass:
    code: LatentCode
    recon: Tensor
    kl: Tensor
    l1: Tensor


def vae_pass(vae, x: Tensor, eps: np.ndarray) -> VaePass:
    code = encode(vae, x, eps=eps)
    rec = vae.decode(code.z)
    return VaePass(code, rec, kl_loss(code), recon_l1(rec, x))


def vae_disc_loss(d_img, real: Tensor, passes: Sequence[VaePass]) -> Tensor:
    """Image discriminator loss on detached reconstructions."""
    fake = ad.concat([p.recon.detach() for p in passes], axis=0)
    return lsgan_d(d_img(real.detach()), d_img(fake))


def vae_eg_loss(passes: Sequence[VaePass], d_img, weights: LossWeights) -> Dict[str, Tensor]:
    """Encoder+generator loss for one VAE: KL + alpha * l1 + LSGAN per batch."""
    parts = {}
    total = None
    for p in passes:
        t = p.kl * weights.kl + p.l1 * weights.alpha
        if weights.gan > 0 and d_img is not None:
            g = lsgan_g(d_img(p.recon))
            parts["gan"] = g if "gan" not in parts else parts["gan"] + g
            t = t + g * weights.gan
        total = t if total is None else total + t
    parts["kl"] = _sum([p.kl for p in passes])
    parts["l1"] = _sum([p.l1 for p in passes])
    parts["eg"] = total
    return parts


def _sum(ts):
    out = ts[0]
    for t in ts[1:]:
        out = out + t
    return out


def vae1_objective(r: Tensor, x: Tensor, nets: Dict, weights: LossWeights, eps_r: np.ndarray, eps_x: np.ndarray) -> Dict[str, Tensor]:
    """All player losses of the corrupted-domain VAE in one evaluation.

    ``nets`` needs ``vae1``, ``d_img1`` and ``d_latent``. Returns ``eg``
    (encoder+generator, including the latent adversarial term), ``d_img`` and
    ``d_latent``. Discriminator losses see detached inputs.
    """
    vae, d_img, d_lat = nets["vae1"], nets.get("d_img1"), nets.get("d_latent")
    pr, px = vae_pass(vae, r, eps_r), vae_pass(vae, x, eps_x)
    out = vae_eg_loss([pr, px], d_img, weights)
    if weights.latent_adv > 0 and d_lat is not None:
        _, e_loss = latent_adv_loss(d_lat(px.code.mu), d_lat(pr.code.mu))
        out["e_adv"] = e_loss
        out["eg"] = out["eg"] + e_loss * weights.latent_adv
        out["d_latent"], _ = latent_adv_loss(d_lat(px.code.mu.detach()), d_lat(pr.code.mu.detach()))
    if weights.gan > 0 and d_img is not None:
        out["d_img"] = vae_disc_loss(d_img, ad.concat([r, x], axis=0), [pr, px])
    return out


FeatureHook = Callable[[Tensor], List[Tensor]]


@dataclass
class MappingPass:
    zx: Tensor
    zy: Tensor
    mapped: Tensor
    fake: Optional[Tensor]
    target: Optional[Tensor]


def mapping_pass(x: Tensor, y: Tensor, m_latent: np.ndarray, nets: Dict, decode_images: bool = True) -> MappingPass:
    """Encode with both (frozen) VAEs, map the corrupted code, decode with the clean generator.

    Latent inputs and targets are encoder means.
    """
    vae1, vae2, mapping = nets["vae1"], nets["vae2"], nets["mapping"]
    with ad.no_grad():
        zx, _ = vae1.encode_stats(x)
        zy, _ = vae2.encode_stats(y)
        target = vae2.decode(zy) if decode_images else None
    mapped = map_latent(mapping, zx, m_latent)
    fake = vae2.decode(mapped) if decode_images else None
    return MappingPass(zx, zy, mapped, fake, target)


def mapping_disc_loss(d_map, y: Tensor, mp: MappingPass) -> Tensor:
    return lsgan_d(d_map(y), d_map(mp.fake.detach()))


def mapping_g_loss(mp: MappingPass, d_map, weights: LossWeights, feature_hook: Optional[FeatureHook] = None) -> Dict[str, Tensor]:
    """lambda1 * latent l1 + LSGAN + lambda2 * feature matching.

    Features of the translated image are matched against those of the clean
    VAE's own reconstruction. ``feature_hook`` adds an external extractor's
    activations to the matched stack.
    """
    latent_l1 = recon_l1(mp.mapped, mp.zy)
    out = {"latent_l1": latent_l1}
    total = latent_l1 * weights.lambda1
    if mp.fake is not None and d_map is not None and (weights.gan > 0 or weights.lambda2 > 0):
        feats_fake = d_map.features(mp.fake)
        with ad.no_grad():
            feats_real = d_map.features(mp.target)
        fm = feature_matching(feats_fake[:-1], feats_real[:-1])
        if feature_hook is not None:
            with ad.no_grad():
                hook_real = feature_hook(mp.target)
            fm = fm + feature_matching(feature_hook(mp.fake), hook_real)
        g_gan = lsgan_g(feats_fake[-1])
        out["gan"], out["fm"] = g_gan, fm
        total = total + g_gan * weights.gan + fm * weights.lambda2
    out["g"] = total
    return out


def mapping_loss(x: Tensor, y: Tensor, m_latent: np.ndarray, nets: Dict, weights: LossWeights, feature_hook: Optional[FeatureHook] = None) -> Dict[str, Tensor]:
    """All player losses of the mapping stage in one evaluation (``g`` and ``d_map``)."""
    need_images = weights.gan > 0 or weights.lambda2 > 0
    mp = mapping_pass(x, y, m_latent, nets, decode_images=need_images)
    out = mapping_g_loss(mp, nets.get("d_map"), weights, feature_hook)
    if need_images and weights.gan > 0:
        out["d_map"] = mapping_disc_loss(nets["d_map"], y, mp)
    return out
