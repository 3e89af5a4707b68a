"""Toy datasets and end-to-end runs shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .data import shapes_corpus
from .degrade import R_RANGE, X_RANGE, RecipeRange, derive_seed, make_domain_r, synthesize_pair
from .losses import LossWeights
from .metrics import latent_vectors, psnr, sliced_wasserstein, ssim
from .nets import VAE, image_to_tensor, restore
from .training import DetectorResult, TrainConfig, train_detector, train_stage1, train_stage2


# Desk-scale recipes used by the acceptance suite and as CLI defaults.
TOY_STAGE1 = TrainConfig(lr=4e-3, weights=LossWeights(kl=0.01, gan=0.1))
TOY_STAGE2 = TrainConfig(lr=5e-3)
TOY_DETECTOR = TrainConfig(lr=1e-3, epochs=200, decay_start=100, finetune_epochs=20)
TOY_ABLATION = dataclasses.replace(TOY_STAGE1, epochs=30, decay_start=15, weights=LossWeights(gan=0.1))


@dataclass
class ToyData:
    y: np.ndarray  # clean, N x H x W x C
    x: np.ndarray  # synthetic degraded, paired with y
    m: np.ndarray  # N x H x W binary structured-defect masks of x
    r: np.ndarray  # pseudo-real degraded, unpaired
    r_m: np.ndarray  # masks of r (detector finetuning only)
    x_seeds: List[int] = dataclasses.field(default_factory=list)
    r_seeds: List[int] = dataclasses.field(default_factory=list)


def make_toy_data(n: int, seed: int, x_range: RecipeRange = X_RANGE, r_range: RecipeRange = R_RANGE, size: int = 32) -> ToyData:
    """``n`` clean images with an x pair each, and ``n`` pseudo-real images from other clean images."""
    clean = shapes_corpus(n, seed=seed, size=size)
    clean_r = shapes_corpus(n, seed=seed + 7919, size=size)
    x_seeds = [derive_seed(seed, i) for i in range(n)]
    r_seeds = [derive_seed(seed + 1, i) for i in range(n)]
    pairs = [synthesize_pair(img, x_range.sample(s)) for img, s in zip(clean, x_seeds)]
    r_pairs = [synthesize_pair(img, r_range.sample(s)) for img, s in zip(clean_r, r_seeds)]

    def stack(arrs, shape):
        return np.stack(arrs) if arrs else np.zeros((0,) + shape)

    img, msk = (size, size, 3), (size, size)
    return ToyData(
        y=stack([p.clean for p in pairs], img),
        x=stack([p.degraded for p in pairs], img),
        m=stack([p.mask.binary for p in pairs], msk),
        r=stack([p.degraded for p in r_pairs], img),
        r_m=stack([p.mask.binary for p in r_pairs], msk),
        x_seeds=x_seeds,
        r_seeds=r_seeds,
    )


def latent_means(vae: VAE, images: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        mu, _ = vae.encode_stats(image_to_tensor(images))
    return mu.data


def latent_samples(vae: VAE, images: np.ndarray, seed: int = 0) -> np.ndarray:
    """One posterior draw per latent entry, mu + sigma * eps, with a fixed noise seed."""
    with ad.no_grad():
        mu, logvar = vae.encode_stats(image_to_tensor(images))
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu.data + np.exp(0.5 * logvar.data) * eps


def latent_gap(vae1: VAE, r: np.ndarray, x: np.ndarray, projections: int = 64, seed: int = 0, sample: bool = False) -> float:
    """Sliced Wasserstein between the pooled per-position latents of two image sets.

    With ``sample`` the latents are posterior draws (the aggregate posterior
    of a VAE); otherwise encoder means, which is all a plain autoencoder has.
    """
    codes = (lambda imgs: latent_samples(vae1, imgs, seed)) if sample else (lambda imgs: latent_means(vae1, imgs))
    return sliced_wasserstein(latent_vectors(codes(r)), latent_vectors(codes(x)), projections, seed)


@dataclass
class EvalResult:
    psnr_in: List[float]
    psnr_out: List[float]
    ssim_in: List[float]
    ssim_out: List[float]
    restored: np.ndarray

    def summary(self) -> Dict[str, float]:
        return {
            "psnr_degraded": float(np.mean(self.psnr_in)),
            "psnr_restored": float(np.mean(self.psnr_out)),
            "ssim_degraded": float(np.mean(self.ssim_in)),
            "ssim_restored": float(np.mean(self.ssim_out)),
        }


def evaluate_restoration(vae1, mapping, vae2, data: ToyData, masks: Optional[np.ndarray] = None) -> EvalResult:
    masks = data.m if masks is None else masks
    restored = np.stack([restore(x, vae1, mapping, vae2, m) for x, m in zip(data.x, masks)])
    return EvalResult(
        [psnr(x, y) for x, y in zip(data.x, data.y)],
        [psnr(o, y) for o, y in zip(restored, data.y)],
        [ssim(x, y) for x, y in zip(data.x, data.y)],
        [ssim(o, y) for o, y in zip(restored, data.y)],
        restored,
    )


@dataclass
class PipelineRun:
    stage1: object
    stage2: object
    evaluation: EvalResult


def run_pipeline(train: ToyData, test: ToyData, cfg1: TrainConfig, cfg2: TrainConfig, log_stream=None) -> PipelineRun:
    s1 = train_stage1(train.x, train.r, train.y, cfg1, log_stream)
    s2 = train_stage2(train.x, train.y, train.m, s1.vae1, s1.vae2, cfg2, log_stream)
    return PipelineRun(s1, s2, evaluate_restoration(s1.vae1, s2.mapping, s1.vae2, test))


ABLATION_VARIANTS = ("ae", "vae", "vae_adv")


def ablation_config(base: TrainConfig, variant: str) -> TrainConfig:
    w = base.weights
    if variant == "ae":
        w = dataclasses.replace(w, kl=0.0, latent_adv=0.0)
    elif variant == "vae":
        w = dataclasses.replace(w, latent_adv=0.0)
    elif variant != "vae_adv":
        raise ValueError(f"unknown ablation variant {variant!r}")
    return dataclasses.replace(base, weights=w)


def run_ablation(train: ToyData, probe: ToyData, base: TrainConfig, variants=ABLATION_VARIANTS) -> Dict[str, float]:
    """Train VAE1 per variant and measure the r/x latent gap on ``probe``.

    Variational variants are measured on posterior samples, the plain
    autoencoder on its (deterministic) codes.
    """
    out = {}
    for v in variants:
        cfg = ablation_config(base, v)
        s1 = train_stage1(train.x, train.r, train.y, cfg)
        out[v] = latent_gap(s1.vae1, probe.r, probe.x, sample=cfg.weights.kl > 0)
    return out


def run_detector(train: ToyData, test: ToyData, config: TrainConfig, log_stream=None) -> DetectorResult:
    """Synthetic phase on train x, finetune on train r; AUC on held-out x and r after each phase."""
    holdout = {"synthetic": (test.x, test.m), "pseudo_real": (test.r, test.r_m)}
    return train_detector(train.x, train.m, config, train.r, train.r_m, holdout, log_stream)
