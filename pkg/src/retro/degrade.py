"""Old-photo degradation synthesis.

Structured defects (scratches, feathered holes) are tracked in a
:class:`DefectMask`; unstructured ones (fading, blur, grain) are not.
Images are H x W x C float arrays in [0, 1]. Every random choice comes from
a per-stage seed stream derived from ``Recipe.seed``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

BLEND_MODES = ("addition", "lighten_only", "screen")

SEPIA = np.array(
    [
        [0.393, 0.769, 0.189],
        [0.349, 0.686, 0.168],
        [0.272, 0.534, 0.131],
    ]
)


class ParameterError(ValueError):
    pass


@dataclass
class DefectMask:
    """``alpha`` is the feathered compositing weight; ``binary`` is alpha > 0.5."""

    alpha: np.ndarray

    @property
    def binary(self) -> np.ndarray:
        return (self.alpha > 0.5).astype(np.uint8)

    @classmethod
    def empty(cls, h: int, w: int) -> "DefectMask":
        return cls(np.zeros((h, w)))

    def merge(self, alpha: np.ndarray) -> "DefectMask":
        return DefectMask(np.maximum(self.alpha, alpha))


@dataclass(frozen=True)
class Recipe:
    seed: int = 0
    scratch_count: int = 0
    blend_mode: str = "screen"
    opacity_range: Tuple[float, float] = (1.0, 1.0)
    hole_count: int = 0
    hole_radius: Tuple[float, float] = (3.0, 6.0)
    feather_radius: float = 0.0
    grain_sigma: float = 0.0
    blur_sigma: float = 0.0
    fade: float = 0.0
    elastic: Tuple[float, float] = (0.0, 3.0)
    texture_set: str = "a"

    def __post_init__(self):
        lo, hi = self.opacity_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ParameterError(f"opacity_range {self.opacity_range} must satisfy 0 <= lo <= hi <= 1")
        if self.hole_radius[0] <= 0 or self.hole_radius[0] > self.hole_radius[1]:
            raise ParameterError(f"hole_radius {self.hole_radius} must be positive and ordered")
        if self.blend_mode not in BLEND_MODES:
            raise ParameterError(f"unknown blend mode {self.blend_mode!r}")
        if min(self.scratch_count, self.hole_count) < 0:
            raise ParameterError("counts must be >= 0")
        if min(self.feather_radius, self.grain_sigma, self.blur_sigma) < 0:
            raise ParameterError("feather, grain and blur must be >= 0")
        if not 0.0 <= self.fade <= 1.0:
            raise ParameterError(f"fade {self.fade} outside [0, 1]")
        if self.elastic[0] < 0 or self.elastic[1] <= 0:
            raise ParameterError(f"elastic {self.elastic} needs amplitude >= 0, sigma > 0")


IDENTITY_RECIPE = Recipe()


@dataclass(frozen=True)
class RecipeRange:
    """Distribution of recipes; :meth:`sample` draws one per image."""

    scratch_count: Tuple[int, int] = (1, 3)
    blend_modes: Tuple[str, ...] = BLEND_MODES
    opacity_range: Tuple[float, float] = (0.7, 1.0)
    hole_count: Tuple[int, int] = (0, 1)
    hole_radius: Tuple[float, float] = (3.0, 6.0)
    feather_radius: Tuple[float, float] = (0.0, 2.0)
    grain_sigma: Tuple[float, float] = (0.01, 0.04)
    blur_sigma: Tuple[float, float] = (0.0, 0.8)
    fade: Tuple[float, float] = (0.2, 0.6)
    elastic_amplitude: Tuple[float, float] = (0.0, 2.0)
    elastic_sigma: float = 3.0
    texture_set: str = "a"

    def sample(self, seed: int) -> Recipe:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

        def u(lohi):
            return float(rng.uniform(*lohi)) if lohi[1] > lohi[0] else float(lohi[0])

        return Recipe(
            seed=int(seed),
            scratch_count=int(rng.integers(self.scratch_count[0], self.scratch_count[1] + 1)),
            blend_mode=str(self.blend_modes[int(rng.integers(len(self.blend_modes)))]),
            opacity_range=tuple(self.opacity_range),
            hole_count=int(rng.integers(self.hole_count[0], self.hole_count[1] + 1)),
            hole_radius=tuple(self.hole_radius),
            feather_radius=u(self.feather_radius),
            grain_sigma=u(self.grain_sigma),
            blur_sigma=u(self.blur_sigma),
            fade=u(self.fade),
            elastic=(u(self.elastic_amplitude), self.elastic_sigma),
            texture_set=self.texture_set,
        )


# synthetic corrupted domain X
X_RANGE = RecipeRange()
# pseudo-real domain R: disjoint continuous ranges and held-out scratch textures
R_RANGE = RecipeRange(
    scratch_count=(2, 4),
    opacity_range=(0.45, 0.7),
    hole_count=(0, 1),
    feather_radius=(2.0, 3.0),
    grain_sigma=(0.045, 0.07),
    blur_sigma=(0.9, 1.3),
    fade=(0.65, 0.85),
    elastic_amplitude=(2.0, 3.0),
    texture_set="b",
)


@dataclass
class DegradedPair:
    clean: np.ndarray
    degraded: np.ndarray
    mask: DefectMask
    recipe: Recipe


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint32)[0])


def _stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


def _as_hwc(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


# ---------------------------------------------------------------- structured defects


def blend_scratch(image: np.ndarray, texture: np.ndarray, mode: str, opacity: float) -> np.ndarray:
    """Blend a scratch texture over every channel of ``image``.

    With t = opacity * texture: addition is min(c + t, 1); screen is
    1 - (1 - c)(1 - t); lighten_only is max(c, opacity * t + (1 - opacity) * c).
    """
    if not 0.0 <= opacity <= 1.0:
        raise ParameterError(f"opacity {opacity} outside [0, 1]")
    img = _as_hwc(image)
    tex = _fit_texture(np.asarray(texture, dtype=np.float64), img.shape[:2])[..., None]
    t = opacity * tex
    if mode == "addition":
        out = np.minimum(img + t, 1.0)
    elif mode == "screen":
        out = 1.0 - (1.0 - img) * (1.0 - t)
    elif mode == "lighten_only":
        out = np.maximum(img, opacity * t + (1.0 - opacity) * img)
    else:
        raise ParameterError(f"unknown blend mode {mode!r}")
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(image) == 3 else out[..., 0]


def _fit_texture(tex: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    if tex.shape == (h, w):
        return tex
    reps = (math.ceil(h / tex.shape[0]), math.ceil(w / tex.shape[1]))
    return np.tile(tex, reps)[:h, :w]


def elastic_distort(texture: np.ndarray, amplitude: float, sigma: float, seed: int) -> np.ndarray:
    """Resample through a smoothed random displacement field (bilinear, edge-clamped).

    Each displacement component is Gaussian-filtered white noise rescaled so
    its largest magnitude equals ``amplitude`` pixels.
    """
    if amplitude < 0:
        raise ParameterError("amplitude must be >= 0")
    tex = np.asarray(texture, dtype=np.float64)
    if amplitude == 0:
        return tex.copy()
    rng = _stream(seed, 7)
    h, w = tex.shape
    disp = []
    for _ in range(2):
        field_ = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
        peak = np.abs(field_).max()
        disp.append(field_ * (amplitude / peak) if peak > 0 else field_)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    coords = np.stack([yy + disp[0], xx + disp[1]])
    return ndimage.map_coordinates(tex, coords, order=1, mode="nearest")


def _segment_distance(py, px, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros_like(py) if denom == 0 else np.clip(((py - a[0]) * ab[0] + (px - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(py - (a[0] + t * ab[0]), px - (a[1] + t * ab[1]))


def scratch_texture(shape: Tuple[int, int], seed: int, style: str = "a") -> np.ndarray:
    """Binary procedural scratch: a jittered polyline of varying width.

    Style "a" draws near-straight thin strokes; "b" (held out for the
    pseudo-real domain) draws wandering, thicker ones.
    """
    h, w = shape
    rng = _stream(seed, 11)
    if style == "a":
        n_seg, turn, width = 3, 0.25, (0.9, 1.4)
    elif style == "b":
        n_seg, turn, width = 6, 0.9, (1.2, 2.0)
    else:
        raise ParameterError(f"unknown texture style {style!r}")
    length = rng.uniform(0.6, 1.2) * max(h, w)
    start = np.array([rng.uniform(0, h), rng.uniform(0, w)])
    angle = rng.uniform(0, 2 * np.pi)
    pts = [start]
    for _ in range(n_seg):
        angle += rng.normal(0, turn)
        step = length / n_seg
        pts.append(pts[-1] + step * np.array([np.sin(angle), np.cos(angle)]))
    py, px = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    tex = np.zeros(shape)
    for a, b in zip(pts[:-1], pts[1:]):
        half = 0.5 * rng.uniform(*width)
        tex = np.maximum(tex, (_segment_distance(py, px, a, b) <= half).astype(np.float64))
    return tex


def load_textures(paths: Sequence) -> List[np.ndarray]:
    """Read user scratch textures (PNG, any mode) as H x W arrays in [0, 1]."""
    from .io import read_image

    out = []
    for p in paths:
        img = read_image(Path(p))
        out.append(img.mean(axis=2) if img.ndim == 3 else img)
    return out


def paper_texture(shape: Tuple[int, ...], seed: int) -> np.ndarray:
    """Off-white paper with low-frequency mottling, same shape as the image."""
    rng = _stream(seed, 13)
    h, w = shape[:2]
    base = np.array([0.93, 0.9, 0.82]) * rng.uniform(0.9, 1.0)
    mottle = ndimage.gaussian_filter(rng.standard_normal((h, w)), 2.0, mode="wrap") * 0.1
    tex = np.clip(base[None, None, :] + mottle[..., None], 0.0, 1.0)
    if len(shape) == 2 or shape[2] == 1:
        tex = tex.mean(axis=2, keepdims=True)
    return tex if len(shape) == 3 else tex[..., 0]


def hole_alpha(shape: Tuple[int, int], center, radius: float, feather_radius: float, seed: int) -> np.ndarray:
    """Feathered random blob: 1 inside, linear falloff over ``feather_radius``.

    The boundary radius per angle shrinks the nominal radius by up to 35%
    with smoothed noise, so alpha is 0 beyond radius + feather everywhere.
    """
    if radius <= 0:
        raise ParameterError("radius must be > 0")
    rng = _stream(seed, 17)
    n_ang = 64
    bumps = ndimage.gaussian_filter1d(rng.uniform(0, 1, n_ang), 3.0, mode="wrap")
    bumps = (bumps - bumps.min()) / (np.ptp(bumps) + 1e-12)
    h, w = shape
    py, px = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = py - center[0], px - center[1]
    d = np.hypot(dy, dx)
    ang = (np.arctan2(dy, dx) % (2 * np.pi)) / (2 * np.pi) * n_ang
    i0 = np.floor(ang).astype(int) % n_ang
    frac = ang - np.floor(ang)
    bump = (1 - frac) * bumps[i0] + frac * bumps[(i0 + 1) % n_ang]
    edge = radius * (1.0 - 0.35 * bump)
    if feather_radius <= 0:
        return (d <= edge).astype(np.float64)
    return np.clip(1.0 - (d - edge) / feather_radius, 0.0, 1.0)


def punch_hole(image, paper, center, radius: float, feather_radius: float, seed: int, mask: Optional[DefectMask] = None):
    """Composite ``paper`` through a feathered blob; returns (image, mask)."""
    img = np.asarray(image, dtype=np.float64)
    alpha = hole_alpha(img.shape[:2], center, radius, feather_radius, seed)
    a = alpha[..., None] if img.ndim == 3 else alpha
    out = (1.0 - a) * img + a * np.asarray(paper, dtype=np.float64)
    if mask is None:
        mask = DefectMask.empty(*img.shape[:2])
    return out, mask.merge(alpha)


# ---------------------------------------------------------------- unstructured defects


def add_grain(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    img = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    noise = _stream(seed, 19).normal(0.0, sigma, img.shape)
    return np.clip(img + noise, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian, kernel truncated at ceil(3 sigma), edge-replicated."""
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    img = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            acc += kv * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def sepia(image: np.ndarray) -> np.ndarray:
    img = _as_hwc(image)
    if img.shape[2] == 3:
        return np.clip(img @ SEPIA.T, 0.0, 1.0)
    return img.copy()


def fade(image: np.ndarray, strength: float) -> np.ndarray:
    """Blend toward a sepia-toned copy with contrast reduced to 60% about 0.5."""
    if not 0.0 <= strength <= 1.0:
        raise ParameterError(f"fade strength {strength} outside [0, 1]")
    img = _as_hwc(image)
    if strength == 0:
        out = img.copy()
    else:
        faded = 0.5 + 0.6 * (sepia(img) - 0.5)
        out = (1.0 - strength) * img + strength * faded
    return out if np.ndim(image) == 3 else out[..., 0]


# ---------------------------------------------------------------- pipeline


def _apply_scratches(img: np.ndarray, recipe: Recipe, mask: DefectMask, textures: Optional[Sequence[np.ndarray]] = None):
    h, w = img.shape[:2]
    amp, esig = recipe.elastic
    for i in range(recipe.scratch_count):
        rng = _stream(recipe.seed, 1, i)
        sub = int(rng.integers(2**31))
        if textures:
            tex = _fit_texture(textures[int(rng.integers(len(textures)))], (h, w))
        else:
            tex = scratch_texture((h, w), sub, recipe.texture_set)
        tex = elastic_distort(tex, amp, esig, sub)
        tex = (tex > 0.5).astype(np.float64)
        opacity = float(rng.uniform(*recipe.opacity_range))
        img = blend_scratch(img, tex, recipe.blend_mode, opacity)
        mask = mask.merge(tex)
    return img, mask


def _apply_holes(img: np.ndarray, recipe: Recipe, mask: DefectMask):
    h, w = img.shape[:2]
    for i in range(recipe.hole_count):
        rng = _stream(recipe.seed, 2, i)
        center = (rng.uniform(0, h), rng.uniform(0, w))
        radius = rng.uniform(*recipe.hole_radius)
        sub = int(rng.integers(2**31))
        img, mask = punch_hole(img, paper_texture(img.shape, sub), center, radius, recipe.feather_radius, sub, mask)
    return img, mask


def synthesize_pair(clean: np.ndarray, recipe: Recipe, textures: Optional[Sequence[np.ndarray]] = None) -> DegradedPair:
    """fade -> blur -> scratches -> holes -> grain; the mask tracks scratches and holes."""
    y = np.asarray(clean, dtype=np.float64)
    if y.min() < 0 or y.max() > 1:
        raise ParameterError("clean image must lie in [0, 1]")
    img = _as_hwc(y)
    mask = DefectMask.empty(*img.shape[:2])
    img = fade(img, recipe.fade)
    img = gaussian_blur(img, recipe.blur_sigma)
    img, mask = _apply_scratches(img, recipe, mask, textures)
    img, mask = _apply_holes(img, recipe, mask)
    img = add_grain(img, recipe.grain_sigma, int(_stream(recipe.seed, 3).integers(2**31)))
    img = np.clip(img, 0.0, 1.0)
    if y.ndim == 2:
        img = img[..., 0]
    return DegradedPair(y.copy(), img, mask, recipe)


def make_domain_r(clean: np.ndarray, recipe_r: Recipe, textures: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """Pseudo-real corrupted image: same machinery, pairing discarded."""
    return synthesize_pair(clean, recipe_r, textures).degraded


def unstructured_only(recipe: Recipe) -> Recipe:
    """The recipe with scratches and holes removed (same seed streams)."""
    return dataclasses.replace(recipe, scratch_count=0, hole_count=0)


def build_pairs(images: Sequence[np.ndarray], rng_range: RecipeRange, base_seed: int) -> List[DegradedPair]:
    return [synthesize_pair(img, rng_range.sample(derive_seed(base_seed, i))) for i, img in enumerate(images)]
