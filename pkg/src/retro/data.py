"""Procedural clean-image corpus: gradients, shapes and text glyphs."""

from __future__ import annotations

import string
from typing import List

import numpy as np
from PIL import Image, ImageDraw, ImageFont

_SUPERSAMPLE = 4


def _color(rng) -> tuple:
    return tuple(int(v) for v in rng.integers(0, 256, 3))


def shape_image(seed: int, size: int = 32) -> np.ndarray:
    """One RGB image in [0, 1]: a two-colour gradient with 1-3 shapes and maybe a glyph."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    s = size * _SUPERSAMPLE
    yy, xx = np.meshgrid(np.linspace(0, 1, s), np.linspace(0, 1, s), indexing="ij")
    ang = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)), 0, 1)[..., None]
    c0, c1 = np.array(_color(rng)), np.array(_color(rng))
    bg = ((1 - t) * c0 + t * c1).astype(np.uint8)
    im = Image.fromarray(bg, "RGB")
    draw = ImageDraw.Draw(im)
    for _ in range(int(rng.integers(1, 4))):
        kind = int(rng.integers(3))
        x0, y0 = rng.uniform(-0.1, 0.7, 2) * s
        w, h = rng.uniform(0.2, 0.6, 2) * s
        box = [x0, y0, x0 + w, y0 + h]
        col = _color(rng)
        if kind == 0:
            draw.rectangle(box, fill=col)
        elif kind == 1:
            draw.ellipse(box, fill=col)
        else:
            draw.polygon([(x0, y0 + h), (x0 + w / 2, y0), (x0 + w, y0 + h)], fill=col)
    if rng.uniform() < 0.5:
        ch = string.ascii_uppercase[int(rng.integers(26))]
        font = ImageFont.load_default(size=int(s * 0.6))
        draw.text((rng.uniform(0, 0.4) * s, rng.uniform(0, 0.2) * s), ch, fill=_color(rng), font=font)
    im = im.resize((size, size), Image.BOX)
    return np.asarray(im, dtype=np.float64) / 255.0


def shapes_corpus(n: int, seed: int = 0, size: int = 32) -> List[np.ndarray]:
    return [shape_image(int(np.random.SeedSequence([seed, i]).generate_state(1)[0]), size) for i in range(n)]
