"""PNG images, PGM (P5) masks and the dataset manifest."""

from __future__ import annotations

from pathlib import Path
from typing import List, NamedTuple

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """8-bit gray or RGB PNG -> float array in [0, 1] (H x W x C)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def write_image(path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary mask -> P5 PGM with maxval 255 (defect pixels 255)."""
    arr = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """P5 PGM -> binary H x W uint8 mask (pixel > 127 is a defect)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pix = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return (pix.reshape(h, w) > maxval // 2).astype(np.uint8)


class ManifestEntry(NamedTuple):
    clean: str
    degraded: str
    mask: str
    seed: int


def write_manifest(path, entries: List[ManifestEntry]) -> None:
    with open(path, "w") as f:
        for e in entries:
            f.write(f"{e.clean} {e.degraded} {e.mask} {e.seed}\n")


def read_manifest(path) -> List[ManifestEntry]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            c, d, m, s = line.split()
            out.append(ManifestEntry(c, d, m, int(s)))
    return out
