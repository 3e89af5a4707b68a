"""Networks: the two VAEs, discriminators, latent mapping network and detector U-Net.

Tensors are NCHW float64. Images enter the public helpers (:func:`restore`,
:func:`image_to_tensor`) as H x W x C arrays in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_BIAS, FullyMaskedError, ShapeError, Tensor


# ---------------------------------------------------------------- specs


@dataclass(frozen=True)
class VaeSpec:
    in_ch: int = 3
    widths: Tuple[int, int] = (16, 32)
    z_ch: int = 32
    n_res: int = 1


@dataclass(frozen=True)
class MappingSpec:
    z_ch: int = 32
    n_res: int = 2
    norm: bool = False  # instance norm would pin each channel's spatial mean


@dataclass(frozen=True)
class DiscSpec:
    in_ch: int = 3
    widths: Tuple[int, int] = (16, 32)


@dataclass(frozen=True)
class LatentDiscSpec:
    z_ch: int = 32
    width: int = 32


@dataclass(frozen=True)
class UnetSpec:
    in_ch: int = 3
    widths: Tuple[int, int, int] = (8, 16, 32)


@dataclass
class LatentCode:
    mu: Tensor
    logvar: Tensor
    z: Tensor
    eps: np.ndarray


# ---------------------------------------------------------------- parameter plumbing


class Net:
    """Holds named parameters; subclasses define ``forward``."""

    def __init__(self, seed: int):
        self.params: Dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def add_conv(self, name: str, cin: int, cout: int, k: int, bias: bool = True, gain: float = 1.0) -> None:
        fan_in = cin * k * k
        std = gain * np.sqrt(2.0 / ((1 + 0.2**2) * fan_in))
        self.params[f"{name}.w"] = Tensor(self._rng.normal(0.0, std, (cout, cin, k, k)), requires_grad=True)
        if bias:
            self.params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)

    def add_norm(self, name: str, ch: int) -> None:
        self.params[f"{name}.g"] = Tensor(np.ones(ch), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(ch), requires_grad=True)

    def conv(self, name: str, x: Tensor, stride: int = 1, pad: Optional[int] = None) -> Tensor:
        w = self.params[f"{name}.w"]
        if pad is None:
            pad = (w.shape[2] - 1) // 2
        return ad.conv2d(x, w, self.params.get(f"{name}.b"), stride=stride, pad=pad)

    def upconv(self, name: str, x: Tensor) -> Tensor:
        return ad.upsample_conv(x, self.params[f"{name}.w"], self.params.get(f"{name}.b"))

    def norm(self, name: str, x: Tensor) -> Tensor:
        return ad.instance_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def add_resblock(self, name: str, ch: int, norm: bool = True) -> None:
        """Without ``norm`` the convs carry biases and the block starts near identity."""
        self.add_conv(f"{name}.c1", ch, ch, 3, bias=not norm)
        self.add_conv(f"{name}.c2", ch, ch, 3, bias=not norm, gain=1.0 if norm else 0.1)
        if norm:
            self.add_norm(f"{name}.n1", ch)
            self.add_norm(f"{name}.n2", ch)

    def resblock(self, name: str, x: Tensor) -> Tensor:
        normed = f"{name}.n1.g" in self.params
        h = self.conv(f"{name}.c1", x)
        h = ad.leaky_relu(self.norm(f"{name}.n1", h) if normed else h)
        h = self.conv(f"{name}.c2", h)
        return x + (self.norm(f"{name}.n2", h) if normed else h)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        """Replace all parameters; validates everything first so a failure changes nothing."""
        extra = sorted(set(state) - set(self.params))
        if extra:
            raise KeyError(f"unexpected parameter {extra[0]}")
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k}")
            if state[k].shape != p.shape:
                raise ShapeError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
        for k, p in self.params.items():
            p.data = np.array(state[k], dtype=np.float64)


# ---------------------------------------------------------------- VAE


class VAE(Net):
    """Encoder: two stride-2 convs, residual blocks, 1x1 heads for mu/logvar.

    Generator mirrors it with nearest-upsample convolutions and a tanh output
    rescaled to [0, 1].
    """

    def __init__(self, spec: VaeSpec = VaeSpec(), seed: int = 0):
        super().__init__(seed)
        self.spec = spec
        w0, w1 = spec.widths
        self.add_conv("enc.d1", spec.in_ch, w0, 4)
        self.add_conv("enc.d2", w0, w1, 4)
        for i in range(spec.n_res):
            self.add_resblock(f"enc.res{i}", w1)
        self.add_conv("enc.mu", w1, spec.z_ch, 1, gain=0.5)
        self.add_conv("enc.logvar", w1, spec.z_ch, 1, gain=0.1)
        self.add_conv("gen.in", spec.z_ch, w1, 3)
        for i in range(spec.n_res):
            self.add_resblock(f"gen.res{i}", w1)
        self.add_conv("gen.u1", w1, w0, 3)
        self.add_conv("gen.u2", w0, w0, 3)
        self.add_conv("gen.out", w0, spec.in_ch, 3, gain=0.5)

    def encode_stats(self, x: Tensor):
        _, _, h, w = x.shape
        if h % 4 or w % 4:
            raise ShapeError(f"image dims {h}x{w} must be divisible by 4")
        f = ad.leaky_relu(self.conv("enc.d1", x, stride=2, pad=1))
        f = ad.leaky_relu(self.conv("enc.d2", f, stride=2, pad=1))
        for i in range(self.spec.n_res):
            f = self.resblock(f"enc.res{i}", f)
        return self.conv("enc.mu", f), self.conv("enc.logvar", f)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[1] != self.spec.z_ch:
            raise ShapeError(f"latent shape {z.shape} does not match z_ch={self.spec.z_ch}")
        f = ad.leaky_relu(self.conv("gen.in", z))
        for i in range(self.spec.n_res):
            f = self.resblock(f"gen.res{i}", f)
        f = ad.leaky_relu(self.upconv("gen.u1", f))
        f = ad.leaky_relu(self.upconv("gen.u2", f))
        out = ad.tanh(self.conv("gen.out", f))
        return (out + 1.0) * 0.5


def encode(vae: VAE, x: Tensor, rng: Optional[np.random.Generator] = None, eps: Optional[np.ndarray] = None) -> LatentCode:
    """Reparameterised sample z = mu + exp(logvar / 2) * eps.

    ``eps`` defaults to standard normal draws from ``rng``, or zeros when
    neither is given.
    """
    mu, logvar = vae.encode_stats(x)
    if eps is None:
        eps = rng.standard_normal(mu.shape) if rng is not None else np.zeros(mu.shape)
    z = mu + ad.exp(logvar * 0.5) * Tensor(eps)
    return LatentCode(mu, logvar, z, eps)


def decode(vae: VAE, z: Tensor) -> Tensor:
    return vae.decode(z)


# ---------------------------------------------------------------- discriminators


class ImageDiscriminator(Net):
    """Three-layer strided patch classifier; ``features`` exposes every layer."""

    def __init__(self, spec: DiscSpec = DiscSpec(), seed: int = 0):
        super().__init__(seed)
        self.spec = spec
        w0, w1 = spec.widths
        self.add_conv("l1", spec.in_ch, w0, 4)
        self.add_conv("l2", w0, w1, 4)
        self.add_conv("l3", w1, 1, 3, gain=0.5)

    def features(self, x: Tensor) -> List[Tensor]:
        a1 = ad.leaky_relu(self.conv("l1", x, stride=2, pad=1))
        a2 = ad.leaky_relu(self.conv("l2", a1, stride=2, pad=1))
        return [a1, a2, self.conv("l3", a2)]

    def __call__(self, x: Tensor) -> Tensor:
        return self.features(x)[-1]


class LatentDiscriminator(Net):
    """Classifies latent mean maps; one scalar per sample."""

    def __init__(self, spec: LatentDiscSpec = LatentDiscSpec(), seed: int = 0):
        super().__init__(seed)
        self.spec = spec
        self.add_conv("l1", spec.z_ch, spec.width, 3)
        self.add_conv("l2", spec.width, spec.width, 3)
        self.add_conv("l3", spec.width, 1, 1, gain=0.5)

    def __call__(self, mu: Tensor) -> Tensor:
        h = ad.leaky_relu(self.conv("l1", mu))
        h = ad.leaky_relu(self.conv("l2", h, stride=2))
        return ad.mean(self.conv("l3", h), axis=(1, 2, 3))


# ---------------------------------------------------------------- partial nonlocal + mapping


def downscale_mask(binary: np.ndarray, factor: int = 4) -> np.ndarray:
    """Max-pool a binary H x W (or N x H x W) mask by ``factor``."""
    b = np.asarray(binary, dtype=np.float64)
    squeeze = b.ndim == 2
    if squeeze:
        b = b[None]
    n, h, w = b.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask dims {h}x{w} not divisible by {factor}")
    out = b.reshape(n, h // factor, factor, w // factor, factor).max(axis=(2, 4))
    return out[0] if squeeze else out


def mask_select(m: np.ndarray, masked: Tensor, intact: Tensor) -> Tensor:
    """Pick ``masked`` where m == 1 and ``intact`` where m == 0, elementwise."""
    if masked.shape != intact.shape or m.shape != masked.shape:
        raise ShapeError("mask_select: operand shapes differ")
    sel = m > 0.5
    out = np.where(sel, masked.data, intact.data)
    return ad._make(out, (masked, intact), lambda g: (np.where(sel, g, 0.0), np.where(sel, 0.0, g)), "mask_select")


class MappingNet(Net):
    """Latent restoration: local residual branch fused with a masked nonlocal branch."""

    def __init__(self, spec: MappingSpec = MappingSpec(), seed: int = 0):
        super().__init__(seed)
        self.spec = spec
        c = spec.z_ch
        half = max(c // 2, 1)
        self.add_conv("pnl.theta", c, half, 1)
        self.add_conv("pnl.phi", c, half, 1)
        self.add_conv("pnl.mu", c, c, 1)
        self.add_conv("pnl.nu", c, c, 1)
        for i in range(spec.n_res):
            self.add_resblock(f"local.res{i}", c, spec.norm)
        for i in range(spec.n_res):
            self.add_resblock(f"global.res{i}", c, spec.norm)

    def local(self, f: Tensor) -> Tensor:
        for i in range(self.spec.n_res):
            f = self.resblock(f"local.res{i}", f)
        return f

    def global_(self, o: Tensor) -> Tensor:
        for i in range(self.spec.n_res):
            o = self.resblock(f"global.res{i}", o)
        return o

    def pnl_params(self) -> Dict[str, Tensor]:
        return {k.split(".", 1)[1]: v for k, v in self.params.items() if k.startswith("pnl.")}


def partial_nonlocal(f: Tensor, m: np.ndarray, params: Dict[str, Tensor], return_affinity: bool = False):
    """Masked embedded-Gaussian nonlocal aggregation.

    ``f`` is N x C x h x w, ``m`` is N x h x w with 1 marking defects.
    Defect positions are excluded as keys and values but still produce an
    output row. ``params`` holds 1x1 convs ``theta``, ``phi``, ``mu``, ``nu``
    (``.w``/``.b`` each).
    """
    n, c, h, w = f.shape
    m = np.asarray(m, dtype=np.float64).reshape(n, h * w)
    if np.any(m.sum(axis=1) >= h * w):
        raise FullyMaskedError("partial nonlocal needs at least one intact position")

    def conv1(name, x):
        return ad.conv2d(x, params[f"{name}.w"], params.get(f"{name}.b"))

    L = h * w
    theta = conv1("theta", f)
    k = theta.shape[1]
    q = ad.transpose(ad.reshape(theta, (n, k, L)), (0, 2, 1))
    key = ad.reshape(conv1("phi", f), (n, k, L))
    logits = ad.matmul(q, key)
    bias = np.broadcast_to(np.where(m > 0.5, MASK_BIAS, 0.0)[:, None, :], (n, L, L))
    s = ad.softmax_rows(logits, bias)
    val = ad.transpose(ad.reshape(conv1("mu", f), (n, c, L)), (0, 2, 1))
    agg = ad.reshape(ad.transpose(ad.matmul(s, val), (0, 2, 1)), (n, c, h, w))
    out = conv1("nu", agg)
    return (out, s) if return_affinity else out


def map_latent(net: MappingNet, z: Tensor, m: np.ndarray) -> Tensor:
    """Fuse the local branch at intact cells with the global branch at defect cells."""
    n, c, h, w = z.shape
    m = np.asarray(m, dtype=np.float64).reshape(n, h, w)
    local = net.local(z)
    if not np.any(m > 0.5):
        return local
    glob = net.global_(partial_nonlocal(z, m, net.pnl_params()))
    full = np.broadcast_to(m[:, None], z.shape)
    return mask_select(full, glob, local)


# ---------------------------------------------------------------- U-Net detector


class UNet(Net):
    """Three-level encoder/decoder with skip connections; 1-channel logits."""

    def __init__(self, spec: UnetSpec = UnetSpec(), seed: int = 0):
        super().__init__(seed)
        self.spec = spec
        a, b, c = spec.widths
        self.add_conv("e1", spec.in_ch, a, 3)
        self.add_conv("e2", a, b, 4)
        self.add_conv("e3", b, c, 4)
        self.add_conv("mid", c, c, 3)
        self.add_conv("u2", c, b, 3)
        self.add_conv("d2", 2 * b, b, 3)
        self.add_conv("u1", b, a, 3)
        self.add_conv("d1", 2 * a, a, 3)
        self.add_conv("out", a, 1, 1, gain=0.5)

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h % 4 or w % 4:
            raise ShapeError(f"image dims {h}x{w} must be divisible by 4")
        lr = ad.leaky_relu
        s1 = lr(self.conv("e1", x))
        s2 = lr(self.conv("e2", s1, stride=2, pad=1))
        s3 = lr(self.conv("e3", s2, stride=2, pad=1))
        s3 = lr(self.conv("mid", s3))
        u2 = lr(self.upconv("u2", s3))
        d2 = lr(self.conv("d2", ad.concat([u2, s2], axis=1)))
        u1 = lr(self.upconv("u1", d2))
        d1 = lr(self.conv("d1", ad.concat([u1, s1], axis=1)))
        return ad.reshape(self.conv("out", d1), (x.shape[0], h, w))


def unet_forward(net: UNet, image: Tensor) -> Tensor:
    return net(image)


# ---------------------------------------------------------------- image helpers + restore


def image_to_tensor(images: np.ndarray) -> Tensor:
    """H x W x C (or N x H x W x C) array -> N x C x H x W tensor."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def tensor_to_images(t) -> np.ndarray:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    return np.ascontiguousarray(data.transpose(0, 2, 3, 1))


def _pad_to_multiple(arr: np.ndarray, k: int = 4):
    h, w = arr.shape[:2]
    ph, pw = (-h) % k, (-w) % k
    if ph == 0 and pw == 0:
        return arr, (h, w)
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    mode = "reflect" if h > ph and w > pw else "edge"
    return np.pad(arr, pad, mode=mode), (h, w)


@dataclass
class RestorationModel:
    vae1: VAE
    mapping: MappingNet
    vae2: VAE
    detector: Optional[UNet] = None


def restore(image: np.ndarray, vae1: VAE, mapping: MappingNet, vae2: VAE, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Restore one H x W x C image; ``mask`` is an H x W binary defect map.

    Dims not divisible by 4 are reflect-padded and the result cropped back.
    Inference uses latent means, so the output is deterministic.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    padded, (h, w) = _pad_to_multiple(img)
    if mask is None:
        mask = np.zeros(img.shape[:2])
    mpad, _ = _pad_to_multiple(np.asarray(mask, dtype=np.float64))
    with ad.no_grad():
        mu, _ = vae1.encode_stats(image_to_tensor(padded))
        m_lat = downscale_mask(mpad[None] > 0.5)
        zy = map_latent(mapping, mu, m_lat)
        out = vae2.decode(zy)
    return tensor_to_images(out)[0, :h, :w]


def detect(net: UNet, image: np.ndarray) -> np.ndarray:
    """Per-pixel defect probability for one H x W x C image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    padded, (h, w) = _pad_to_multiple(img)
    with ad.no_grad():
        logits = net(image_to_tensor(padded))
        prob = ad.sigmoid(logits).data[0]
    return prob[:h, :w]
