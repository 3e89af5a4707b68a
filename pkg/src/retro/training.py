"""Optimiser, learning-rate schedule, checkpoints and the training stages.

Stage 1 trains the two VAEs (with their image discriminators and the latent
domain discriminator); stage 2 trains the mapping network and its
discriminator with both VAEs frozen. The detector is trained separately.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, TextIO

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .metrics import roc_auc
from .nets import (
    VAE,
    DiscSpec,
    ImageDiscriminator,
    LatentDiscriminator,
    LatentDiscSpec,
    MappingNet,
    MappingSpec,
    Net,
    UNet,
    UnetSpec,
    VaeSpec,
    downscale_mask,
    image_to_tensor,
)

log = logging.getLogger(__name__)

MAGIC = b"RLNS"
FORMAT_VERSION = 1
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs. An "epoch" is a block of ``iters_per_epoch`` iterations."""

    lr: float = 2e-4
    epochs: int = 100
    decay_start: int = 50
    iters_per_epoch: int = 10
    batch_size: int = 4
    crop: int = 32
    augment: bool = True  # random flips and quarter turns per sample
    weights: L.LossWeights = L.LossWeights()
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    vae: VaeSpec = VaeSpec()
    mapping: MappingSpec = MappingSpec()
    disc: DiscSpec = DiscSpec()
    latent_disc: LatentDiscSpec = LatentDiscSpec()
    unet: UnetSpec = UnetSpec()
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    finetune_epochs: int = 0

    def __post_init__(self):
        if self.decay_start > self.epochs:
            raise ValueError(f"decay_start {self.decay_start} > epochs {self.epochs}")
        if self.crop % 4:
            raise ValueError(f"crop {self.crop} must be divisible by 4")

    @property
    def iterations(self) -> int:
        return self.epochs * self.iters_per_epoch


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Constant until ``decay_start`` (inclusive), then linear to zero at ``epochs``."""
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    if epoch <= config.decay_start:
        return config.lr
    return config.lr * (config.epochs - epoch) / (config.epochs - config.decay_start)


def config_echo(config: TrainConfig) -> Dict[str, str]:
    def flat(prefix, obj, out):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                flat(f"{prefix}{f.name}.", v, out)
            else:
                out[f"{prefix}{f.name}"] = json.dumps(v)
        return out

    return flat("", config, {})


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, Tensor], grads: Optional[Dict[str, np.ndarray]] = None) -> None:
    """One bias-corrected Adam update in place; advances ``state.t`` once.

    ``grads`` defaults to each parameter's ``.grad`` (missing grads count as zero).
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    bad = [k for k, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
    if bad:
        raise DivergenceError(f"non-finite gradients in {', '.join(bad)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ad.ShapeError(f"grad for {k}: {g.shape} vs {p.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grads(params: Dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Player:
    """A network with its own optimiser."""

    def __init__(self, net: Net, config: TrainConfig):
        self.net = net
        self.opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.clip = config.clip_norm

    def step(self, loss: Tensor, lr: float) -> None:
        v = float(loss.data)
        if not math.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"loss {v} exceeded the divergence guard")
        self.net.zero_grad()
        ad.backward(loss)
        clip_grads(self.net.params, self.clip)
        self.opt.lr = lr
        adam_step(self.opt, self.net.params)
        self.net.zero_grad()


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    kind: str
    params: Dict[str, np.ndarray]
    opt_m: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    config: Dict[str, str] = field(default_factory=dict)
    rng_state: str = ""


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        out.append(_pack_str(name))
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    body = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(ckpt.kind), struct.pack("<Q", ckpt.step)]
    body.append(struct.pack("<I", len(ckpt.config)))
    for k in sorted(ckpt.config):
        body.append(_pack_str(k) + _pack_str(ckpt.config[k]))
    body.append(_pack_str(ckpt.rng_state))
    body.append(_pack_tensors(ckpt.params))
    body.append(_pack_tensors(ckpt.opt_m))
    body.append(_pack_tensors(ckpt.opt_v))
    payload = b"".join(body)
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what):
        return self.take(self.u32(what), what).decode("utf-8")

    def tensors(self, what):
        out = {}
        for _ in range(self.u32(f"{what} count")):
            name = self.string(f"{what} name")
            ndim = self.u32(f"{what} {name} ndim")
            shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim, f"{what} {name} shape"))
            n = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(self.take(8 * n, f"{what} {name} data"), dtype="<f8").reshape(shape).astype(np.float64)
        return out


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint: header incomplete")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})")
    payload, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt or truncated")
    r = _Reader(payload)
    r.pos = 8
    kind = r.string("kind")
    step = r.u64("step")
    config = {}
    for _ in range(r.u32("config count")):
        k = r.string("config key")
        config[k] = r.string(f"config value {k}")
    rng_state = r.string("rng state")
    params = r.tensors("params")
    m = r.tensors("opt_m")
    v = r.tensors("opt_v")
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(kind, params, m, v, step, config, rng_state)


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


NET_TYPES = {
    "vae": (VAE, VaeSpec),
    "image_disc": (ImageDiscriminator, DiscSpec),
    "latent_disc": (LatentDiscriminator, LatentDiscSpec),
    "mapping": (MappingNet, MappingSpec),
    "unet": (UNet, UnetSpec),
}


def _kind_of(net: Net) -> str:
    for kind, (cls, _) in NET_TYPES.items():
        if type(net) is cls:
            return kind
    raise TypeError(f"no checkpoint kind for {type(net).__name__}")


def net_checkpoint(net: Net, opt: Optional[AdamState] = None, config: Optional[TrainConfig] = None, rng: Optional[np.random.Generator] = None) -> Checkpoint:
    echo = config_echo(config) if config is not None else {}
    echo["spec"] = json.dumps(dataclasses.asdict(net.spec))
    return Checkpoint(
        kind=_kind_of(net),
        params=net.state(),
        opt_m=dict(opt.m) if opt else {},
        opt_v=dict(opt.v) if opt else {},
        step=opt.t if opt else 0,
        config=echo,
        rng_state=json.dumps(rng.bit_generator.state) if rng is not None else "",
    )


def net_from_checkpoint(ckpt: Checkpoint) -> Net:
    if ckpt.kind not in NET_TYPES:
        raise CheckpointError(f"unknown network kind {ckpt.kind!r}")
    cls, spec_cls = NET_TYPES[ckpt.kind]
    raw = json.loads(ckpt.config["spec"])
    spec = spec_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    net = cls(spec, seed=0)
    try:
        net.load_state(ckpt.params)
    except (KeyError, ad.ShapeError) as e:
        raise CheckpointError(str(e)) from e
    return net


def param_checksum(*nets: Net) -> str:
    h = hashlib.sha256()
    for net in nets:
        for k in sorted(net.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(net.params[k].data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- logging


class TrainLog:
    """Line-oriented ``iter=<n> loss.<name>=<v>`` records."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream
        self.lines: List[str] = []

    def record(self, it: int, values: Dict[str, float]) -> None:
        parts = [f"iter={it}"] + [f"loss.{k}={values[k]:.6g}" for k in values]
        line = " ".join(parts)
        self.lines.append(line)
        if self.stream is not None:
            self.stream.write(line + "\n")


def _stage_rng(config: TrainConfig, stage: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, stage]))


def _batch(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(size, n), replace=False))


def _views(rng: np.random.Generator, config: TrainConfig, *arrays: np.ndarray) -> List[np.ndarray]:
    """Random ``crop`` window plus, if enabled, a random flip and quarter turn per sample.

    Every array shares the sample's view; spatial axes are the last two.
    """
    h, w = arrays[0].shape[-2:]
    c = config.crop
    if c > min(h, w):
        raise ValueError(f"crop {c} larger than images {h}x{w}")
    outs = [[] for _ in arrays]
    for i in range(len(arrays[0])):
        oy, ox = rng.integers(0, h - c + 1), rng.integers(0, w - c + 1)
        k, flip = (rng.integers(4), rng.integers(2)) if config.augment else (0, 0)
        for out, a in zip(outs, arrays):
            v = np.rot90(a[i, ..., oy : oy + c, ox : ox + c], k, axes=(-2, -1))
            out.append(v[..., ::-1] if flip else v)
    return [np.ascontiguousarray(np.stack(o)) for o in outs]


def _epoch_of(config: TrainConfig, it: int) -> int:
    return min(it // config.iters_per_epoch, config.epochs)


def _check(values: Dict[str, float]) -> None:
    for k, v in values.items():
        if not math.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"loss.{k}={v} exceeded the divergence guard")


# ---------------------------------------------------------------- stage 1


@dataclass
class Stage1Result:
    vae1: VAE
    vae2: VAE
    d_img1: ImageDiscriminator
    d_img2: ImageDiscriminator
    d_latent: LatentDiscriminator
    players: Dict[str, Player]
    log: TrainLog
    rng: np.random.Generator

    def checkpoints(self, config: TrainConfig) -> Dict[str, Checkpoint]:
        return {name: net_checkpoint(p.net, p.opt, config, self.rng) for name, p in self.players.items()}


def build_stage1(config: TrainConfig) -> Dict[str, Net]:
    s = config.seed
    return {
        "vae1": VAE(config.vae, seed=s * 100 + 1),
        "vae2": VAE(config.vae, seed=s * 100 + 2),
        "d_img1": ImageDiscriminator(config.disc, seed=s * 100 + 3),
        "d_img2": ImageDiscriminator(config.disc, seed=s * 100 + 4),
        "d_latent": LatentDiscriminator(dataclasses.replace(config.latent_disc, z_ch=config.vae.z_ch), seed=s * 100 + 5),
    }


def train_stage1(data_x: np.ndarray, data_r: np.ndarray, data_y: np.ndarray, config: TrainConfig, log_stream: Optional[TextIO] = None) -> Stage1Result:
    """Alternating updates: image discriminators, latent discriminator, then encoders/generators.

    VAE1 sees one r batch and one x batch per iteration; VAE2 trains on y
    independently. A KL weight of zero turns both VAEs into plain
    autoencoders (no sampling).
    """
    if min(len(data_x), len(data_r), len(data_y)) == 0:
        raise DegenerateDataError("stage 1 needs nonempty x, r and y sets")
    nets = build_stage1(config)
    players = {k: Player(v, config) for k, v in nets.items()}
    w = config.weights
    rng = _stage_rng(config, 1)
    tlog = TrainLog(log_stream)
    X, R, Y = (image_to_tensor(d).data for d in (data_x, data_r, data_y))
    zshape = lambda n: (n, config.vae.z_ch, config.crop // 4, config.crop // 4)
    variational = w.kl > 0
    for it in range(config.iterations):
        lr = lr_at(config, _epoch_of(config, it))
        ix, ir, iy = (_batch(rng, len(d), config.batch_size) for d in (X, R, Y))
        (x,), (r,), (y,) = (_views(rng, config, D[i]) for D, i in ((X, ix), (R, ir), (Y, iy)))
        x, r, y = Tensor(x), Tensor(r), Tensor(y)
        eps = [rng.standard_normal(zshape(len(b))) if variational else np.zeros(zshape(len(b))) for b in (ir, ix, iy)]
        vals = {}

        pr = L.vae_pass(nets["vae1"], r, eps[0])
        px = L.vae_pass(nets["vae1"], x, eps[1])
        if w.gan > 0:
            d1 = L.vae_disc_loss(nets["d_img1"], ad.concat([r, x], axis=0), [pr, px])
            players["d_img1"].step(d1, lr)
            vals["d_img1"] = float(d1.data)
        if w.latent_adv > 0:
            d_lat, _ = L.latent_adv_loss(nets["d_latent"](px.code.mu.detach()), nets["d_latent"](pr.code.mu.detach()))
            players["d_latent"].step(d_lat, lr)
            vals["d_latent"] = float(d_lat.data)
        parts = L.vae_eg_loss([pr, px], nets["d_img1"], w)
        eg = parts["eg"]
        if w.latent_adv > 0:
            _, e_adv = L.latent_adv_loss(nets["d_latent"](px.code.mu), nets["d_latent"](pr.code.mu))
            eg = eg + e_adv * w.latent_adv
            vals["vae1.e_adv"] = float(e_adv.data)
        players["vae1"].step(eg, lr)
        vals.update({f"vae1.{k}": float(v.data) for k, v in parts.items()})

        py = L.vae_pass(nets["vae2"], y, eps[2])
        if w.gan > 0:
            d2 = L.vae_disc_loss(nets["d_img2"], y, [py])
            players["d_img2"].step(d2, lr)
            vals["d_img2"] = float(d2.data)
        parts2 = L.vae_eg_loss([py], nets["d_img2"], w)
        players["vae2"].step(parts2["eg"], lr)
        vals.update({f"vae2.{k}": float(v.data) for k, v in parts2.items()})
        _check(vals)
        tlog.record(it, vals)
    for k in ("d_img1", "d_img2", "d_latent"):
        if (k == "d_latent" and w.latent_adv == 0) or (k != "d_latent" and w.gan == 0):
            players.pop(k)
    return Stage1Result(nets["vae1"], nets["vae2"], nets["d_img1"], nets["d_img2"], nets["d_latent"], players, tlog, rng)


# ---------------------------------------------------------------- stage 2


@dataclass
class Stage2Result:
    mapping: MappingNet
    d_map: ImageDiscriminator
    players: Dict[str, Player]
    log: TrainLog
    rng: np.random.Generator
    frozen_checksum: str

    def checkpoints(self, config: TrainConfig) -> Dict[str, Checkpoint]:
        return {name: net_checkpoint(p.net, p.opt, config, self.rng) for name, p in self.players.items()}


def latent_masks(masks: np.ndarray) -> np.ndarray:
    """Downscale N x H x W binary masks; samples with no intact cell fall back to all-intact."""
    m = downscale_mask(np.asarray(masks) > 0.5)
    full = m.reshape(len(m), -1).min(axis=1) > 0.5
    if np.any(full):
        log.warning("%d sample(s) fully masked at latent resolution; using an empty mask", int(full.sum()))
        m[full] = 0.0
    return m


def train_stage2(
    data_x: np.ndarray,
    data_y: np.ndarray,
    masks: np.ndarray,
    vae1: VAE,
    vae2: VAE,
    config: TrainConfig,
    log_stream: Optional[TextIO] = None,
    feature_hook: Optional[L.FeatureHook] = None,
) -> Stage2Result:
    """Train the mapping network on (x, y, mask) triples with both VAEs frozen.

    Raises :class:`ContractViolation` if a VAE parameter changes.
    """
    if len(data_x) == 0:
        raise DegenerateDataError("stage 2 needs at least one pair")
    before = param_checksum(vae1, vae2)
    flags = {id(p): p.requires_grad for n in (vae1, vae2) for p in n.params.values()}
    vae1.set_trainable(False)
    vae2.set_trainable(False)
    s = config.seed
    mapping = MappingNet(dataclasses.replace(config.mapping, z_ch=vae1.spec.z_ch), seed=s * 100 + 6)
    d_map = ImageDiscriminator(config.disc, seed=s * 100 + 7)
    players = {"mapping": Player(mapping, config), "d_map": Player(d_map, config)}
    nets = {"vae1": vae1, "vae2": vae2, "mapping": mapping, "d_map": d_map}
    w = config.weights
    rng = _stage_rng(config, 2)
    tlog = TrainLog(log_stream)
    X, Y = image_to_tensor(data_x).data, image_to_tensor(data_y).data
    masks = (np.asarray(masks) > 0.5).astype(np.float64)
    need_images = w.gan > 0 or w.lambda2 > 0
    try:
        for it in range(config.iterations):
            lr = lr_at(config, _epoch_of(config, it))
            idx = _batch(rng, len(X), config.batch_size)
            x, y, m = _views(rng, config, X[idx], Y[idx], masks[idx])
            x, y = Tensor(x), Tensor(y)
            mp = L.mapping_pass(x, y, latent_masks(m), nets, decode_images=need_images)
            vals = {}
            if w.gan > 0:
                dl = L.mapping_disc_loss(d_map, y, mp)
                players["d_map"].step(dl, lr)
                vals["d_map"] = float(dl.data)
            parts = L.mapping_g_loss(mp, d_map, w, feature_hook)
            players["mapping"].step(parts["g"], lr)
            vals.update({f"map.{k}": float(v.data) for k, v in parts.items()})
            _check(vals)
            tlog.record(it, vals)
    finally:
        for n in (vae1, vae2):
            for p in n.params.values():
                p.requires_grad = flags[id(p)]
    after = param_checksum(vae1, vae2)
    if after != before:
        raise ContractViolation("frozen VAE parameters changed during stage 2")
    if w.gan == 0:
        players.pop("d_map")
    return Stage2Result(mapping, d_map, players, tlog, rng, after)


# ---------------------------------------------------------------- detector


@dataclass
class DetectorResult:
    net: UNet
    player: Player
    log: TrainLog
    rng: np.random.Generator
    auc: Dict[str, float]

    def checkpoint(self, config: TrainConfig) -> Checkpoint:
        return net_checkpoint(self.net, self.player.opt, config, self.rng)


def detector_scores(net: UNet, images: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return ad.sigmoid(net(image_to_tensor(images))).data


def detector_auc(net: UNet, images: np.ndarray, masks: np.ndarray) -> float:
    return roc_auc(detector_scores(net, images), np.asarray(masks) > 0.5).auc


def _detector_phase(net, player, images, masks, config, iters, rng, tlog, offset):
    X = image_to_tensor(images).data
    M = (np.asarray(masks) > 0.5).astype(np.float64)
    for it in range(iters):
        epoch = min(it * config.epochs // max(iters, 1), config.epochs)
        lr = lr_at(config, epoch)
        idx = _batch(rng, len(X), config.batch_size)
        x, m = _views(rng, config, X[idx], M[idx])
        loss = L.focal_loss(net(Tensor(x)), m, config.focal_gamma, config.focal_alpha)
        player.step(loss, lr)
        tlog.record(offset + it, {"focal": float(loss.data)})


def train_detector(
    images: np.ndarray,
    masks: np.ndarray,
    config: TrainConfig,
    finetune_images: Optional[np.ndarray] = None,
    finetune_masks: Optional[np.ndarray] = None,
    holdout: Optional[Dict[str, tuple]] = None,
    log_stream: Optional[TextIO] = None,
    finetune_lr_scale: float = 0.5,
) -> DetectorResult:
    """Focal-loss U-Net training: synthetic phase, then optional pseudo-real finetune.

    ``holdout`` maps a name to (images, masks); AUC on each is reported
    after every phase as ``<phase>.<name>``.
    """
    if not np.any(np.asarray(masks) > 0.5):
        raise DegenerateDataError("detector training data has no defect pixels")
    net = UNet(config.unet, seed=config.seed * 100 + 8)
    player = Player(net, config)
    rng = _stage_rng(config, 3)
    tlog = TrainLog(log_stream)
    auc: Dict[str, float] = {}

    def report(phase):
        for name, (imgs, ms) in (holdout or {}).items():
            auc[f"{phase}.{name}"] = detector_auc(net, imgs, ms)

    _detector_phase(net, player, images, masks, config, config.iterations, rng, tlog, 0)
    report("synthetic")
    if finetune_images is not None and config.finetune_epochs > 0:
        if not np.any(np.asarray(finetune_masks) > 0.5):
            raise DegenerateDataError("finetune data has no defect pixels")
        ft = dataclasses.replace(config, lr=config.lr * finetune_lr_scale, epochs=config.finetune_epochs, decay_start=0)
        _detector_phase(net, player, finetune_images, finetune_masks, ft, ft.iterations, rng, tlog, config.iterations)
        report("finetune")
    return DetectorResult(net, player, tlog, rng, auc)
