"""Command-line entry point: ``retro {synth,train,restore,eval,ablate}``.

Exit codes: 0 ok, 2 I/O or configuration error, 3 missing prerequisite,
4 ablation failure. Configuration files hold one ``key = value`` per line
with ``#`` comments; precedence is flag > ``RETRO_SEED`` > file > default.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import typing
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import training as T
from .data import shapes_corpus
from .degrade import R_RANGE, X_RANGE, RecipeRange
from .io import ManifestEntry, read_image, read_manifest, read_pgm, write_image, write_manifest, write_pgm
from .metrics import format_summary, psnr, ssim
from .nets import detect, restore
from .pipeline import TOY_ABLATION, TOY_DETECTOR, TOY_STAGE1, TOY_STAGE2, ToyData, make_toy_data, run_ablation

log = logging.getLogger("retro.cli")

EXIT_OK, EXIT_IO, EXIT_MISSING, EXIT_ABLATION = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- run configuration


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs beyond paths."""

    stage1: T.TrainConfig = TOY_STAGE1
    stage2: T.TrainConfig = TOY_STAGE2
    detector: T.TrainConfig = TOY_DETECTOR
    ablation: T.TrainConfig = TOY_ABLATION
    x: RecipeRange = X_RANGE
    r: RecipeRange = R_RANGE
    count: int = 64
    size: int = 32
    data_seed: int = 0
    ablation_seeds: Tuple[int, ...] = (0, 1, 2)
    ablation_slack: float = 0.05
    ablation_probe: int = 32


SEEDED = ("stage1", "stage2", "detector")


def _flatten(obj, prefix: str = "") -> Dict[str, object]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = v
    return out


def _key_types(cls, prefix: str = "") -> Dict[str, object]:
    out = {}
    for name, typ in typing.get_type_hints(cls).items():
        if dataclasses.is_dataclass(typ):
            out.update(_key_types(typ, f"{prefix}{name}."))
        else:
            out[f"{prefix}{name}"] = typ
    return out


def _build(cls, values: Dict[str, object], prefix: str = ""):
    kwargs = {}
    for name, typ in typing.get_type_hints(cls).items():
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, values, f"{prefix}{name}.")
        else:
            kwargs[name] = values[f"{prefix}{name}"]
    return cls(**kwargs)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(e) for e in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, typ):
    if typ is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return text.lower() == "true"
    return typ(text)


def _parse_value(text: str, typ):
    if typing.get_origin(typ) is tuple:
        args = typing.get_args(typ)
        items = [t.strip() for t in text.split(",")] if text.strip() else []
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse_scalar(t, args[0]) for t in items)
        if len(items) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got {len(items)}")
        return tuple(_parse_scalar(t, a) for t, a in zip(items, args))
    return _parse_scalar(text.strip(), typ)


def apply_overrides(cfg: RunConfig, pairs: Sequence[Tuple[str, str]], source: str = "override") -> RunConfig:
    """Parse every ``(key, text)`` pair, then rebuild (and validate) the config once."""
    types = _key_types(RunConfig)
    values = _flatten(cfg)
    for key, text in pairs:
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}")
        try:
            values[key] = _parse_value(text, types[key])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{source}: bad value for {key!r}: {e}") from None
    try:
        return _build(RunConfig, values)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None


def parse_config_text(text: str, base: RunConfig = RunConfig(), source: str = "<config>") -> RunConfig:
    pairs = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return apply_overrides(base, pairs, source)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in _flatten(cfg).items())


def resolve_config(path: Optional[str], overrides: Sequence[str] = (), seed: Optional[int] = None, env=None) -> RunConfig:
    """Defaults, then the file, then ``RETRO_SEED``, then ``--set`` and ``--seed`` flags."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise CliError(EXIT_IO, f"cannot read config {path}: {e.strerror}") from None
        cfg = parse_config_text(text, cfg, str(path))
    if env.get("RETRO_SEED"):
        cfg = apply_overrides(cfg, [(f"{k}.seed", env["RETRO_SEED"]) for k in SEEDED], "RETRO_SEED")
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    cfg = apply_overrides(cfg, pairs, "--set")
    if seed is not None:
        cfg = apply_overrides(cfg, [(f"{k}.seed", str(seed)) for k in SEEDED], "--seed")
    return cfg


# ---------------------------------------------------------------- dataset files


def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot create {path}: {e.strerror}") from None


def _write_split(root: Path, name: str, clean, degraded, masks, seeds) -> None:
    entries = []
    for sub in ("clean", "degraded", "mask"):
        _mkdir(root / name / sub)
    for i, (c, d, m, s) in enumerate(zip(clean, degraded, masks, seeds)):
        stem = f"{i:04d}"
        e = ManifestEntry(f"{name}/clean/{stem}.png", f"{name}/degraded/{stem}.png", f"{name}/mask/{stem}.pgm", s)
        write_image(root / e.clean, c)
        write_image(root / e.degraded, d)
        write_pgm(root / e.mask, m)
        entries.append(e)
    write_manifest(root / f"{name}.manifest", entries)


def write_dataset(root: Path, data: ToyData, clean_r: Optional[np.ndarray] = None) -> None:
    """Split ``x`` holds (clean, synthetic degraded, mask); split ``r`` the pseudo-real images."""
    _write_split(root, "x", data.y, data.x, data.m, data.x_seeds)
    r_clean = clean_r if clean_r is not None else np.zeros_like(data.r)
    _write_split(root, "r", r_clean, data.r, data.r_m, data.r_seeds)


def read_split(root: Path, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    manifest = root / f"{name}.manifest"
    if not manifest.exists():
        raise CliError(EXIT_MISSING, f"missing dataset manifest {manifest}")
    try:
        entries = read_manifest(manifest)
        clean = [read_image(root / e.clean) for e in entries]
        degraded = [read_image(root / e.degraded) for e in entries]
        masks = [read_pgm(root / e.mask).astype(np.float64) for e in entries]
    except (OSError, ValueError) as e:
        raise CliError(EXIT_IO, f"cannot read dataset {root}: {e}") from None
    if not entries:
        raise CliError(EXIT_MISSING, f"dataset split {name} in {root} is empty")
    return np.stack(clean), np.stack(degraded), np.stack(masks)


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {path}: {e.strerror}") from None


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    count = cfg.count if args.count is None else args.count
    data_seed = cfg.data_seed if args.seed is None else args.seed
    _mkdir(out)
    data = make_toy_data(count, data_seed, cfg.x, cfg.r, cfg.size)
    clean_r = np.stack(shapes_corpus(count, seed=data_seed + 7919, size=cfg.size)) if count else data.r
    write_dataset(out, data, clean_r)
    _write_text(out / "run_config.txt", serialize_config(cfg))
    print(f"wrote {count} pairs to {out}")
    return EXIT_OK


STAGE1_FILES = ("vae1", "vae2", "d_img1", "d_img2", "d_latent")


def _save_checkpoints(out: Path, ckpts: Dict[str, T.Checkpoint]) -> None:
    for name, ck in ckpts.items():
        try:
            T.save(ck, out / f"{name}.ckpt")
        except OSError as e:
            raise CliError(EXIT_IO, f"cannot write checkpoint {name}: {e.strerror}") from None


def _load_net(ckpt_dir: Path, name: str):
    path = ckpt_dir / f"{name}.ckpt"
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing checkpoint {path}")
    try:
        return T.net_from_checkpoint(T.load(path))
    except T.CheckpointError as e:
        raise CliError(EXIT_IO, f"{path}: {e}") from None


def cmd_train(args, cfg: RunConfig) -> int:
    data, out = Path(args.data), Path(args.out)
    _mkdir(out)
    log_path = out / f"train_{args.stage}.log"
    header = "".join(f"# {line}\n" for line in serialize_config(cfg).splitlines())
    if args.stage == "2":
        vae1, vae2 = _load_net(out, "vae1"), _load_net(out, "vae2")
    y, x, m = read_split(data, "x")
    try:
        stream = open(log_path, "w")
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {log_path}: {e.strerror}") from None
    with stream:
        stream.write(header)
        if args.stage == "1":
            _, r, _ = read_split(data, "r")
            res = T.train_stage1(x, r, y, cfg.stage1, stream)
            _save_checkpoints(out, res.checkpoints(cfg.stage1))
        elif args.stage == "2":
            res = T.train_stage2(x, y, m, vae1, vae2, cfg.stage2, stream)
            _save_checkpoints(out, res.checkpoints(cfg.stage2))
        else:
            _, r, r_m = read_split(data, "r")
            hold = {"synthetic": (x, m), "pseudo_real": (r, r_m)}
            res = T.train_detector(x, m, cfg.detector, r, r_m, hold, stream)
            _save_checkpoints(out, {"detector": res.checkpoint(cfg.detector)})
            _write_text(out / "detector_summary.txt", format_summary(res.auc))
    print(f"stage {args.stage} done; checkpoints in {out}")
    return EXIT_OK


def cmd_restore(args, cfg: RunConfig) -> int:
    ckpt = Path(args.ckpt_dir)
    nets = {n: _load_net(ckpt, n) for n in ("vae1", "mapping", "vae2")}
    try:
        image = read_image(args.input)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read {args.input}: {e}") from None
    h, w = image.shape[:2]
    if args.mask == "none":
        mask = np.zeros((h, w))
        print("mask: none (local branch only)")
    elif args.mask == "file":
        if not args.mask_file:
            raise CliError(EXIT_MISSING, "--mask file needs --mask-file")
        try:
            mask = read_pgm(args.mask_file).astype(np.float64)
        except (OSError, ValueError) as e:
            raise CliError(EXIT_IO, f"cannot read mask {args.mask_file}: {e}") from None
        if mask.shape != (h, w):
            raise CliError(EXIT_IO, f"mask {mask.shape} does not match image {(h, w)}")
        print("mask: file (detector skipped)")
    else:
        det = _load_net(ckpt, "detector")
        padded = _pad4(image)
        mask = (detect(det, padded)[:h, :w] >= 0.5).astype(np.float64)
        print(f"mask: auto (detector flagged {int(mask.sum())} pixels)")
    out = restore(image, nets["vae1"], nets["mapping"], nets["vae2"], mask)
    try:
        write_image(args.out, out)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {e}") from None
    return EXIT_OK


def _pad4(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = (-h) % 4, (-w) % 4
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="reflect") if ph or pw else image


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = Path(args.pairs)
    root = manifest.parent
    restored_dir = Path(args.restored)
    try:
        entries = read_manifest(manifest)
        files = sorted(p.name for p in restored_dir.glob("*.png"))
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read inputs: {e}") from None
    if len(files) != len(entries):
        raise CliError(EXIT_IO, f"count mismatch: {len(entries)} pairs but {len(files)} restored images")
    vals: Dict[str, float] = {}
    rows = {"psnr_degraded": [], "psnr_restored": [], "ssim_degraded": [], "ssim_restored": []}
    for i, e in enumerate(entries):
        name = Path(e.degraded).name
        try:
            clean, degraded = read_image(root / e.clean), read_image(root / e.degraded)
            restored = read_image(restored_dir / name)
        except OSError as err:
            raise CliError(EXIT_IO, f"cannot read pair {i}: {err}") from None
        per = {
            "psnr_degraded": psnr(degraded, clean),
            "psnr_restored": psnr(restored, clean),
            "ssim_degraded": ssim(degraded, clean),
            "ssim_restored": ssim(restored, clean),
        }
        for k, v in per.items():
            rows[k].append(v)
            vals[f"image.{i:04d}.{k}"] = v
    means = {k: float(np.mean(v)) if v else float("nan") for k, v in rows.items()}
    text = format_summary({**means, **vals})
    if args.out:
        _write_text(Path(args.out), text)
    print(format_summary(means), end="")
    return EXIT_OK


def ablation_report(cfg: RunConfig, control: bool = False) -> Tuple[Dict[str, float], bool]:
    """Per-seed latent gaps and whether every seed satisfies the slack-banded trend."""
    vals: Dict[str, float] = {}
    ok = True
    r_range = cfg.x if control else cfg.r
    for s in cfg.ablation_seeds:
        train = make_toy_data(cfg.count, cfg.data_seed + 1000 * s, cfg.x, r_range, cfg.size)
        probe = make_toy_data(cfg.ablation_probe, cfg.data_seed + 1000 * s + 500, cfg.x, r_range, cfg.size)
        gaps = run_ablation(train, probe, dataclasses.replace(cfg.ablation, seed=s))
        for k, v in gaps.items():
            vals[f"seed.{s}.{k}"] = v
        holds = trend_holds(gaps, cfg.ablation_slack)
        vals[f"seed.{s}.trend"] = 1.0 if holds else 0.0
        ok &= holds
    vals["trend"] = 1.0 if ok else 0.0
    return vals, ok


def trend_holds(gaps: Dict[str, float], slack: float) -> bool:
    """w(ae) >= w(vae) >= w(vae_adv), each comparison allowed a relative ``slack``."""
    seq = [gaps["ae"], gaps["vae"], gaps["vae_adv"]]
    return all(a >= b * (1 - slack) for a, b in zip(seq, seq[1:]))


def cmd_ablate(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, ablation_seeds=(args.seed,))
    try:
        vals, ok = ablation_report(cfg, control=args.control)
    except T.DivergenceError as e:
        _write_text(Path(args.out), f"diverged={e}\n")
        print(f"ablation diverged: {e}", file=sys.stderr)
        return EXIT_ABLATION
    _write_text(Path(args.out), format_summary(vals))
    print(format_summary(vals), end="")
    if not ok:
        print("ablation trend violated", file=sys.stderr)
        return EXIT_ABLATION
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retro", description="Latent-space old-photo restoration on toy data.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int, help="dataset seed")

    t = sub.add_parser("train", parents=[common], help="train stage 1, stage 2 or the detector")
    t.add_argument("--stage", required=True, choices=["1", "2", "detector"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--seed", type=int)

    r = sub.add_parser("restore", parents=[common], help="restore one image")
    r.add_argument("--input", required=True)
    r.add_argument("--ckpt-dir", required=True)
    r.add_argument("--mask", choices=["auto", "file", "none"], default="auto")
    r.add_argument("--mask-file")
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of restored images")
    e.add_argument("--pairs", required=True, help="dataset manifest")
    e.add_argument("--restored", required=True, help="directory of restored PNGs named like the degraded files")
    e.add_argument("--out")

    a = sub.add_parser("ablate", parents=[common], help="latent-gap ablation over AE, VAE, VAE + adversarial")
    a.add_argument("--out", required=True)
    a.add_argument("--control", action="store_true", help="use the x recipe range for r")
    a.add_argument("--seed", type=int)
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "restore": cmd_restore, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        seed = args.seed if args.command == "train" else None
        cfg = resolve_config(args.config, args.set, seed)
        with ad.no_grad() if args.command in ("restore", "eval") else nullcontext():
            return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
