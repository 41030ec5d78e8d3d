"""Command-line interface: synth, patches, train, ablate, dehaze, eval,
gradcheck, bench.

Configuration files are flat key=value text; any key matching a training
or architecture field overrides the selected profile, and explicit flags
override both. Exit codes: 0 success, 1 operational failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import os
import sys
import zlib
from dataclasses import fields, replace

import numpy as np

from . import __version__
from .bench import format_rows, run_conv_bench, run_kernel_bench
from .checkpoint import load_checkpoint
from .data import build_patchset, read_manifest, write_manifest
from .imageio import ImageIOError, load_image, save_image
from .inference import dehaze, dehaze_tiled, memory_estimate
from .metrics import evaluate_pairs
from .model import ModelConfig, forward, init_params, backward
from .physics import sample_haze_params, synthesize_haze, transmission_from_depth
from .tensor import (ConvSpec, conv2d, conv2d_backward, deconv2d,
                     deconv2d_backward, grad_check, relu, relu_backward)
from .training import TrainConfig, ablation_variants, run_ablation, train

PROFILES = {
    "default": ModelConfig(),
    "tiny": ModelConfig(base_channels=8, encoder_levels=2, res_blocks=2),
}

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model"}


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and #-comments ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(current, text: str):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected boolean, got {text!r}")
    return type(current)(text)


def build_train_config(profile: str, config_path=None, **flag_overrides) -> TrainConfig:
    model = PROFILES[profile]
    cfg = TrainConfig(model=model)
    if config_path:
        for key, text in parse_config_file(config_path).items():
            if key in _MODEL_KEYS:
                model = replace(model, **{key: _coerce(getattr(model, key), text)})
            elif key in _TRAIN_KEYS:
                cfg = replace(cfg, **{key: _coerce(getattr(cfg, key), text)})
            else:
                raise ValueError(f"{config_path}: unknown config key {key!r}")
        cfg = replace(cfg, model=model)
    updates = {k: v for k, v in flag_overrides.items() if v is not None}
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def _stem_index(directory) -> dict[str, str]:
    index = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in (".png", ".ppm", ".pgm", ".pnm"):
            index[stem] = os.path.join(directory, name)
    return index


def _cmd_synth(args) -> int:
    clear_files = _stem_index(args.clear)
    depth_files = _stem_index(args.depth)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    failures = 0
    for stem, clear_path in clear_files.items():
        if stem not in depth_files:
            print(f"synth: no depth map for {stem!r}, skipping", file=sys.stderr)
            failures += 1
            continue
        try:
            clear = load_image(clear_path)
            depth = load_image(depth_files[stem])
            rng = np.random.default_rng([args.seed, zlib.crc32(stem.encode())])
            params = sample_haze_params(rng)
            t = transmission_from_depth(depth.data[:, :, 0], params.beta)
            hazy = synthesize_haze(clear.data, t, params)
            save_image(hazy, os.path.join(args.out, f"{stem}.png"))
            a = params.airlight
            rows.append(f"{stem}\t{a[0]:.6f}\t{a[1]:.6f}\t{a[2]:.6f}\t"
                        f"{params.beta:.6f}\t{args.seed}")
        except (ImageIOError, ValueError) as exc:
            print(f"synth: {stem}: {exc}", file=sys.stderr)
            failures += 1
    with open(os.path.join(args.out, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# stem\tA_r\tA_g\tA_b\tbeta\tseed\n")
        fh.write("".join(row + "\n" for row in rows))
    print(f"synth: wrote {len(rows)} hazy images to {args.out}")
    return 1 if failures else 0


def _cmd_patches(args) -> int:
    hazy_files = _stem_index(args.hazy)
    clear_files = _stem_index(args.clear)
    scenes = []
    for stem, hazy_path in hazy_files.items():
        if stem not in clear_files:
            print(f"patches: no clear image for {stem!r}", file=sys.stderr)
            return 1
        scenes.append((stem, hazy_path, clear_files[stem]))
    patchset = build_patchset(scenes, size=args.size, stride=args.stride,
                              augment_crops=args.augment)
    write_manifest(patchset, args.out)
    print(f"patches: {len(patchset)} records over {len(scenes)} scenes -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = build_train_config(
        args.profile, args.config, lr=args.lr, batch_size=args.batch_size,
        iters_per_epoch=args.iters_per_epoch, total_epochs=args.epochs,
        seed=args.seed, eval_every=args.eval_every)
    patchset = read_manifest(args.data)
    result = train(cfg, patchset, args.out, resume=args.resume, log=print)
    last = result.epoch_rows[-1] if result.epoch_rows else None
    if last:
        print(f"train: finished at epoch {last[0]}, loss {last[2]:.6f}; "
              f"checkpoints in {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = build_train_config(
        args.profile, args.config, lr=args.lr, batch_size=args.batch_size,
        iters_per_epoch=args.iters_per_epoch, total_epochs=args.epochs,
        seed=args.seed)
    try:
        blocks = [int(b) for b in args.blocks.split(",") if b]
    except ValueError:
        print(f"ablate: --blocks must be comma-separated integers, "
              f"got {args.blocks!r}", file=sys.stderr)
        return 2
    skips = {"both": (True, False), "on": (True,), "off": (False,)}[args.skip]
    patchset = read_manifest(args.data)
    results = run_ablation(cfg, ablation_variants(blocks, skips), patchset,
                           args.out, log=print)
    for name, res in results.items():
        reached = res.iters_to_reach(args.threshold_db)
        reached_txt = f"iter {reached}" if reached else "not reached"
        print(f"ablate: {name}: best {max(res.psnr_history):.2f} dB, "
              f"{args.threshold_db} dB at {reached_txt}")
    return 0


def _cmd_dehaze(args) -> int:
    if args.tile:
        if args.tile < 64 or args.tile % 16:
            print("dehaze: --tile must be >= 64 and a multiple of 16",
                  file=sys.stderr)
            return 2
        if args.overlap < 0 or args.overlap % 16 or args.overlap >= args.tile / 2:
            print("dehaze: --overlap must be a non-negative multiple of 16 "
                  "smaller than tile/2", file=sys.stderr)
            return 2
    ckpt = load_checkpoint(args.ckpt)
    img = load_image(getattr(args, "in"))
    if args.mem_report:
        est = memory_estimate(img.h, img.w, ckpt.config,
                              tile=args.tile if args.tile else None,
                              overlap=args.overlap)
        print(est.describe())
    if args.tile:
        restored = dehaze_tiled(img, ckpt, tile=args.tile, overlap=args.overlap)
    else:
        restored = dehaze(img, ckpt)
    save_image(restored, args.out)
    print(f"dehaze: {getattr(args, 'in')} -> {args.out} "
          f"({'tile ' + str(args.tile) if args.tile else 'whole image'})")
    return 0


def _cmd_eval(args) -> int:
    pairs = []
    names = []
    with open(args.pairs, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                print(f"eval: malformed line {line!r}", file=sys.stderr)
                return 1
            restored, truth = parts[0], parts[1]
            pairs.append((load_image(restored).data, load_image(truth).data))
            names.append(os.path.basename(restored))
    report = evaluate_pairs(pairs, names)
    print(report.format_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_tsv())
        print(f"eval: report written to {args.out}")
    return 0


def _op_checks(rng):
    """One randomized finite-difference case per differentiable op."""
    dims = lambda lo=1, hi=5: int(rng.integers(lo, hi))
    n, ci, co = dims(1, 3), dims(), dims()
    k = int(rng.choice([1, 3]))
    s = int(rng.integers(1, 3))
    pad = (k - 1) // 2
    h = int(rng.integers(k + s, 8))
    w = int(rng.integers(k + s, 8))
    x = rng.standard_normal((n, ci, h, w))
    wc = rng.standard_normal((co, ci, k, k))
    wd = rng.standard_normal((ci, co, k, k))
    b = rng.standard_normal(co)
    spec = ConvSpec(k, s, pad, ci, co)
    xr = rng.standard_normal((n, ci, h, w))
    xr[np.abs(xr) < 0.05] += 0.1  # keep relu probes away from the kink
    return [
        ("conv2d", lambda: grad_check(
            lambda x_, w_, b_: conv2d(x_, w_, b_, spec),
            lambda x_, w_, b_, cot: conv2d_backward(x_, w_, spec, cot),
            [x, wc, b], tolerance=1e-4)),
        ("deconv2d", lambda: grad_check(
            lambda x_, w_, b_: deconv2d(x_, w_, b_, spec),
            lambda x_, w_, b_, cot: deconv2d_backward(x_, w_, spec, cot),
            [x, wd, b], tolerance=1e-4)),
        ("relu", lambda: grad_check(
            lambda x_: relu(x_),
            lambda x_, cot: (relu_backward(x_, cot),),
            [xr], tolerance=1e-4)),
        ("add_channels", lambda: grad_check(
            lambda a_, b_: a_ + b_,
            lambda a_, b_, cot: (cot, cot),
            [x, xr], tolerance=1e-4)),
    ]


def _network_check(seed: int, coords: int, tol: float) -> tuple[float, bool]:
    cfg = ModelConfig(base_channels=4, encoder_levels=2, res_blocks=2)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed, dtype=np.float64)
    for key in params:  # break the zero-bias symmetry for a generic probe
        params[key] = params[key] + 0.01 * rng.standard_normal(params[key].shape)
    x = rng.uniform(0.0, 1.0, (1, 3, 16, 16))
    out, trace = forward(x, params, cfg)
    cot = rng.standard_normal(out.shape)
    grads = backward(trace, cot, params, cfg)

    def loss():
        o, _ = forward(x, params, cfg, keep_trace=False)
        return float(np.vdot(o, cot))

    keys = sorted(params)
    worst = 0.0
    step = 1e-5
    for _ in range(coords):
        key = keys[int(rng.integers(len(keys)))]
        flat = params[key].reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + step
        lp = loss()
        flat[i] = orig - step
        lm = loss()
        flat[i] = orig
        fd = (lp - lm) / (2 * step)
        a = float(grads[key].reshape(-1)[i])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst, worst < tol


def _cmd_gradcheck(args) -> int:
    failures = 0
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        for name, runner in _op_checks(rng):
            report = runner()
            if not report.passed or args.verbose:
                print(f"seed {seed} {name}: {report}")
            failures += 0 if report.passed else 1
    worst, ok = _network_check(0, coords=args.network_coords, tol=1e-4)
    print(f"network spot check: max rel err {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'})")
    failures += 0 if ok else 1
    print(f"gradcheck: {args.seeds} seeds x 4 ops + network: "
          f"{'all passed' if not failures else f'{failures} failures'}")
    return 1 if failures else 0


def _cmd_bench(args) -> int:
    rows = run_kernel_bench(repeats=args.repeats)
    if args.conv:
        rows += run_conv_bench(repeats=args.repeats)
    print(format_rows(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dehazer",
        description="haze synthesis, dehazing network training, and evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize hazy images from clear+depth pairs")
    p.add_argument("--clear", required=True, help="directory of clear images")
    p.add_argument("--depth", required=True, help="directory of depth maps "
                   "(grayscale, matched by filename stem)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("patches", help="build a patch manifest from paired images")
    p.add_argument("--hazy", required=True, help="directory of hazy images")
    p.add_argument("--clear", required=True, help="directory of clear images")
    p.add_argument("--out", required=True, help="manifest path to write")
    p.add_argument("--size", type=int, default=520, help="crop size (default 520)")
    p.add_argument("--stride", type=int, default=260,
                   help="crop stride (default 260)")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=True, help="emit the 12 rotation/flip variants "
                   "(default on)")
    p.set_defaults(func=_cmd_patches)

    def train_flags(p):
        p.add_argument("--config", default=None,
                       help="key=value config file (default none)")
        p.add_argument("--profile", choices=sorted(PROFILES), default="default",
                       help="architecture profile (default 'default')")
        p.add_argument("--lr", type=float, default=None,
                       help="learning rate (default 1e-4)")
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                       help="batch size (default 32)")
        p.add_argument("--iters-per-epoch", dest="iters_per_epoch", type=int,
                       default=None, help="iterations per epoch (default 2000)")
        p.add_argument("--epochs", type=int, default=None,
                       help="total epochs (default 72)")
        p.add_argument("--seed", type=int, default=None, help="seed (default 0)")

    p = sub.add_parser("train", help="train from a patch manifest")
    train_flags(p)
    p.add_argument("--data", required=True, help="patch manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", default=None,
                   help="checkpoint to resume from (default none)")
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None,
                   help="epochs between validation passes (default 1)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train block-count / skip variants")
    train_flags(p)
    p.add_argument("--data", required=True, help="patch manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--blocks", default="6,12,18,24",
                   help="comma-separated block counts (default 6,12,18,24)")
    p.add_argument("--skip", choices=("both", "on", "off"), default="both",
                   help="skip-connection variants to run (default both)")
    p.add_argument("--threshold-db", dest="threshold_db", type=float,
                   default=30.0, help="PSNR threshold to report (default 30)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("dehaze", help="restore one image with a checkpoint")
    p.add_argument("--in", required=True, help="input image")
    p.add_argument("--out", required=True, help="output image")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--tile", type=int, default=0,
                   help="tile size for tiled mode, 0 = whole image (default 0)")
    p.add_argument("--overlap", type=int, default=128,
                   help="tile overlap (default 128)")
    p.add_argument("--mem-report", action="store_true",
                   help="print the memory estimate before running (default off)")
    p.set_defaults(func=_cmd_dehaze)

    p = sub.add_parser("eval", help="PSNR/SSIM table for restored/truth pairs")
    p.add_argument("--pairs", required=True,
                   help="TSV of restored<TAB>truth image paths")
    p.add_argument("--out", default=None,
                   help="also write the TSV report here (default none)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=5,
                   help="randomized cases per op (default 5)")
    p.add_argument("--network-coords", dest="network_coords", type=int,
                   default=20, help="sampled parameter coordinates for the "
                   "whole-network check (default 20)")
    p.add_argument("--verbose", action="store_true",
                   help="print per-case reports (default off)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--repeats", type=int, default=3,
                   help="timing repeats (default 3)")
    p.add_argument("--conv", action="store_true",
                   help="also time end-to-end conv2d (default off)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"dehazer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
