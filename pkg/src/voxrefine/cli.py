"""Command-line pipeline driver.

Subcommands cover the whole flow: synthesize clouds, simulate the codec,
train the refinement model, refine decoded clouds, score D1/PSNR, sweep
rate-distortion curves, and compare curves with BD-PSNR. Options resolve
as flags > config file > built-in defaults, and every command writes a
`<out>.runlog` echoing the resolved options so runs can be replayed.

Exit codes: 0 success, 2 parse/format errors, 3 domain errors, 4 I/O.
"""

from __future__ import annotations

import argparse
import glob as globmod
import os
import sys

from . import codec, metrics, network, report, synth
from .errors import DomainError, InputError, ParseError, VoxRefineError
from .metrics import RDCurve, d1_psnr, per_point_errors
from .network import (AdaptiveThreshold, FixedThreshold, UNetConfig,
                      load_weights_file, nni_upsample, refine,
                      save_weights_file, side_channel_counts, train)
from .pointcloud import PointCloud, read_ply_file, write_ply_file

DEFAULTS = {
    "seed": 0,
    "cube_size": "64,64,64",
    "levels": 4,
    "base_channels": 16,
    "kernel": 3,
    "multiscale": "on",
    "sigma": network.DEFAULT_SIGMA,
    "lr": 0.001,
    "batch": 64,
    "ply_format": "binary",
}


def _read_text(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_config_file(path) -> dict:
    """Plain `key=value` lines; `#` starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


class _Options:
    """Resolved options: flag wins, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
        self.resolved = {}

    def get(self, name: str, cast=str, default=None):
        value = self.args.get(name)
        if value is None:
            value = self.cfg.get(name)
            if value is not None:
                try:
                    value = cast(value)
                except ValueError:
                    raise ParseError(f"config value {name}={value!r} is not valid")
        if value is None:
            value = DEFAULTS.get(name) if default is None else default
            if value is not None and not isinstance(value, (int, float, tuple)):
                value = cast(value)
        self.resolved[name] = value
        return value

    def note(self, name: str, value) -> None:
        self.resolved[name] = value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise ParseError(f"expected a comma-separated integer list, got {text!r}")
    if not values:
        raise ParseError(f"expected at least one integer in {text!r}")
    return values


def _cube_size(text) -> tuple[int, int, int]:
    values = _int_list(text)
    if len(values) == 1:
        values = values * 3
    if len(values) != 3:
        raise ParseError(f"cube size needs 1 or 3 integers, got {text!r}")
    return tuple(values)


def _on_off(text) -> bool:
    t = str(text).strip().lower()
    if t in ("on", "1", "true", "yes"):
        return True
    if t in ("off", "0", "false", "no"):
        return False
    raise ParseError(f"expected on|off, got {text!r}")


def _unet_config(opt: _Options) -> UNetConfig:
    return UNetConfig(
        cube_size=_cube_size(opt.get("cube_size")),
        levels=opt.get("levels", int),
        base_channels=opt.get("base_channels", int),
        kernel=opt.get("kernel", int),
        multiscale=_on_off(opt.get("multiscale")),
        seed=opt.get("seed", int),
    )


def _write_runlog(primary_out, command: str, opt: _Options) -> None:
    lines = [f"command={command}"]
    for key in sorted(opt.resolved):
        lines.append(f"{key}={opt.resolved[key]}")
    _write_text(str(primary_out) + ".runlog", "\n".join(lines) + "\n")


def _load_cloud(path, depth_flag: int | None) -> PointCloud:
    pc = read_ply_file(path)
    if depth_flag is not None and depth_flag != pc.depth:
        pc = PointCloud(pc.points, depth_flag)
    return pc


def _figure_path(csv_path) -> str:
    return os.path.splitext(str(csv_path))[0] + ".png"


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    fmt = opt.get("ply_format")
    specs = synth.parse_spec_file(_read_text(args.spec))
    opt.note("spec", args.spec)
    if len(specs) == 1:
        paths = [out]
    else:
        base, ext = os.path.splitext(out)
        paths = [f"{base}_{i}{ext}" for i in range(len(specs))]
    for spec, path in zip(specs, paths):
        pc = synth.generate(spec)
        write_ply_file(path, pc, format=fmt)
        print(f"{path}: {len(pc)} points, depth {pc.depth} ({spec.shape})")
    _write_runlog(out, "synth", opt)
    return 0


def cmd_compress(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    rate_out = opt.get("rate_out", default=str(out) + ".rate.csv")
    target = opt.get("target_depth", int)
    if target is None:
        raise InputError("--target-depth is required")
    center = _on_off(opt.get("center", default="off"))
    opt.note("in", args.infile)
    pc = _load_cloud(args.infile, opt.get("depth", int, default=0) or None)
    dec, rp = codec.rate_point(pc, target, center=center)
    fmt = opt.get("ply_format")
    write_ply_file(out, dec, format=fmt)
    res = d1_psnr(pc, dec, pc.depth)
    _write_text(
        rate_out,
        "target_depth,bits,bpp,psnr_db\n"
        f"{rp.target_depth},{rp.bits},{rp.bpp:.10g},{res.psnr_db:.10g}\n",
    )
    _write_runlog(out, "compress", opt)
    print(
        f"{out}: {len(dec)} points at depth {target} "
        f"({rp.bpp:.4f} bpp, {res.psnr_db:.2f} dB)"
    )
    return 0


def cmd_train(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    loss_out = opt.get("loss_out", default=str(out) + ".loss.csv")
    depths_text = opt.get("depths")
    if depths_text is None:
        raise InputError("--depths (coded depths) is required")
    coded_depths = _int_list(depths_text)
    epochs = opt.get("epochs", int)
    if epochs is None:
        raise InputError("--epochs is required")
    lr = opt.get("lr", float)
    batch = opt.get("batch", int)
    config = _unet_config(opt)
    depth_flag = opt.get("depth", int, default=0) or None

    paths = []
    for pattern in args.gt:
        matched = sorted(globmod.glob(pattern))
        paths.extend(matched if matched else [pattern])
    opt.note("gt", ";".join(str(p) for p in paths))
    clouds = [_load_cloud(p, depth_flag) for p in paths]
    if not clouds:
        raise InputError("no ground-truth clouds given")
    pairs = []
    for pc in clouds:
        pairs.extend(synth.cloud_pairs(pc, coded_depths, config.cube_size))
    if not pairs:
        raise InputError("no training pairs were produced")

    def progress(epoch, loss):
        if (epoch + 1) % max(1, epochs // 10) == 0 or epoch == 0:
            print(f"epoch {epoch + 1}/{epochs}: loss {loss:.6f}")

    weights, history = train(pairs, config, epochs=epochs, lr=lr, batch=batch,
                             log=progress)
    save_weights_file(out, weights)
    _write_text(
        loss_out,
        "epoch,loss\n"
        + "".join(f"{i + 1},{v:.10g}\n" for i, v in enumerate(history)),
    )
    report.render_loss_figure(_figure_path(loss_out), history)
    _write_runlog(out, "train", opt)
    print(f"{out}: {len(pairs)} pairs, final loss {history[-1]:.6f}")
    return 0


def _parse_strategy(opt: _Options):
    text = str(opt.get("strategy", default="fixed"))
    name, sep, param = text.partition(":")
    name = name.strip().lower()
    if name == "fixed":
        sigma = float(param) if sep else opt.get("sigma", float)
        return ("fixed", sigma)
    if name == "adaptive":
        return ("adaptive", None)
    raise ParseError(f"unknown strategy {text!r}; use fixed[:sigma] or adaptive")


def cmd_refine(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    opt.note("in", args.infile)
    opt.note("ckpt", args.ckpt)
    dec = _load_cloud(args.infile, opt.get("depth", int, default=0) or None)
    weights = load_weights_file(args.ckpt)
    kind, sigma = _parse_strategy(opt)
    if kind == "fixed":
        strategy = FixedThreshold(sigma=sigma)
    else:
        side_in = opt.get("side", default="")
        gt_path = opt.get("gt", default="")
        if side_in:
            with open(side_in, "rb") as fh:
                counts = codec.decode_side_channel(fh.read())
        elif gt_path:
            gt = _load_cloud(gt_path, None)
            counts = side_channel_counts(gt, dec, weights.config.cube_size)
            side = codec.encode_side_channel(counts)
            side_out = opt.get("side_out", default="")
            if side_out:
                with open(side_out, "wb") as fh:
                    fh.write(side.payload)
        else:
            raise DomainError(
                "adaptive strategy needs --side (a side-channel file) "
                "or --gt (a ground-truth cloud to build one)"
            )
        strategy = AdaptiveThreshold(counts=tuple(counts))
    refined = refine(dec, weights, strategy)
    write_ply_file(out, refined, format=opt.get("ply_format"))
    _write_runlog(out, "refine", opt)
    print(f"{out}: {len(refined)} points (from {len(dec)} decoded)")
    return 0


def cmd_eval(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    opt.note("a", args.a)
    opt.note("b", args.b)
    a = _load_cloud(args.a, None)
    b = _load_cloud(args.b, None)
    depth = opt.get("depth", int, default=0) or max(a.depth, b.depth)
    opt.note("depth", depth)
    res = d1_psnr(a, b, depth)
    sq = per_point_errors(a, b)
    _write_text(out, metrics.errors_to_csv(a, sq))
    report.render_error_histogram(_figure_path(out), sq)
    _write_runlog(out, "eval", opt)
    print(
        f"D1 mse_ab={res.mse_ab:.6f} mse_ba={res.mse_ba:.6f} "
        f"psnr={res.psnr_db:.2f} dB (depth {depth})"
    )
    return 0


def _series_psnr(gt: PointCloud, cloud: PointCloud, label: str) -> float:
    # An empty candidate cloud has unbounded error; record the floor and warn
    # instead of aborting the whole sweep.
    if len(cloud) == 0:
        print(f"warning: {label} produced an empty cloud; scoring 0 dB",
              file=sys.stderr)
        return 0.0
    return d1_psnr(gt, cloud, gt.depth).psnr_db


def cmd_rd(args) -> int:
    opt = _Options(args)
    out = opt.get("out")
    opt.note("gt", args.gt)
    opt.note("ckpt", args.ckpt)
    depths_text = opt.get("depths")
    if depths_text is None:
        raise InputError("--depths is required")
    depths = sorted(set(_int_list(depths_text)))
    sigma = opt.get("sigma", float)
    gt = _load_cloud(args.gt, opt.get("depth", int, default=0) or None)
    weights = load_weights_file(args.ckpt)
    cube_size = weights.config.cube_size

    series = {name: [] for name in ("raw", "nni", "refined-ft", "refined-at")}
    at_bits = []
    for target in depths:
        dec, rp = codec.rate_point(gt, target)
        shift = gt.depth - target
        series["raw"].append((rp.bpp, _series_psnr(gt, dec, "raw")))
        series["nni"].append(
            (rp.bpp, _series_psnr(gt, nni_upsample(dec, shift), "nni"))
        )
        ft = refine(dec, weights, FixedThreshold(sigma=sigma))
        series["refined-ft"].append((rp.bpp, _series_psnr(gt, ft, "refined-ft")))
        counts = side_channel_counts(gt, dec, cube_size)
        side = codec.encode_side_channel(counts)
        at = refine(dec, weights, AdaptiveThreshold(counts=tuple(counts)))
        at_bpp = (rp.bits + side.bits) / len(gt)
        series["refined-at"].append((at_bpp, _series_psnr(gt, at, "refined-at")))
        at_bits.append(side.bits)
        print(
            f"depth {target}: raw {series['raw'][-1][1]:.2f} dB, "
            f"nni {series['nni'][-1][1]:.2f} dB, "
            f"ft {series['refined-ft'][-1][1]:.2f} dB, "
            f"at {series['refined-at'][-1][1]:.2f} dB"
        )

    # RDCurve sorts by bpp, so keep the side-bits column aligned with it.
    at_sorted = sorted(zip(series["refined-at"], at_bits))
    series["refined-at"] = [pt for pt, _ in at_sorted]
    at_bits = [bits for _, bits in at_sorted]
    curves = []
    for name in ("raw", "nni", "refined-ft", "refined-at"):
        curve = RDCurve(points=tuple(series[name]), label=name)
        bits = at_bits if name == "refined-at" else None
        curves.append((curve, bits))
    _write_text(out, metrics.rd_to_csv(curves))
    report.render_rd_figure(_figure_path(out), [c for c, _ in curves])
    _write_runlog(out, "rd", opt)
    return 0


def cmd_bdpsnr(args) -> int:
    opt = _Options(args)
    opt.note("ref", args.ref)
    opt.note("test", args.test)
    ref = metrics.rd_from_csv(_read_text(args.ref),
                              label=opt.get("ref_label", default="") or None)
    test = metrics.rd_from_csv(_read_text(args.test),
                               label=opt.get("test_label", default="") or None)
    delta = metrics.bd_psnr(ref, test)
    print(f"{delta:.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file; flags win")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", required=True, help="primary output path")


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--cube-size", dest="cube_size")
    sub.add_argument("--levels", type=int)
    sub.add_argument("--base-channels", dest="base_channels", type=int)
    sub.add_argument("--kernel", type=int)
    sub.add_argument("--multiscale", choices=("on", "off"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxrefine",
        description="Learning-based geometry refinement for decompressed "
                    "voxelized point clouds.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate synthetic clouds from a spec file")
    p.add_argument("spec", help="shape spec file, one generator per line")
    p.add_argument("--ply-format", dest="ply_format", choices=("ascii", "binary"))
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("compress", help="simulate coding at a lower depth")
    p.add_argument("infile", help="ground-truth PLY")
    p.add_argument("--target-depth", dest="target_depth", type=int)
    p.add_argument("--depth", type=int, help="override the input bit depth")
    p.add_argument("--center", choices=("on", "off"),
                   help="reconstruct to cell centers instead of low corners")
    p.add_argument("--rate-out", dest="rate_out", help="rate CSV path")
    p.add_argument("--ply-format", dest="ply_format", choices=("ascii", "binary"))
    _add_common(p)
    p.set_defaults(func=cmd_compress)

    p = subs.add_parser("train", help="train the refinement model")
    p.add_argument("gt", nargs="+", help="ground-truth PLY paths or globs")
    p.add_argument("--depths", help="coded depths, e.g. 7,6,5")
    p.add_argument("--depth", type=int, help="override the input bit depth")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--loss-out", dest="loss_out", help="loss history CSV path")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("refine", help="refine a decoded cloud with a checkpoint")
    p.add_argument("infile", help="decoded PLY")
    p.add_argument("ckpt", help="weight checkpoint")
    p.add_argument("--strategy", help="fixed[:sigma] or adaptive")
    p.add_argument("--sigma", type=float)
    p.add_argument("--gt", help="ground-truth PLY to build the side channel")
    p.add_argument("--side", help="side-channel file to read counts from")
    p.add_argument("--side-out", dest="side_out", help="write the side channel here")
    p.add_argument("--depth", type=int, help="override the input bit depth")
    p.add_argument("--ply-format", dest="ply_format", choices=("ascii", "binary"))
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = subs.add_parser("eval", help="D1 distortion between two clouds")
    p.add_argument("a", help="first PLY (direction a->b drives the CSV)")
    p.add_argument("b", help="second PLY")
    p.add_argument("--depth", type=int, help="bit depth for the PSNR peak")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("rd", help="rate-distortion sweep: raw/NNI/FT/AT")
    p.add_argument("gt", help="ground-truth PLY")
    p.add_argument("ckpt", help="weight checkpoint")
    p.add_argument("--depths", help="coded depths to sweep, e.g. 7,6,5")
    p.add_argument("--depth", type=int, help="override the input bit depth")
    p.add_argument("--sigma", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_rd)

    p = subs.add_parser("bdpsnr", help="BD-PSNR between two RD CSVs")
    p.add_argument("ref", help="reference curve CSV")
    p.add_argument("test", help="test curve CSV")
    p.add_argument("--ref-label", dest="ref_label")
    p.add_argument("--test-label", dest="test_label")
    p.add_argument("--config", help="key=value config file; flags win")
    p.set_defaults(func=cmd_bdpsnr)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VoxRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
