"""Command line entry points.

Exit codes: 0 success, 1 usage error, 2 format error, 3 acceptance-check
failure (eval --check).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .codec import decode_sequence, read_stream, write_stream
from .errors import ConfigError, FormatError
from .evaluation import (
    RdCurve, RdPoint, allocation_report, bd_rate, ablation_run, eval_sequence,
    read_rd_csv, write_rd_csv,
)
from .rendering import render_image, write_ppm
from .scene import default_scene, hemisphere_rig, load_dataset, make_dataset
from .training import encode_sequence, load_config


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config field (repeatable)",
    )


def _config_from(args) -> "TrainConfig":  # noqa: F821
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(getattr(args, "config", None), overrides)


def cmd_synth(args) -> int:
    scene = default_scene(n_frames=args.frames, static=args.static)
    cams = hemisphere_rig(args.views, args.size, args.size)
    ds = make_dataset(scene, cams, args.out, n_test_views=args.test_views)
    print(f"wrote {ds.n_frames} frames x {len(ds.cameras)} views at "
          f"{ds.width}x{ds.height} under {args.out}")
    return 0


def cmd_encode(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data)

    def progress(frame, total, metrics):
        loss = metrics["loss"][-1]
        print(f"frame {frame + 1}/{total}  final loss {loss:.4g}", flush=True)

    stream, _ = encode_sequence(dataset, cfg, progress=progress)
    write_stream(stream, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_decode(args) -> int:
    stream = read_stream(args.stream)
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    for frame, (ftype, fs) in enumerate(decode_sequence(stream)):
        path = f"{args.out_dir}/frame{frame:04d}.npz"
        arrays = {
            "coef": fs.coef.values,
            "mlp": fs.mlp.pack_f32(),
            "frame_type": np.array(ftype),
        }
        for i, (g, freq) in enumerate(fs.basis.levels):
            arrays[f"basis{i}"] = g.values
            arrays[f"freq{i}"] = np.array(freq)
        np.savez(path, **arrays)
    print(f"decoded {len(stream.frames)} frames into {args.out_dir}")
    return 0


def cmd_render(args) -> int:
    stream = read_stream(args.stream)
    dataset = load_dataset(args.data)
    decoded = decode_sequence(stream)
    if not 0 <= args.frame < len(decoded):
        raise ConfigError(f"frame {args.frame} outside stream ({len(decoded)} frames)")
    _, fs = decoded[args.frame]
    cam = dataset.cameras[args.view]
    img = render_image(fs, cam, stream.header.n_samples, stream.header.background)
    write_ppm(args.out, img)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    stream = read_stream(args.stream)
    dataset = load_dataset(args.data)
    point, rows = eval_sequence(stream, dataset)
    print(f"{'frame':>5} {'type':>4} {'bits':>10} {'psnr_train':>10} {'psnr_test':>10}")
    for r in rows:
        t = "I" if r.frame_type == 0 else "P"
        print(f"{r.frame:>5} {t:>4} {r.bits:>10} {r.psnr_train:>10.3f} {r.psnr_test:>10.3f}")
    print(f"mean bits/frame {point.bits_per_frame:.1f}  "
          f"train {point.psnr_train:.3f} dB  test {point.psnr_test:.3f} dB")
    rep = allocation_report(stream)
    pc = rep.percents()
    print("allocation: " + "  ".join(
        f"{k} {rep.bytes_by_component[k]}B ({pc[k]:.1f}%)" for k in rep.bytes_by_component
    ))
    if args.csv:
        write_rd_csv(args.csv, RdCurve("eval", [point]))
        print(f"wrote {args.csv}")
    if args.check:
        ok = point.psnr_train >= args.min_train_psnr and point.psnr_test >= args.min_test_psnr
        print(f"check: train >= {args.min_train_psnr} and test >= {args.min_test_psnr}: "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            return 3
    return 0


def cmd_bdrate(args) -> int:
    a = read_rd_csv(args.anchor, "anchor")
    b = read_rd_csv(args.test, "test")
    val = bd_rate(a, b, split=args.split)
    print(f"BD-rate ({args.split}): {val:+.2f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data)
    rows = ablation_run(dataset, cfg)
    print(f"{'row':<22} {'bits/frame':>14} {'psnr_train':>10} {'psnr_test':>10}")
    for r in rows:
        print(f"{r.label:<22} {r.bits_per_frame:>14.1f} {r.psnr_train:>10.3f} {r.psnr_test:>10.3f}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("label,bits_per_frame,psnr_train,psnr_test\n")
            for r in rows:
                f.write(f"{r.label},{r.bits_per_frame:.17g},{r.psnr_train:.17g},{r.psnr_test:.17g}\n")
        print(f"wrote {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvvc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render the synthetic blob dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=40)
    s.add_argument("--views", type=int, default=20)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--test-views", type=int, default=4)
    s.add_argument("--static", action="store_true", help="freeze blob motion")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="train and encode a dataset to .nvv")
    s.add_argument("--config", default=None, help="key=value config file")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    _add_overrides(s)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="decode a .nvv stream to per-frame field archives")
    s.add_argument("stream")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("render", help="render one decoded frame from a dataset viewpoint")
    s.add_argument("--stream", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--view", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="decode, render, and report rate/PSNR")
    s.add_argument("--stream", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--csv", default=None)
    s.add_argument("--check", action="store_true")
    s.add_argument("--min-train-psnr", type=float, default=30.0)
    s.add_argument("--min-test-psnr", type=float, default=27.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bdrate", help="BD-rate between two RD CSV curves")
    s.add_argument("anchor")
    s.add_argument("test")
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.set_defaults(func=cmd_bdrate)

    s = sub.add_parser("ablate", help="three-row step-by-step analysis")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--csv", default=None)
    _add_overrides(s)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
