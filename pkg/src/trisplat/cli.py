"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

log = logging.getLogger("trisplat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared(p):
    p.add_argument("--config", help="flat key=value config file (default: built-in defaults)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: 0, or the config's seed)")
    p.add_argument("--deterministic", action="store_true",
                   help="single worker thread for bit-reproducible runs (default: off)")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads (default: all cores)")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                   help="stderr log level (default: INFO)")


def build_parser() -> argparse.ArgumentParser:
    from .extract import MODES as EXTRACT_MODES
    from .io.ply import MODES as PLY_MODES
    from .synthetic import PRESETS

    ap = _Parser(prog="trisplat", description="Differentiable triangle splatting on the CPU.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="optimize a triangle scene against posed images")
    _shared(p)
    p.add_argument("--data", required=True, help="manifest.json, a directory holding one, or a COLMAP text model")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iters", type=int, default=None, help="training iterations (default: 30000)")
    p.add_argument("--resume", default=None, help="training checkpoint to continue from (default: none)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--ply-mode", default="vertex-color", choices=PLY_MODES, help="final PLY layout")

    p = sub.add_parser("render", help="render one view of a trained scene")
    _shared(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint (.tsp) or PLY scene")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--camera-index", type=int, help="index of a camera in --data")
    g.add_argument("--pose", help="JSON file with one camera (fx, fy, cx, cy, R, t, width, height)")
    p.add_argument("--data", default=None, help="dataset providing the cameras (needed with --camera-index)")
    p.add_argument("--out", required=True, help="output image path (.png/.ppm)")
    p.add_argument("--aa-scale", type=int, default=2, help="supersampling factor (default: 2)")
    p.add_argument("--sigma", type=float, default=None, help="smoothness (default: the checkpoint's value)")

    p = sub.add_parser("eval", help="PSNR/SSIM of a trained scene on a dataset split")
    _shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"), help="(default: test)")
    p.add_argument("--aa-scale", type=int, default=2, help="(default: 2)")
    p.add_argument("--sigma", type=float, default=1e-4, help="(default: 1e-4)")
    p.add_argument("--out", default=None, help="optional CSV with per-view rows")

    p = sub.add_parser("export-ply", help="write the mesh of a checkpoint as binary PLY")
    _shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="vertex-color", choices=PLY_MODES, help="(default: vertex-color)")

    p = sub.add_parser("extract", help="extract or remove the triangles under per-view masks")
    _shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset providing the cameras")
    p.add_argument("--masks", required=True, help="directory of <view name>.png masks (>127 is inside)")
    p.add_argument("--mode", default="extract", choices=EXTRACT_MODES, help="(default: extract)")
    p.add_argument("--min-views", type=int, default=1, help="views a triangle must win in (default: 1)")
    p.add_argument("--out", required=True, help="output .ply or .tsp")

    p = sub.add_parser("make-synthetic", help="generate a self-contained synthetic dataset")
    _shared(p)
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--out", required=True, help="output directory")
    return ap


def _setup(args):
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    threads = args.threads
    if args.deterministic and threads is None:
        threads = 1
    if threads is not None:
        import numba

        if threads < 1:
            raise UsageError("--threads must be >= 1")
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _options(args) -> dict:
    from .config import read_config_file

    opts = read_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        opts[k.strip()] = v.strip()
    if getattr(args, "iters", None) is not None:
        opts["iters"] = str(args.iters)
    if args.seed is not None:
        opts["seed"] = str(args.seed)
    return opts


def _load_scene(path):
    from .io import load_scene, scene_from_ply

    if not os.path.isfile(path):
        from .io import DataError

        raise DataError(f"{path}: checkpoint not found")
    if path.lower().endswith(".ply"):
        return scene_from_ply(path)
    return load_scene(path)


def cmd_train(args) -> int:
    from .config import make_config, write_config_file
    from .io import export_ply, load_dataset, save_scene
    from .trainer import Trainer

    opts = _options(args)
    try:
        cfg = make_config(opts)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from e
    ds = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        # without explicit options the run continues under its saved config
        tr = Trainer.resume(args.resume, ds, cfg if opts else None, out_dir=args.out)
        cfg = tr.cfg
    else:
        for name in ("metrics.csv", "eval.csv"):
            if os.path.exists(os.path.join(args.out, name)):
                os.remove(os.path.join(args.out, name))
        tr = Trainer(ds, cfg, out_dir=args.out)
    write_config_file(cfg, os.path.join(args.out, "config.txt"))
    res = tr.run()
    tr.save(os.path.join(args.out, "checkpoint.tsp"))
    save_scene(res.scene, os.path.join(args.out, "scene.tsp"))
    export_ply(res.scene, os.path.join(args.out, "final.ply"), args.ply_mode)
    if ds.test_ids and cfg.iters > 0:
        tab = tr.run_eval()
        print(f"held-out mean PSNR {tab.mean_psnr:.2f} dB, SSIM {tab.mean_ssim:.4f}")
    print(f"{res.scene.n_triangles} triangles, {res.scene.n_vertices} vertices -> {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .io import load_dataset, write_image
    from .raster import render_aa
    from .scene import Camera

    scene = _load_scene(args.checkpoint)
    if args.pose:
        with open(args.pose, encoding="utf-8") as f:
            cam = Camera.from_dict(json.load(f))
        bg = (0.0, 0.0, 0.0)
    else:
        if not args.data:
            raise UsageError("--camera-index needs --data")
        ds = load_dataset(args.data, load_images=False)
        if not 0 <= args.camera_index < len(ds):
            raise UsageError(f"camera index {args.camera_index} out of range (dataset has {len(ds)} views)")
        cam, bg = ds.cameras[args.camera_index], ds.background
    if args.aa_scale < 1:
        raise UsageError("--aa-scale must be >= 1")
    out = render_aa(scene, cam, args.aa_scale, sigma=args.sigma, background=bg)
    write_image(out.color, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .io import load_dataset
    from .trainer import evaluate

    scene = _load_scene(args.checkpoint)
    ds = load_dataset(args.data)
    ids = ds.split(args.split)
    if not ids:
        raise UsageError(f"split {args.split!r} is empty")
    tab = evaluate(scene, ds, args.split, args.aa_scale, args.sigma)
    for r in tab.rows:
        print(f"{r['view']:4d} {r['name']:>16s}  psnr {r['psnr']:7.3f}  ssim {r['ssim']:.4f}")
    print(f"mean psnr {tab.mean_psnr:.3f}  ssim {tab.mean_ssim:.4f}  verts {tab.n_verts}  tris {tab.n_tris}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=("view", "name", "psnr", "ssim", "n_verts", "n_tris"),
                               extrasaction="ignore")
            w.writeheader()
            for r in tab.as_rows():
                w.writerow(r)
    return EXIT_OK


def cmd_export_ply(args) -> int:
    from .io import export_ply

    scene = _load_scene(args.checkpoint)
    export_ply(scene, args.out, args.mode)
    print(f"wrote {args.out} ({scene.n_vertices} vertices, {scene.n_triangles} faces)")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .extract import collect_triangles, split_scene
    from .io import DataError, export_ply, load_dataset, read_mask, save_scene

    scene = _load_scene(args.checkpoint)
    ds = load_dataset(args.data, load_images=False)
    if not os.path.isdir(args.masks):
        raise DataError(f"{args.masks}: mask directory not found")
    masks, found = [], 0
    for name in ds.names:
        p = os.path.join(args.masks, name + ".png")
        if os.path.isfile(p):
            masks.append(read_mask(p))
            found += 1
        else:
            masks.append(None)
    if not found:
        raise DataError(f"{args.masks}: no <view name>.png masks match the dataset")
    try:
        ids = collect_triangles(scene, ds.cameras, masks, args.min_views)
    except ValueError as e:
        raise DataError(str(e)) from e
    part = split_scene(scene, ids, args.mode)
    if args.out.lower().endswith(".ply"):
        export_ply(part, args.out)
    else:
        save_scene(part, args.out)
    print(f"{len(ids)} triangles selected over {found} masked views; {args.mode} -> "
          f"{part.n_triangles} triangles in {args.out}")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    from .synthetic import make_synthetic

    info = make_synthetic(args.preset, args.out, seed=0 if args.seed is None else args.seed)
    print(f"{args.preset}: {info['views']} views, {info['triangles']} triangles -> {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "render": cmd_render, "eval": cmd_eval, "export-ply": cmd_export_ply,
            "extract": cmd_extract, "make-synthetic": cmd_make_synthetic}


def main(argv=None) -> int:
    from .delaunay import DelaunayError
    from .io.errors import DataError
    from .trainer import EmptySceneError, NumericalError

    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        _setup(args)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"trisplat {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DelaunayError, FileNotFoundError) as e:
        print(f"trisplat {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, EmptySceneError, FloatingPointError) as e:
        print(f"trisplat {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
