"""Command-line surface: synth, train, eval, restore, slice, sweep.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
OR2_THREADS caps internal parallelism (the numeric kernels run on one
worker; the cap bounds sweep workers).
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, stream, synth
from .io import CONFIG_DEFAULTS, DataError
from .renderer import render
from .stream import StreamConfig


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("OR2_THREADS", "1")))
    except ValueError:
        return 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _kebab(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser):
    """Every RunConfig key is also a CLI flag (kebab-case)."""
    for key, default in CONFIG_DEFAULTS.items():
        if key == "sweep_arms":
            continue  # structured; config-file only
        flag = _kebab(key)
        if isinstance(default, bool):
            parser.add_argument(flag, dest=key, default=None,
                                action=argparse.BooleanOptionalAction)
        elif isinstance(default, list) and key == "eval_cameras":
            parser.add_argument(flag, dest=key, default=None, type=int,
                                nargs="*")
        elif isinstance(default, list):
            parser.add_argument(flag, dest=key, default=None, type=float,
                                nargs=2)
        elif isinstance(default, int) or key == "max_frames":
            parser.add_argument(flag, dest=key, default=None, type=int)
        elif isinstance(default, float):
            parser.add_argument(flag, dest=key, default=None, type=float)
        else:
            parser.add_argument(flag, dest=key, default=None)


def _resolve_config(args) -> dict:
    cfg = io.load_config(args.config) if args.config else io.default_config()
    for key in CONFIG_DEFAULTS:
        if key == "sweep_arms":
            continue
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "no_residual", False):
        cfg["use_residual_maps"] = False
    return cfg


def _require(cfg, key):
    if cfg.get(key) is None:
        raise _UsageError(f"missing required option {_kebab(key)}")
    return cfg[key]


def _clean_dataset_path(cfg) -> Path:
    if cfg.get("clean_dataset"):
        return Path(cfg["clean_dataset"])
    return Path(_require(cfg, "dataset")).parent / "clean"


def cmd_synth(cfg: dict) -> int:
    out = Path(_require(cfg, "out"))
    scene = synth.make_scene(
        seed=cfg["seed"], n_static=cfg["n_static"], n_dynamic=cfg["n_dynamic"],
        n_cameras=cfg["n_cameras"], frames=cfg["frames"],
        resolution=cfg["resolution"])
    init = synth.jitter_points(scene, cfg["jitter_sigma"],
                               cfg["keep_fraction"], cfg["seed"])
    synth.export_dataset(scene, None, out / "clean", init)
    spec = synth.NoiseSpec(cfg["noise_sigma"], cfg["photons"], cfg["seed"])
    synth.export_dataset(scene, spec, out / "noisy", init)
    print(f"wrote {out / 'clean'} and {out / 'noisy'} "
          f"({cfg['n_cameras']} cams x {cfg['frames']} frames x 2 variants)")
    return 0


def cmd_train(cfg: dict) -> int:
    dataset = _require(cfg, "dataset")
    out = Path(_require(cfg, "out"))
    source = stream.open_dataset(dataset, cfg["eval_cameras"],
                                 cfg["max_frames"])
    scfg = StreamConfig.from_dict(cfg)
    out.mkdir(parents=True, exist_ok=True)
    io.save_config(out / "run_config.json", cfg)
    results = stream.run_stream(source, scfg, out_dir=out,
                                strip_residual=cfg["strip_residual"],
                                retain_results=False)
    print(f"trained {len(results)} frames -> {out} "
          f"(final {results[-1].n_gaussians} gaussians)")
    return 0


def _load_run(run_dir):
    run = Path(run_dir)
    paths = sorted(run.glob("checkpoint_*.or2g"))
    if not paths:
        raise DataError(f"{run}: no checkpoints found")
    return run, paths


def _read_clean_frames(clean_root, cam_indices, n_frames):
    frames = {}
    for c in cam_indices:
        frames[c] = [io.read_ppm(clean_root / f"cam{c}" / f"frame{t}.ppm")
                     for t in range(n_frames)]
    return frames


def cmd_eval(cfg: dict, compare=None) -> int:
    """Render held-out views from each checkpoint and score against clean GT."""
    run, ckpts = _load_run(_require(cfg, "out"))
    clean_root = _clean_dataset_path(cfg)
    rig = io.load_rig(clean_root / "rig.json")
    eval_cams = cfg["eval_cameras"]
    if not eval_cams:
        raise _UsageError("eval requires at least one eval camera")
    n_frames = len(ckpts)
    reference = _read_clean_frames(clean_root, eval_cams, n_frames)
    masks = {c: io.read_pgm(clean_root / "masks" / f"cam{c}.pgm")
             for c in eval_cams}

    rendered = {c: [] for c in eval_cams}
    for path in ckpts:
        g, _ = io.read_checkpoint(path)
        for c in eval_cams:
            img, _ = render(g, rig[c])
            rendered[c].append(np.clip(img.rgb, 0.0, 1.0))

    rows, summary = metrics.evaluate_frames(
        [rendered[c] for c in eval_cams],
        [reference[c] for c in eval_cams],
        [metrics.StaticMask(masks[c]) for c in eval_cams])

    report = run / "report.csv"
    with open(report, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "psnr", "ssim"])
        for t, p, s in rows:
            w.writerow([t, f"{p:.6f}", f"{s:.6f}"])
        w.writerow(["mean", f"{summary['psnr']:.6f}", f"{summary['ssim']:.6f}"])
    (run / "mtv.txt").write_text(
        "" if summary["mtv"] is None else f"{summary['mtv']:.6f}\n")

    slices = run / "slices"
    slices.mkdir(exist_ok=True)
    for c in eval_cams:
        column = rig[c].width // 2
        io.write_ppm(slices / f"cam{c}_col{column}.ppm",
                     metrics.st_slice(rendered[c], column))

    print(f"eval: psnr {summary['psnr']:.3f} ssim {summary['ssim']:.4f} "
          f"mtv {summary['mtv'] if summary['mtv'] is not None else 'n/a'}")

    if compare:
        _write_delta(report, Path(compare), run / "delta.csv")
    return 0


def _write_delta(report_a, report_b, out_path):
    """Per-metric difference table (this run minus the compared run)."""
    def read_rows(p):
        with open(p, newline="") as f:
            return {row[0]: [float(x) for x in row[1:]]
                    for row in list(csv.reader(f))[1:]}

    a = read_rows(report_a)
    b = read_rows(report_b)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "d_psnr", "d_ssim"])
        for key in a:
            if key in b:
                w.writerow([key] + [f"{x - y:.6f}" for x, y in zip(a[key], b[key])])


def cmd_restore(cfg: dict) -> int:
    """Subtract learned residual maps from the noisy train views."""
    run, ckpts = _load_run(_require(cfg, "out"))
    noisy_root = Path(_require(cfg, "dataset"))
    clean_root = _clean_dataset_path(cfg)
    rig = io.load_rig(noisy_root / "rig.json")
    train_idx = [i for i in range(len(rig))
                 if i not in set(cfg["eval_cameras"])]

    psnr_noisy = {c: [] for c in train_idx}
    psnr_restored = {c: [] for c in train_idx}
    out_images = run / "restored"
    for t, path in enumerate(ckpts):
        _, maps = io.read_checkpoint(path)
        if not maps:
            raise DataError(f"{path}: checkpoint lacks residual maps")
        if len(maps) != len(train_idx):
            raise DataError(f"{path}: {len(maps)} maps for "
                            f"{len(train_idx)} train cameras")
        for v, c in enumerate(train_idx):
            noisy = io.read_ppm(noisy_root / f"cam{c}" / f"frame{t}.ppm")
            clean = io.read_ppm(clean_root / f"cam{c}" / f"frame{t}.ppm")
            restored = np.clip(noisy - maps[v], 0.0, 1.0)
            cam_dir = out_images / f"cam{c}"
            cam_dir.mkdir(parents=True, exist_ok=True)
            io.write_ppm(cam_dir / f"frame{t}.ppm", restored)
            psnr_noisy[c].append(metrics.psnr(noisy, clean))
            psnr_restored[c].append(metrics.psnr(restored, clean))

    with open(run / "restore_report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["camera", "psnr_noisy", "psnr_restored"])
        for c in train_idx:
            w.writerow([c, f"{np.mean(psnr_noisy[c]):.6f}",
                        f"{np.mean(psnr_restored[c]):.6f}"])
        mean_noisy = float(np.mean([np.mean(psnr_noisy[c]) for c in train_idx]))
        mean_restored = float(np.mean([np.mean(psnr_restored[c])
                                       for c in train_idx]))
        w.writerow(["mean", f"{mean_noisy:.6f}", f"{mean_restored:.6f}"])
    print(f"restore: psnr noisy {mean_noisy:.3f} -> restored {mean_restored:.3f}")
    return 0


def cmd_slice(cfg: dict, frames_dir, column) -> int:
    src = Path(frames_dir)
    frames = []
    t = 0
    while (src / f"frame{t}.ppm").exists():
        frames.append(io.read_ppm(src / f"frame{t}.ppm"))
        t += 1
    if not frames:
        raise DataError(f"{src}: no frame*.ppm files")
    if column is None:
        column = frames[0].shape[1] // 2
    out = Path(_require(cfg, "out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_ppm(out, metrics.st_slice(frames, column))
    print(f"wrote {out}")
    return 0


DEFAULT_ARMS = {
    "baseline": {"use_residual_maps": False},
    "residual": {"use_residual_maps": True},
}


def cmd_sweep(cfg: dict, parallel: int) -> int:
    """Train every arm (config overrides) into disjoint output directories."""
    arms = cfg.get("sweep_arms") or DEFAULT_ARMS
    out = Path(_require(cfg, "out"))
    jobs = []
    for name, overrides in arms.items():
        arm_cfg = dict(cfg)
        unknown = sorted(set(overrides) - set(CONFIG_DEFAULTS))
        if unknown:
            raise DataError(f"arm {name!r}: unknown keys {', '.join(unknown)}")
        arm_cfg.update(overrides)
        arm_cfg["out"] = str(out / name)
        jobs.append(arm_cfg)

    workers = max(1, min(parallel, thread_cap(), len(jobs)))
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(workers) as pool:
            pool.map(cmd_train, jobs)
    else:
        for job in jobs:
            cmd_train(job)
    print(f"sweep complete: {', '.join(arms)} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatstream",
                     description="Online Gaussian splatting with residual maps")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, description in [
            ("synth", "generate the synthetic clean+noisy dataset"),
            ("train", "run online reconstruction over a dataset"),
            ("eval", "score held-out renders against clean ground truth"),
            ("restore", "subtract learned residual maps from observations"),
            ("slice", "spatiotemporal slice of a frame directory"),
            ("sweep", "train several config arms")]:
        p = sub.add_parser(name, help=description)
        p.add_argument("--config", default=None, help="JSON RunConfig file")
        p.add_argument("--no-residual", action="store_true",
                       help="shorthand for --no-use-residual-maps")
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--compare", default=None,
                           help="report.csv of another run; writes delta.csv")
        if name == "slice":
            p.add_argument("--frames-dir", required=True)
            p.add_argument("--column", type=int, default=None)
        if name == "sweep":
            p.add_argument("--parallel", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, compare=args.compare)
        if args.command == "restore":
            return cmd_restore(cfg)
        if args.command == "slice":
            return cmd_slice(cfg, args.frames_dir, args.column)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.parallel)
        raise _UsageError(f"unknown command {args.command}")
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
