"""Command-line entry point: ``fieldstyle <subcommand> ...``.

Every subcommand writes delimited tables (CSV) and matplotlib figures under
its output directory and returns 0 on success.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .. import imageio
from .. import pipeline as P
from ..articulation import load_poses
from ..geometry import load_cameras, save_cameras
from . import plots
from .bench import bench_query
from .metrics import eval_consistency, psnr
from .synth import SceneDataset, analytic_mask, circular_path, mask_centroid, synth_scene

log = logging.getLogger("fieldstyle")


class UsageError(Exception):
    pass


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args):
    p = Path(args.data)
    if not (p / "meta.json").exists():
        raise UsageError(f"dataset directory {p} not found (expected meta.json); run `synth` first")
    return SceneDataset.load(p)


def _config(args):
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise UsageError(f"config file {args.config} not found")
        return P.Config.from_json(args.config)
    run_cfg = Path(args.run) / "config.json" if getattr(args, "run", None) else None
    if run_cfg is not None and run_cfg.exists():
        return P.Config.from_json(run_cfg)
    return P.Config()


def _model(args, ds, stage=None):
    if not Path(args.run).is_dir():
        raise UsageError(f"run directory {args.run} not found; train first")
    model, cfg = P.load_model(args.run, ds, _config(args), stage)
    return model, cfg


def _save_render(out, i, rp, prefix="frame"):
    imageio.write_png(out / f"{prefix}_{i:04d}.png", np.clip(rp.features, 0, 1))
    imageio.write_png(out / f"alpha_{i:04d}.png", np.clip(rp.alpha, 0, 1))
    np.save(out / f"alpha_{i:04d}.npy", rp.alpha)
    np.save(out / f"human_alpha_{i:04d}.npy", rp.human_alpha)


# -- subcommands --------------------------------------------------------------------
def cmd_synth(args):
    held = [int(v) for v in args.held_out.split(",")] if args.held_out else None
    ds = synth_scene(args.seed, args.frames, args.res, held)
    out = _out(args)
    ds.save(out)
    rows = [(t, int(ds.masks[t].sum()), float(ds.masks[t].mean()),
             float(ds.valid[t].mean()) if t < len(ds.valid) else "") for t in range(ds.n_frames)]
    _write_csv(out / "synth.csv", ["frame", "mask_pixels", "mask_fraction", "flow_valid_fraction"],
               [[_fmt(v) for v in r] for r in rows])
    plots.image_strip([ds.frames[t] for t in range(0, ds.n_frames, max(1, ds.n_frames // 8))],
                      out / "synth.png")
    return 0


def _train(stage):
    def run(args):
        ds = _dataset(args)
        cfg = _config(args)
        trainer = P.Trainer(args.run, ds, cfg)
        state, model = trainer.train(stage, args.steps)
        run_dir = Path(args.run)
        if state.metrics:
            plots.loss_curves(state.metrics, run_dir / f"{stage}_loss.png",
                              keys=None if stage == "recon" else ["loss"])
        return 0
    return run


def cmd_render(args):
    ds = _dataset(args)
    model, cfg = _model(args, ds, args.stage)
    out = _out(args)
    before = P.checksum(model.scene.named_parameters())
    if args.cameras:
        cams, path = load_cameras(args.cameras), "file"
    elif args.path == "circular":
        h, w = ds.resolution
        cams, path = circular_path(args.views, w, h), "circular"
    else:
        cams, path = ds.cameras, "train"
    save_cameras(out / "cameras.json", cams)
    rows, imgs = [], []
    for i, cam in enumerate(cams):
        f = i if path == "train" else min(args.pose_frame, ds.n_frames - 1)
        pose = ds.poses[f]
        rp = P.render_frame(model, ds, camera=cam, pose=pose, mode="rgb", cfg=cfg, view_id=i)
        _save_render(out, i, rp)
        imgs.append(rp.features)
        gt_psnr = psnr(rp.features, ds.frames[i]) if path == "train" else float("nan")
        held = path == "train" and i in ds.held_out
        rows.append([i, _fmt(gt_psnr), int(held), _fmt(float(rp.alpha.mean())), _fmt(float(rp.human_alpha.mean()))])
    after = P.checksum(model.scene.named_parameters())
    _write_csv(out / "render.csv", ["view", "psnr", "held_out", "alpha_mean", "human_alpha_mean"], rows)
    _write_csv(out / "checksum.csv", ["when", "scene_sha256"], [["before", before], ["after", after]])
    plots.image_strip(imgs[:8], out / "render.png", titles=[r[0] for r in rows[:8]])
    if path == "train":
        plots.psnr_bars([r[0] for r in rows], [float(r[1]) for r in rows], out / "psnr.png", threshold=24.0)
    if before != after:
        log.error("scene parameters changed during rendering")
        return 1
    return 0


def cmd_animate(args):
    ds = _dataset(args)
    model, cfg = _model(args, ds, args.stage)
    out = _out(args)
    if not Path(args.poses).exists():
        raise UsageError(f"pose file {args.poses} not found")
    poses = load_poses(args.poses)
    cam = ds.cameras[args.camera]
    before = P.checksum(model.scene.named_parameters())
    rows, imgs = [], []
    for i, pose in enumerate(poses):
        rp = P.render_frame(model, ds, camera=cam, pose=pose, mode="rgb", cfg=cfg, view_id=i)
        _save_render(out, i, rp)
        imgs.append(rp.features)
        want = mask_centroid(analytic_mask(cam, pose))
        got = mask_centroid(rp.human_alpha)
        err = float(np.linalg.norm(got - want)) if got is not None and want is not None else float("nan")
        rows.append([i] + [_fmt(float(v)) for v in (*(got if got is not None else (np.nan,) * 2),
                                                     *(want if want is not None else (np.nan,) * 2), err)])
    after = P.checksum(model.scene.named_parameters())
    _write_csv(out / "animate.csv", ["pose", "alpha_cx", "alpha_cy", "skeleton_cx", "skeleton_cy", "centroid_err_px"],
               rows)
    _write_csv(out / "checksum.csv", ["when", "scene_sha256"], [["before", before], ["after", after]])
    plots.image_strip(imgs[:8], out / "animate.png")
    if before != after:
        log.error("scene parameters changed during animation")
        return 1
    return 0


def cmd_stylize(args):
    ds = _dataset(args)
    model, cfg = _model(args, ds, "style")
    out = _out(args)
    if args.style:
        if not Path(args.style).exists():
            raise UsageError(f"style image {args.style} not found")
        style = imageio.read_png(args.style, size=cfg.style_size)
    else:
        style = P.procedural_style(args.style_seed, cfg.style_size)
    ctx = P.StyleContext.build(style, model.pyramid)
    frames = range(ds.n_frames) if args.frames is None else [int(v) for v in args.frames.split(",")]
    rows, imgs = [], []
    for f in frames:
        rp = P.render_frame(model, ds, f, mode="feature", cfg=cfg)
        with P.T.no_grad():
            img = P.stylize_features(model, rp.features, ctx).data
        imageio.write_png(out / f"stylized_{f:04d}.png", np.clip(img, 0, 1))
        imageio.write_png(out / f"alpha_{f:04d}.png", np.clip(rp.alpha, 0, 1))
        np.save(out / f"alpha_{f:04d}.npy", rp.alpha)
        imgs.append(img)
        rows.append([f, _fmt(float(img.mean())), _fmt(float(rp.alpha.mean()))])
    _write_csv(out / "stylize.csv", ["frame", "mean_intensity", "alpha_mean"], rows)
    plots.image_strip([style] + imgs[:7], out / "stylize.png", titles=["style"] + [r[0] for r in rows[:7]])
    return 0


def cmd_eval_consistency(args):
    ds = _dataset(args)
    out = _out(args)
    src = Path(args.frames)
    files = sorted(src.glob(f"{args.prefix}_*.png"))
    if not files:
        raise UsageError(f"no {args.prefix}_*.png frames in {src}")
    frames = np.stack([imageio.read_png(p) for p in files])
    rep = eval_consistency(frames, ds)
    rep.write_csv(out / "consistency.csv")
    plots.consistency({src.name: rep}, out / "consistency.png")
    print(f"adjacent {rep.adjacent:.5f}  far {rep.far:.5f}  overall {rep.overall:.5f}")
    return 0


def cmd_bench(args):
    out = _out(args)
    rows = []
    for n in args.points:
        rep = bench_query(n, reps=args.reps, seed=args.seed)
        for name, npar, sec, qps in rep.rows:
            rows.append([n, name, npar, _fmt(sec), _fmt(qps)])
        print(rep.speedup_text())
        if rep.rows:
            last = rep
    _write_csv(out / "bench.csv", ["n_points", "field", "n_params", "best_seconds", "queries_per_second"], rows)
    if rows:
        plots.bench(last, out / "bench.png")
    return 0


# -- parser -------------------------------------------------------------------------
def build_parser():
    ap = argparse.ArgumentParser(prog="fieldstyle", description="neural-field video stylization toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic room + walker dataset")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--held-out", default=None, help="comma-separated frame indices")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    for stage in P.STAGES:
        t = sub.add_parser(f"train-{stage}", help=f"run the {stage} training stage")
        t.add_argument("--data", required=True)
        t.add_argument("--run", required=True)
        t.add_argument("--config", default=None)
        t.add_argument("--steps", type=int, default=None)
        t.set_defaults(func=_train(stage))

    r = sub.add_parser("render", help="render RGB + alpha along training or novel cameras")
    r.add_argument("--data", required=True)
    r.add_argument("--run", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config", default=None)
    r.add_argument("--stage", default=None)
    r.add_argument("--path", choices=["train", "circular"], default="train")
    r.add_argument("--cameras", default=None, help="camera JSON file (overrides --path)")
    r.add_argument("--views", type=int, default=8)
    r.add_argument("--pose-frame", type=int, default=0, help="dataset pose used for novel views")
    r.set_defaults(func=cmd_render)

    a = sub.add_parser("animate", help="render the human under poses from a pose file")
    a.add_argument("--data", required=True)
    a.add_argument("--run", required=True)
    a.add_argument("--poses", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--stage", default=None)
    a.add_argument("--camera", type=int, default=0)
    a.set_defaults(func=cmd_animate)

    z = sub.add_parser("stylize", help="stylized renders with a style image")
    z.add_argument("--data", required=True)
    z.add_argument("--run", required=True)
    z.add_argument("--out", required=True)
    z.add_argument("--config", default=None)
    z.add_argument("--style", default=None, help="style PNG (default: procedural style)")
    z.add_argument("--style-seed", type=int, default=11)
    z.add_argument("--frames", default=None, help="comma-separated frame indices")
    z.set_defaults(func=cmd_stylize)

    e = sub.add_parser("eval-consistency", help="masked warp RMSE of a directory of frames")
    e.add_argument("--data", required=True)
    e.add_argument("--frames", required=True)
    e.add_argument("--prefix", default="frame")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval_consistency)

    b = sub.add_parser("bench", help="tri-plane vs MLP query throughput")
    b.add_argument("--points", type=int, nargs="+", default=[1_000_000])
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) if e.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as e:
        ap.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
