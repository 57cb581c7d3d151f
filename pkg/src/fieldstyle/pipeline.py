"""Losses and the staged training procedure (reconstruction -> decoder -> style)."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .articulation import inside_canonical_body
from .geometry import pixel_directions
from .harness.metrics import psnr
from .radiance import HumanField, RenderConfig, SceneField, render_patch, render_rays, scatter_rows
from .style import (PYRAMID_CHANNELS, AdaAttN, Decoder, FrozenFeaturePyramid, StyleContext, feature_target,
                    mean_norm, projection_matrix, style_losses)

log = logging.getLogger(__name__)

STAGES = ("recon", "decoder", "style")


class StageOrderError(RuntimeError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


# -- losses -------------------------------------------------------------------------
@dataclass
class LossWeights:
    mask: float = 0.01      # lambda_a; decays linearly to zero over stage 1
    smpl: float = 1.0
    hard: float = 0.1
    edge: float = 0.1

    def __post_init__(self):
        if min(self.mask, self.smpl, self.hard, self.edge) < 0:
            raise ValueError("loss weights must be nonnegative")

    def lambda_a(self, step, total):
        return self.mask * max(0.0, 1.0 - step / total)


def _lift(x, like):
    return x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x), dtype=like.dtype)


def loss_scene(pred, gt):
    """Sum over rays of the per-ray colour distance."""
    gt = _lift(gt, pred)
    if pred.shape != gt.shape:
        raise ValueError(f"loss_scene: {pred.shape[0]} predicted rays vs {gt.shape[0]} targets")
    return T.sum(T.norm(pred - gt, axis=-1))


def hard_penalty(x):
    """-log(exp(-|x|) + exp(-|1 - x|)), elementwise."""
    return -T.log(T.exp(-T.abs(x)) + T.exp(-T.abs(1 - x)))


@dataclass
class HumanBatch:
    pred: object            # (R, 3) rendered colours
    gt: np.ndarray          # (R, 3)
    mask: np.ndarray        # (R,) human mask per ray
    alpha_h: object         # (R,) human-only accumulated alpha
    weights: object         # (..., S) human-only sample weights
    probe_sigma: object     # (P,) human density at canonical probes
    probe_inside: np.ndarray  # (P,) bool
    line_alpha: object      # (L,) accumulated alpha along canonical lines


def loss_human(b, weights=None, step=0, total=1):
    """L_r + lambda_a L_a + lambda_smpl L_smpl + lambda_hard L_hard + lambda_edge L_edge.

    Masked terms are averaged over the masked rays, the others over their
    probes, samples or lines.  Returns (total, {term: float}).
    """
    weights = weights or LossWeights()
    dt = b.pred.dtype
    m = T.Tensor(np.asarray(b.mask, float), dtype=dt)
    n_mask = max(float(np.sum(b.mask)), 1.0)
    l_r = T.sum(m * T.norm(b.pred - _lift(b.gt, b.pred), axis=-1)) * (1.0 / n_mask)
    l_a = T.sum(m * T.abs(1 - b.alpha_h)) * (1.0 / n_mask)
    inside = T.Tensor(np.asarray(b.probe_inside, float), dtype=dt)
    l_smpl = T.mean(inside * T.abs(1 - b.probe_sigma) + (1 - inside) * T.abs(b.probe_sigma))
    l_hard = T.mean(hard_penalty(b.weights))
    l_edge = T.mean(hard_penalty(b.line_alpha))
    lam_a = weights.lambda_a(step, total)
    out = (l_r + l_a * lam_a + l_smpl * weights.smpl + l_hard * weights.hard + l_edge * weights.edge)
    terms = {"L_r": float(l_r.data), "L_a": float(l_a.data), "L_smpl": float(l_smpl.data),
             "L_hard": float(l_hard.data), "L_edge": float(l_edge.data), "lambda_a": lam_a}
    return out, terms


def loss_feature(F_c, image, gt, pyramid, F_target):
    """|F_c - F~_c| + sum_l |F^l(I) - F^l(I~)| + |I - I~|, each a mean per-position distance."""
    if F_c.shape[:2] != image.shape[:2] or image.shape != np.shape(gt) or F_c.shape != np.shape(F_target):
        raise ValueError(f"loss_feature: misaligned inputs {F_c.shape}, {image.shape}, "
                         f"{np.shape(gt)}, {np.shape(F_target)}")
    total = mean_norm(F_c, F_target) + mean_norm(image, gt)
    with T.no_grad():
        gt_feats = [f.data for f in pyramid(np.asarray(gt))]
    for f, g in zip(pyramid(image), gt_feats):
        total = total + mean_norm(f, g)
    return total


# -- schedules ----------------------------------------------------------------------
def exp_decay_lr(lr0, step, total):
    """Exponential decay with a half-life of half the stage length."""
    return lr0 * 0.5 ** (2.0 * step / max(total, 1))


# -- configuration ------------------------------------------------------------------
@dataclass
class Config:
    seed: int = 0
    voxel_size: float = 0.01
    feature_dim: int = 16
    channels: int = 64
    style_dim: int = 16
    n_samples: int = 128
    density_length: float = 0.01
    human_pad: float = 0.1
    chunk: int = 1024
    # reconstruction
    recon_steps: int = 20000
    recon_lr: float = 1e-4
    rays_per_step: int = 1024
    frames_per_step: int = 4
    human_ray_fraction: float = 0.25
    probes: int = 1024
    edge_lines: int = 16
    edge_samples: int = 64
    loss_weights: dict = field(default_factory=lambda: asdict(LossWeights()))
    # decoder
    decoder_steps: int = 300
    decoder_lr: float = 1e-4
    patches: int = 4
    patch_size: int = 24
    # style
    style_steps: int = 300
    style_lr: float = 2e-5
    style_size: int = 128
    style_seeds: list = field(default_factory=lambda: [11, 12, 13, 14])
    pyramid_seed: int = 1234
    projection_seed: int = 4321
    log_every: int = 25
    eval_every: int = 0

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def weights(self):
        return LossWeights(**self.loss_weights)


def render_config(cfg, dataset):
    return RenderConfig(cfg.n_samples, dataset.meta["near"], dataset.meta["far"], cfg.density_length,
                        cfg.human_pad, cfg.chunk)


# -- model bundle -------------------------------------------------------------------
class Model(T.Module):
    """Scene and human fields plus the 2D modules used after reconstruction."""

    def __init__(self, cfg, scene_bounds, skeleton):
        if cfg.style_dim != PYRAMID_CHANNELS[1]:
            # attention keys and values are the level-1 style features, so phi must match their width
            raise ValueError(f"style_dim {cfg.style_dim} must equal the level-1 pyramid width {PYRAMID_CHANNELS[1]}")
        rng = np.random.default_rng(cfg.seed)
        self.scene = SceneField(scene_bounds, cfg.voxel_size, rng, cfg.feature_dim, cfg.channels)
        self.human = HumanField(skeleton, cfg.voxel_size, rng, scene_bounds, cfg.feature_dim, cfg.channels,
                                pad=cfg.human_pad)
        self.decoder = Decoder(rng, cfg.channels)
        self.stylizer = AdaAttN(rng, cfg.channels, cfg.style_dim, cfg.channels)
        self._pyramid = FrozenFeaturePyramid(cfg.pyramid_seed)

    @property
    def pyramid(self):
        return self._pyramid

    def invalidate(self):
        self.scene.invalidate()
        self.human.invalidate()

    def load_state_dict(self, state, strict=True):
        super().load_state_dict(state, strict)
        self.invalidate()

    def density_parameters(self):
        """Density branch, plane encoders and warp correction: frozen after stage 1."""
        out = {f"scene.{k}": v for k, v in self.scene.density_parameters().items()}
        out.update({f"human.{k}": v for k, v in self.human.density_parameters().items()})
        return out

    def field_parameters(self):
        return {k: v for k, v in self.named_parameters().items() if k.startswith(("scene.", "human."))}

    def trainable(self, stage):
        params = self.named_parameters()
        if stage == "recon":
            return {k: v for k, v in params.items()
                    if k.startswith(("scene.", "human.")) and ".head.feature." not in k}
        if stage == "decoder":
            dens = self.density_parameters()
            return {k: v for k, v in params.items()
                    if (k.startswith(("scene.", "human.")) and k not in dens and ".head.rgb." not in k)
                    or k.startswith("decoder.")}
        if stage == "style":
            return {k: v for k, v in params.items() if k.startswith(("stylizer.", "decoder."))}
        raise ValueError(f"unknown stage {stage!r}")


def checksum(params):
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k].data).tobytes())
    return h.hexdigest()


@contextmanager
def frozen(params):
    """Stop gradient tracking for ``params`` (name -> Tensor) inside the block."""
    saved = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = saved[k]


# -- recon batches ------------------------------------------------------------------
def _frame_rays(dataset, frame, pix):
    cam = dataset.cameras[frame]
    w = cam.width
    uv = np.stack([pix % w + 0.5, pix // w + 0.5], -1).astype(float)
    d = pixel_directions(cam, uv)
    return np.broadcast_to(cam.center, d.shape).copy(), d


def sample_recon_batch(dataset, cfg, rng, frames=None):
    """Pixels per frame: a human-mask share plus uniformly drawn pixels."""
    train = dataset.train_frames
    if frames is None:
        frames = rng.choice(train, size=min(cfg.frames_per_step, len(train)), replace=False)
    per = cfg.rays_per_step // len(frames)
    out = []
    for f in frames:
        mask = dataset.masks[f].ravel()
        on = np.flatnonzero(mask)
        n_h = min(int(round(per * cfg.human_ray_fraction)), len(on))
        pix = np.concatenate([rng.choice(on, n_h, replace=False) if n_h else np.zeros(0, int),
                              rng.choice(mask.size, per - n_h, replace=False)])
        keys = rng.integers(0, 2 ** 62, len(pix), dtype=np.uint64)
        out.append((int(f), pix, keys))
    return out


def canonical_probes(human, n, rng):
    lo, hi = human.triplane.bounds
    x = rng.uniform(lo, hi, (n, 3))
    return x, inside_canonical_body(x, human.skeleton)


def canonical_lines(human, n_lines, n_samples, rng):
    """Random chords of the canonical box: points (L*S, 3) and their intervals (L, S)."""
    lo, hi = human.triplane.bounds
    a = rng.uniform(lo, hi, (n_lines, 3))
    b = rng.uniform(lo, hi, (n_lines, 3))
    s = (np.arange(n_samples) + rng.uniform(0, 1, (n_lines, n_samples))) / n_samples
    length = np.linalg.norm(b - a, axis=1, keepdims=True)
    delta = np.concatenate([np.diff(s, axis=1), 1 - s[:, -1:]], axis=1) * length
    pts = a[:, None] + s[..., None] * (b - a)[:, None]
    return pts.reshape(-1, 3), delta


def recon_objective(model, dataset, cfg, batch, probes, lines, step, total, rcfg, seed):
    """Stage-1 objective on one batch: (loss, terms, predictions)."""
    preds, gts, masks, alphas, hard_w = [], [], [], [], []
    for f, pix, keys in batch:
        o, d = _frame_rays(dataset, f, pix)
        # the scene is fit with the human masked out: mask rays carry no scene colour gradient
        m = dataset.masks[f].ravel()[pix]
        rr = render_rays(o, d, keys, model.scene, model.human, dataset.poses[f], rcfg, seed, "rgb",
                         scene_grad=~m)
        preds.append(rr.value)
        gts.append(dataset.frames[f].reshape(-1, 3)[pix])
        masks.append(m)
        if len(rr.hit):
            alphas.append(T.reshape(scatter_rows(T.reshape(rr.human_only_alpha, (-1, 1)), rr.hit, len(pix)), (-1,)))
            hard_w.append(T.reshape(rr.human_weights, (-1,)))
        else:
            alphas.append(T.Tensor(np.zeros(len(pix)), dtype=rr.value.dtype))
    pred = T.concat(preds, 0)
    gt = np.concatenate(gts)
    mask = np.concatenate(masks)
    R = len(gt)
    bg = np.flatnonzero(~mask)
    l_s = loss_scene(T.gather(pred, bg, 0), gt[bg]) * (1.0 / R) if len(bg) else T.Tensor(0.0)
    px, inside = probes
    lpts, ldelta = lines
    line_sigma = T.reshape(model.human.density_at(lpts), ldelta.shape)
    line_alpha = 1 - T.exp(-T.sum(line_sigma * T.Tensor(ldelta / cfg.density_length, dtype=pred.dtype), axis=1))
    hb = HumanBatch(pred, gt, mask, T.concat(alphas, 0),
                    T.concat(hard_w, 0) if hard_w else T.Tensor(np.zeros(1)),
                    model.human.density_at(px), inside, line_alpha)
    l_h, terms = loss_human(hb, cfg.weights, step, total)
    terms["L_s"] = float(l_s.data)
    return l_s + l_h, terms, pred


def render_frame(model, dataset, frame=None, camera=None, pose=None, mode="rgb", cfg=None, seed=0, view_id=None):
    """Full-image render (no gradients) for a dataset frame or an explicit camera/pose."""
    camera = camera if camera is not None else dataset.cameras[frame]
    pose = pose if pose is not None else dataset.poses[frame]
    rcfg = render_config(cfg, dataset)
    vid = view_id if view_id is not None else (frame or 0)
    return render_patch(camera, None, model.scene, model.human, pose, rcfg, seed, mode, vid)


# -- stage driver -------------------------------------------------------------------
@dataclass
class TrainState:
    stage: str
    step: int = 0
    seed: int = 0
    optimizer: object = None
    frozen_checksum: str = ""
    metrics: list = field(default_factory=list)


def _ckpt(run_dir, stage):
    return Path(run_dir) / f"{stage}.ckpt"


def load_model(run_dir, dataset, cfg=None, stage=None):
    run_dir = Path(run_dir)
    cfg = cfg or Config.from_json(run_dir / "config.json")
    model = Model(cfg, dataset.scene_bounds, dataset.skeleton)
    if stage is None:
        done = [s for s in STAGES if _ckpt(run_dir, s).exists()]
        if not done:
            raise FileNotFoundError(f"no checkpoints in {run_dir}")
        stage = done[-1]
    model.load_state_dict(T.load_checkpoint(_ckpt(run_dir, stage)))
    return model, cfg


def _write_metrics(path, rows):
    if not rows:
        return
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "step", k))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def procedural_style(seed, size=128):
    """Deterministic colourful pattern used as a style image."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        for _ in range(3):
            fx, fy = rng.uniform(2, 14, 2)
            ph = rng.uniform(0, 2 * np.pi)
            img[..., c] += rng.uniform(0.2, 0.5) * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    img = 0.5 + img / 3
    stripes = (np.sin(2 * np.pi * rng.uniform(4, 10) * (xx + rng.uniform(-1, 1) * yy)) > 0.3)
    img = np.where(stripes[..., None], img * rng.uniform(0.3, 0.7), img)
    return np.clip(img, 0, 1)


class Trainer:
    """Runs one stage against a run directory holding config.json and per-stage checkpoints."""

    def __init__(self, run_dir, dataset, cfg):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.dataset = dataset
        self.cfg = cfg
        cfg.to_json(self.run_dir / "config.json")
        self.rcfg = render_config(cfg, dataset)

    # stage order: each stage starts from the previous checkpoint
    def _start(self, stage):
        idx = STAGES.index(stage)
        model = Model(self.cfg, self.dataset.scene_bounds, self.dataset.skeleton)
        if idx > 0:
            prev = _ckpt(self.run_dir, STAGES[idx - 1])
            if not prev.exists():
                raise StageOrderError(f"stage {stage!r} needs {prev.name}; run {STAGES[idx - 1]!r} first")
            model.load_state_dict(T.load_checkpoint(prev))
        return model

    def _save(self, model, stage):
        T.save_checkpoint(_ckpt(self.run_dir, stage), model.state_dict())

    def _guard(self, loss, model, stage, step):
        if not np.isfinite(loss.data).all():
            self._save(model, stage + "_lastgood")
            raise NonFiniteLoss(f"{stage}: non-finite loss at step {step}; last good parameters kept in "
                                f"{stage}_lastgood.ckpt")

    def train(self, stage, steps=None, callback=None):
        return getattr(self, f"_train_{stage}")(steps, callback)

    # stage 1 ------------------------------------------------------------------------
    def _train_recon(self, steps=None, callback=None):
        cfg = self.cfg
        total = steps or cfg.recon_steps
        model = self._start("recon")
        params = model.trainable("recon")
        opt = T.Adam(params, cfg.recon_lr)
        state = TrainState("recon", seed=cfg.seed, optimizer=opt)
        rng = np.random.default_rng(cfg.seed + 101)
        t0 = time.time()
        for step in range(total):
            batch = sample_recon_batch(self.dataset, cfg, rng)
            probes = canonical_probes(model.human, cfg.probes, rng)
            lines = canonical_lines(model.human, cfg.edge_lines, cfg.edge_samples, rng)
            loss, terms, _ = recon_objective(model, self.dataset, cfg, batch, probes, lines, step, total,
                                             self.rcfg, cfg.seed + step)
            self._guard(loss, model, "recon", step)
            opt.zero_grad()
            loss.backward()
            lr = exp_decay_lr(cfg.recon_lr, step, total)
            opt.step(lr)
            model.invalidate()
            state.step = step + 1
            if step % cfg.log_every == 0 or step == total - 1:
                row = {"step": step, "loss": float(loss.data), "lr": lr, "elapsed": time.time() - t0, **terms}
                if cfg.eval_every and (step % cfg.eval_every == 0 or step == total - 1):
                    row["heldout_psnr"] = self.heldout_psnr(model)
                state.metrics.append(row)
                log.info("recon %d %s", step, row)
            if callback:
                callback(step, model, float(loss.data))
        self._save(model, "recon")
        _write_metrics(self.run_dir / "recon_metrics.csv", state.metrics)
        return state, model

    def heldout_psnr(self, model, frames=None):
        frames = self.dataset.held_out if frames is None else frames
        vals = []
        for f in frames:
            img = render_frame(model, self.dataset, f, mode="rgb", cfg=self.cfg).features
            vals.append(psnr(img, self.dataset.frames[f]))
        return float(np.mean(vals)) if vals else float("nan")

    # stage 2 ------------------------------------------------------------------------
    def render_feature_patch(self, model, frame, rect, seed):
        """Differentiable (h, w, C) feature render of ``rect`` in frame ``frame``."""
        ds = self.dataset
        cam = ds.cameras[frame]
        r0, c0, h, w = rect
        rows, cols = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
        pix = (rows * cam.width + cols).ravel()
        o, d = _frame_rays(ds, frame, pix)
        keys = np.uint64(frame) * np.uint64(cam.width * cam.height) + pix.astype(np.uint64)
        rr = render_rays(o, d, keys, model.scene, model.human, ds.poses[frame], self.rcfg, seed, "feature")
        return T.reshape(rr.value, (h, w, -1))

    def _train_decoder(self, steps=None, callback=None):
        cfg = self.cfg
        ds = self.dataset
        total = steps or cfg.decoder_steps
        model = self._start("decoder")
        params = model.trainable("decoder")
        dens = model.density_parameters()
        before = checksum(dens)
        opt = T.Adam(params, cfg.decoder_lr)
        state = TrainState("decoder", seed=cfg.seed, optimizer=opt, frozen_checksum=before)
        proj = projection_matrix(cfg.projection_seed, c_out=cfg.channels)
        rng = np.random.default_rng(cfg.seed + 202)
        H, W = ds.resolution
        ps = cfg.patch_size
        t0 = time.time()
        with frozen(dens):
            for step in range(total):
                loss = None
                for _ in range(cfg.patches):
                    f = int(rng.choice(ds.train_frames))
                    r0 = int(rng.integers(0, H - ps + 1) // 2 * 2)
                    c0 = int(rng.integers(0, W - ps + 1) // 2 * 2)
                    gt = ds.frames[f][r0:r0 + ps, c0:c0 + ps]
                    F_c = self.render_feature_patch(model, f, (r0, c0, ps, ps), cfg.seed)
                    img = model.decoder(F_c)
                    lf = loss_feature(F_c, img, gt, model.pyramid, feature_target(gt, model.pyramid, proj))
                    loss = lf if loss is None else loss + lf
                loss = loss * (1.0 / cfg.patches)
                self._guard(loss, model, "decoder", step)
                opt.zero_grad()
                loss.backward()
                opt.step()
                state.step = step + 1
                if step % cfg.log_every == 0 or step == total - 1:
                    row = {"step": step, "loss": float(loss.data), "elapsed": time.time() - t0}
                    state.metrics.append(row)
                    log.info("decoder %d %s", step, row)
                if callback:
                    callback(step, model, float(loss.data))
        if checksum(dens) != before:
            raise RuntimeError("decoder stage modified frozen density parameters")
        self._save(model, "decoder")
        _write_metrics(self.run_dir / "decoder_metrics.csv", state.metrics)
        return state, model

    # stage 3 ------------------------------------------------------------------------
    def content_features(self, model, frames=None):
        """Full-frame feature maps for the given frames (fields are frozen from here on)."""
        frames = list(range(self.dataset.n_frames)) if frames is None else frames
        return {f: render_frame(model, self.dataset, f, mode="feature", cfg=self.cfg).features for f in frames}

    def _train_style(self, steps=None, callback=None, contents=None):
        cfg = self.cfg
        total = steps or cfg.style_steps
        model = self._start("style")
        params = model.trainable("style")
        fields_ = model.field_parameters()
        before = checksum(fields_)
        opt = T.Adam(params, cfg.style_lr)
        state = TrainState("style", seed=cfg.seed, optimizer=opt, frozen_checksum=before)
        contents = contents or self.content_features(model, self.dataset.train_frames)
        with T.no_grad():
            decoded = {f: model.decoder(F).data for f, F in contents.items()}
        ctxs = [StyleContext.build(procedural_style(s, cfg.style_size), model.pyramid) for s in cfg.style_seeds]
        rng = np.random.default_rng(cfg.seed + 303)
        keys = sorted(contents)
        t0 = time.time()
        for step in range(total):
            f = keys[int(rng.integers(len(keys)))]
            ctx = ctxs[int(rng.integers(len(ctxs)))]
            I_cs = stylize_features(model, contents[f], ctx)
            g, loc = style_losses(I_cs, ctx, model.pyramid, decoded[f])
            loss = g + loc
            self._guard(loss, model, "style", step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            state.step = step + 1
            if step % cfg.log_every == 0 or step == total - 1:
                row = {"step": step, "loss": float(loss.data), "global": float(g.data), "local": float(loc.data),
                       "elapsed": time.time() - t0}
                state.metrics.append(row)
                log.info("style %d %s", step, row)
            if callback:
                callback(step, model, float(loss.data))
        if checksum(fields_) != before:
            raise RuntimeError("style stage modified field parameters")
        self._save(model, "style")
        _write_metrics(self.run_dir / "style_metrics.csv", state.metrics)
        return state, model


def stylize_features(model, F_c, ctx):
    """Decode psi(AdaAttN(phi(F_c), F_s)) for a rendered (h, w, C) feature map."""
    F_c = F_c if isinstance(F_c, T.Tensor) else T.Tensor(F_c)
    h, w, c = F_c.shape
    out = model.stylizer(T.reshape(F_c, (h * w, c)), ctx.keys[0], ctx.features[0])
    return model.decoder(T.reshape(out, (h, w, -1)))


def baseline_stylize(model, image, ctx, projection):
    """Per-frame 2D stylization: the same stylizer and decoder fed with image-pyramid
    content features of one decoded RGB frame instead of field-rendered ones."""
    with T.no_grad():
        F_c = feature_target(np.asarray(image), model.pyramid, projection)
        return stylize_features(model, F_c, ctx)


def train_stage(stage, run_dir, dataset, cfg, steps=None, callback=None):
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return Trainer(run_dir, dataset, cfg).train(stage, steps, callback)
