"""Field heads, volume rendering and composite human + scene rendering."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .articulation import CorrectionNet, to_canonical
from .geometry import (DIR_FREQS, counter_uniform, encoding_dim, pixel_centers,
                       pixel_directions, positional_encode, ray_box_interval,
                       stratified_sample)
from .triplane import TriPlaneField

HIDDEN = 128
FEATURES = 64
DENSITY_BIAS = -4.0


class FieldHead(T.Module):
    """Density branch (one linear layer + softplus) and feature branch.

    The feature branch is a 128-unit relu layer over [f(x), gamma_d(d)]
    followed by an output layer: ``rgb`` (128 -> 3, sigmoid) during
    reconstruction, ``feature`` (128 -> C) afterwards.
    """

    def __init__(self, d, rng, channels=FEATURES, hidden=HIDDEN, dir_freqs=DIR_FREQS,
                 density_bias=DENSITY_BIAS):
        self.density = T.Linear(d, 1, rng, scale=np.sqrt(1.0 / d))
        self.density.bias.data[:] = density_bias
        self.hidden = T.Linear(d + encoding_dim(3, dir_freqs), hidden, rng)
        self.rgb = T.Linear(hidden, 3, rng, scale=np.sqrt(1.0 / hidden))
        self.feature = T.Linear(hidden, channels, rng, scale=np.sqrt(1.0 / hidden))
        self.channels = channels
        self._dir_freqs = dir_freqs

    def sigma(self, f):
        return T.reshape(T.softplus(self.density(f)), (f.shape[0],))

    def __call__(self, f, dir_enc, mode="feature"):
        """(sigma (M,), values (M, 3 or C)) for point features f (M, D)."""
        if not isinstance(dir_enc, T.Tensor):
            dir_enc = T.Tensor(dir_enc, dtype=f.dtype)
        h = T.relu(self.hidden(T.concat([f, dir_enc], axis=-1)))
        out = T.sigmoid(self.rgb(h)) if mode == "rgb" else self.feature(h)
        return self.sigma(f), out

    def appearance(self, f, ray_enc, ray_index, mode="feature"):
        """Feature branch with the direction term computed once per ray.

        ``ray_enc`` is (R, dim gamma_d) and ``ray_index`` maps each of the M
        points to its ray; the hidden pre-activation splits as
        f W_f + (gamma_d W_d + b)[ray].
        """
        d = f.shape[1]
        w = self.hidden.weight
        per_ray = T.matmul(T.Tensor(ray_enc, dtype=f.dtype), w[d:]) + self.hidden.bias
        h = T.relu(T.matmul(f, w[:d]) + T.gather(per_ray, ray_index, axis=0))
        return T.sigmoid(self.rgb(h)) if mode == "rgb" else self.feature(h)


def field_eval(head, f, d, mode="feature"):
    enc = positional_encode(np.asarray(d, float).reshape(-1, 3), head._dir_freqs)
    f = f if isinstance(f, T.Tensor) else T.Tensor(np.atleast_2d(f))
    return head(f, enc, mode)


class SceneField(T.Module):
    def __init__(self, bounds, voxel_size, rng, feature_dim=16, channels=FEATURES, guided=True):
        self.triplane = TriPlaneField(bounds, voxel_size, feature_dim, rng, guided=guided)
        self.head = FieldHead(feature_dim, rng, channels)

    def density_parameters(self):
        return {**{f"triplane.{k}": v for k, v in self.triplane.named_parameters().items()},
                **{f"head.density.{k}": v for k, v in self.head.density.named_parameters().items()}}

    def invalidate(self):
        self.triplane.invalidate()

    def density_at(self, x):
        """sigma at points ``x`` (M, 3); zero outside the field box."""
        x_arr = x.data if isinstance(x, T.Tensor) else np.asarray(x)
        keep = np.flatnonzero(self.triplane.in_bounds(x_arr))
        n = len(x_arr)
        if len(keep) == 0:
            return T.Tensor(np.zeros(n), dtype=self.head.hidden.weight.dtype)
        xs = x_arr[keep] if not isinstance(x, T.Tensor) else T.gather(x, keep, axis=0)
        sigma = self.head.sigma(self.triplane.sample(xs))
        if len(keep) == n:
            return sigma
        return T.reshape(scatter_rows(T.reshape(sigma, (-1, 1)), keep, n), (n,))


class HumanField(SceneField):
    """Canonical-space field plus the residual warp network."""

    def __init__(self, skeleton, voxel_size, rng, obs_bounds, feature_dim=16, channels=FEATURES,
                 guided=True, pad=0.1):
        super().__init__(skeleton.bounds(pad), voxel_size, rng, feature_dim, channels, guided)
        self.skeleton = skeleton
        self.correction = CorrectionNet(rng, obs_bounds)

    def density_parameters(self):
        out = super().density_parameters()
        out.update({f"correction.{k}": v for k, v in self.correction.named_parameters().items()})
        return out


def render_weights(sigma, delta):
    """w_i = T_i (1 - exp(-sigma_i delta_i)) along the last axis."""
    sigma = sigma if isinstance(sigma, T.Tensor) else T.Tensor(sigma)
    od = sigma * T.Tensor(delta, dtype=sigma.dtype)
    trans = T.exp(-T.cumsum(od, axis=-1, exclusive=True))
    return trans * (1 - T.exp(-od))


def volume_render(sigma, delta, values, t=None):
    """Alpha compositing of per-sample values.

    ``sigma`` (R, S) Tensor, ``delta`` (R, S), ``values`` (R, S, C) Tensor.
    Transmittance T_i = exp(-sum_{j<i} sigma_j delta_j) and
    w_i = T_i (1 - exp(-sigma_i delta_i)).  Returns (features (R, C),
    alpha (R,), weights (R, S)).  When depths ``t`` are given they must be
    non-decreasing along each ray.
    """
    if t is not None and np.any(np.diff(np.asarray(t), axis=-1) < 0):
        raise ValueError("volume_render: samples must be sorted by depth")
    weights = render_weights(sigma, delta)
    feat = T.sum(T.reshape(weights, weights.shape + (1,)) * values, axis=1)
    return feat, T.sum(weights, axis=-1), weights


def scatter_rows(vals, keep, n):
    """Place rows of ``vals`` at positions ``keep`` in an n-row array, zeros elsewhere."""
    index = np.zeros(n, np.int64)
    index[keep] = np.arange(1, len(keep) + 1)
    pad = T.Tensor(np.zeros((1,) + vals.shape[1:]), dtype=vals.dtype)
    return T.gather(T.concat([pad, vals], axis=0), index, axis=0)


def _density_pass(field, x, keep, n_total):
    """Point features and densities at ``x[keep]``; sigma is zero elsewhere."""
    dt = field.head.hidden.weight.dtype
    if len(keep) == 0:
        return None, T.Tensor(np.zeros(n_total), dtype=dt)
    xs = x[keep] if isinstance(x, np.ndarray) else T.gather(x, keep, axis=0)
    f = field.triplane.sample(xs)
    sigma = field.head.sigma(f)
    if len(keep) == n_total:
        return f, sigma
    return f, T.reshape(scatter_rows(T.reshape(sigma, (-1, 1)), keep, n_total), (n_total,))


def _appearance_pass(field, f, keep, live, ray_enc, n_per_ray, n_total, mode):
    """Values at the kept points whose transmittance is still above threshold."""
    dt = field.head.hidden.weight.dtype
    width = 3 if mode == "rgb" else field.head.channels
    sel = np.flatnonzero(live[keep]) if len(keep) else np.zeros(0, np.int64)
    if len(sel) == 0:
        return T.Tensor(np.zeros((n_total, width)), dtype=dt)
    idx = keep[sel]
    fs = f if len(sel) == len(keep) else T.gather(f, sel, axis=0)
    val = field.head.appearance(fs, ray_enc, idx // n_per_ray, mode)
    if len(idx) == n_total:
        return val
    return scatter_rows(val, idx, n_total)


def _transmittance(od):
    return np.exp(-(np.cumsum(od, axis=-1) - od))


@dataclass
class RenderConfig:
    n_samples: int = 128
    near: float = 0.05
    far: float = 2.6
    density_length: float = 0.01
    human_pad: float = 0.1
    chunk: int = 1024
    min_transmittance: float = 1e-4   # early ray termination; 0 evaluates every sample


@dataclass
class RayRender:
    value: object          # (R, C) Tensor
    alpha: object          # (R,) Tensor, composite accumulated alpha
    depth: np.ndarray      # (R,)
    human_alpha: np.ndarray  # (R,) composite weight mass on human samples
    hit: np.ndarray        # indices of rays that crossed the posed body box
    human_only_alpha: object = None   # (len(hit),) Tensor
    human_weights: object = None      # (len(hit), S) Tensor


def _block_rows(x, keep_grad):
    """Same values as x; gradient flows only through rows where keep_grad is True."""
    keep_grad = np.asarray(keep_grad, bool)
    if keep_grad.all():
        return x
    g = T.Tensor(keep_grad.reshape((-1,) + (1,) * (x.ndim - 1)).astype(x.dtype), dtype=x.dtype)
    return x * g + x.detach() * (1 - g)


def render_rays(origins, dirs, keys, scene, human=None, pose=None, cfg=None, seed=0, mode="rgb",
                scene_grad=None):
    """Composite render of a batch of rays; differentiable w.r.t. field params.

    ``scene_grad`` (bool per ray, optional) blocks the scene appearance gradient
    on the rays where it is False: masked human rays cannot teach the scene the
    human's colours, but scene density in front of the human is still pushed
    out of the way.

    Densities are evaluated first; the appearance branch then runs only on
    samples whose composite transmittance is at least ``cfg.min_transmittance``
    (the others can change the pixel by less than that amount).
    """
    cfg = cfg or RenderConfig()
    n = cfg.n_samples
    R = len(origins)
    keys = np.asarray(keys, np.uint64)
    dt = scene.head.hidden.weight.dtype
    dir_enc = positional_encode(dirs, scene.head._dir_freqs).astype(dt)

    sb = stratified_sample(origins, dirs, cfg.near, cfg.far, n, counter_uniform(seed, keys * 2, n))
    pos = sb.positions.reshape(-1, 3)
    keep = np.flatnonzero(scene.triplane.in_bounds(pos))
    f_s, sig_s = _density_pass(scene, pos, keep, R * n)
    sig_s = T.reshape(sig_s, (R, n))
    delta_s = sb.delta / cfg.density_length

    hit = np.zeros(0, np.int64)
    if human is not None and pose is not None:
        lo, hi = pose.bounds(cfg.human_pad)
        t0, t1 = ray_box_interval(origins, dirs, lo, hi)
        t0 = np.maximum(t0, cfg.near)
        t1 = np.minimum(t1, cfg.far)
        hit = np.flatnonzero(t1 > t0)
    H = len(hit)

    trans_s = _transmittance(sig_s.data * delta_s)
    if H:
        hb = stratified_sample(origins[hit], dirs[hit], t0[hit], t1[hit], n,
                               counter_uniform(seed, keys[hit] * 2 + 1, n))
        xc, _ = to_canonical(hb.positions.reshape(-1, 3), pose, human.correction)
        if xc.dtype != dt:
            xc = T.Tensor(xc.data, dtype=dt)
        hkeep = np.flatnonzero(human.triplane.in_bounds(xc.data))
        f_h, sig_h = _density_pass(human, xc, hkeep, H * n)
        sig_h = T.reshape(sig_h, (H, n))
        delta_h = hb.delta / cfg.density_length
        # merge scene and human samples of the hit rays by depth, scene first on ties
        t_m = np.concatenate([sb.t[hit], hb.t], axis=1)
        perm = T.sort_by_key(t_m, axis=1)
        flat = (np.arange(H)[:, None] * 2 * n + perm).ravel()
        delta_m = np.concatenate([delta_s[hit], delta_h], axis=1).reshape(-1)[flat].reshape(H, 2 * n)
        sig_cat = T.concat([T.gather(sig_s, hit, 0), sig_h], 1)
        sig_m = T.reshape(T.gather(T.reshape(sig_cat, (-1,)), flat), (H, 2 * n))
        trans_cat = np.empty((H, 2 * n))
        np.put_along_axis(trans_cat, perm, _transmittance(sig_m.data * delta_m), axis=1)
        trans_s[hit] = trans_cat[:, :n]
        live_h = (trans_cat[:, n:] >= cfg.min_transmittance).ravel()
        val_h = T.reshape(_appearance_pass(human, f_h, hkeep, live_h, dir_enc[hit], n, H * n, mode), (H, n, -1))
    live_s = (trans_s >= cfg.min_transmittance).ravel()
    val_s = T.reshape(_appearance_pass(scene, f_s, keep, live_s, dir_enc, n, R * n, mode), (R, n, -1))
    if scene_grad is not None:
        val_s = _block_rows(val_s, scene_grad)

    if H == 0:
        feat, alpha, w = volume_render(sig_s, delta_s, val_s)
        depth = np.sum(w.data * sb.t, axis=-1)
        return RayRender(feat, alpha, depth, np.zeros(R), hit)

    ho_alpha = 1 - T.exp(-T.sum(sig_h * T.Tensor(delta_h, dtype=dt), axis=-1))
    ho_w = render_weights(sig_h, delta_h)
    c = val_s.shape[-1]
    val_m = T.reshape(T.gather(T.reshape(T.concat([T.gather(val_s, hit, 0), val_h], 1), (-1, c)), flat), (H, 2 * n, c))
    t_sorted = np.take_along_axis(t_m, perm, axis=1)
    is_human = (perm >= n)
    feat_m, alpha_m, w_m = volume_render(sig_m, delta_m, val_m, t_sorted)

    miss = np.setdiff1d(np.arange(R), hit, assume_unique=True)
    depth = np.zeros(R)
    human_alpha = np.zeros(R)
    depth[hit] = np.sum(w_m.data * t_sorted, axis=-1)
    human_alpha[hit] = np.sum(w_m.data * is_human, axis=-1)
    if len(miss):
        feat_o, alpha_o, w_o = volume_render(T.gather(sig_s, miss, 0), delta_s[miss], T.gather(val_s, miss, 0))
        depth[miss] = np.sum(w_o.data * sb.t[miss], axis=-1)
        order = np.argsort(np.concatenate([hit, miss]), kind="stable")
        feat = T.gather(T.concat([feat_m, feat_o], 0), order, 0)
        alpha = T.gather(T.concat([alpha_m, alpha_o], 0), order, 0)
    else:
        order = np.argsort(hit, kind="stable")
        feat, alpha = T.gather(feat_m, order, 0), T.gather(alpha_m, order, 0)
    return RayRender(feat, alpha, depth, human_alpha, hit, ho_alpha, ho_w)


def composite_render(camera, pixel, scene, human=None, pose=None, cfg=None, seed=0, mode="feature", key=0):
    """One pixel (continuous coordinates) of the composite render."""
    d = pixel_directions(camera, np.asarray(pixel, float))[None]
    return render_rays(camera.center[None], d, np.array([key]), scene, human, pose, cfg, seed, mode)


@dataclass
class RenderedPatch:
    features: np.ndarray   # (h, w, C)
    alpha: np.ndarray      # (h, w)
    depth: np.ndarray      # (h, w)
    human_alpha: np.ndarray  # (h, w)


def render_threads():
    return max(1, int(os.environ.get("FIELDSTYLE_THREADS", "1")))


def render_patch(camera, rect, scene, human=None, pose=None, cfg=None, seed=0, mode="feature",
                 view_id=0, threads=None):
    """Render ``rect`` (row0, col0, h, w) without gradients, chunked over pixels.

    Per-pixel sample jitter is keyed by (view_id, pixel id), so tiles, chunk
    sizes and thread counts do not change the result.
    """
    cfg = cfg or RenderConfig()
    rect = rect if rect is not None else (0, 0, camera.height, camera.width)
    uv, pid = pixel_centers(camera, rect)
    dirs = pixel_directions(camera, uv)
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    keys = np.uint64(view_id) * np.uint64(camera.width * camera.height) + pid.astype(np.uint64)
    chunks = [slice(i, min(i + cfg.chunk, len(uv))) for i in range(0, len(uv), cfg.chunk)]

    def run(sl):
        with T.no_grad():
            r = render_rays(origins[sl], dirs[sl], keys[sl], scene, human, pose, cfg, seed, mode)
        return r.value.data, r.alpha.data, r.depth, r.human_alpha

    with T.no_grad():
        scene.triplane.encode()
        if human is not None:
            human.triplane.encode()
    n_threads = threads or render_threads()
    if n_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    h, w = rect[2], rect[3]
    val = np.concatenate([p[0] for p in parts]).reshape(h, w, -1)
    return RenderedPatch(val, np.concatenate([p[1] for p in parts]).reshape(h, w),
                         np.concatenate([p[2] for p in parts]).reshape(h, w),
                         np.concatenate([p[3] for p in parts]).reshape(h, w))
