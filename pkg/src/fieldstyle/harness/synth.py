"""Synthetic dynamic-human sequences with exact ground truth.

A textured box room and a capsule body walking sideways in front of a
slowly translating camera, rendered by an analytic ray tracer.  Textures
depend only on surface position (room) or canonical position (body), so
forward flow follows in closed form from the scene motion.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .. import imageio
from ..articulation import articulate, capsule_body, load_poses, save_poses
from ..geometry import Camera, load_cameras, look_at, pixel_centers, pixel_directions, save_cameras

ROOM_LO = np.array([-0.8, 0.0, -0.8])
ROOM_HI = np.array([0.8, 1.6, 0.8])
FIELD_PAD = 0.02
HUMAN_ID0 = 10
MISS = -1


@dataclass
class SceneDataset:
    frames: np.ndarray          # (T, H, W, 3) in [0, 1], 8-bit quantized
    masks: np.ndarray           # (T, H, W) bool
    flows: np.ndarray           # (T - 1, H, W, 2) forward flow in pixels
    valid: np.ndarray           # (T - 1, H, W) bool
    cameras: list
    poses: list
    meta: dict = field(default_factory=dict)
    ids: np.ndarray = None      # surface ids of the analytic render (not stored)

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def resolution(self):
        return self.frames.shape[1:3]

    @property
    def held_out(self):
        return list(self.meta.get("held_out", []))

    @property
    def train_frames(self):
        return [t for t in range(self.n_frames) if t not in self.held_out]

    @property
    def scene_bounds(self):
        return np.array(self.meta["scene_lo"]), np.array(self.meta["scene_hi"])

    @property
    def skeleton(self):
        return self.poses[0].skeleton

    def save(self, out):
        out = Path(out)
        for sub in ("frames", "masks", "flow"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        for t in range(self.n_frames):
            imageio.write_png(out / "frames" / f"frame_{t:04d}.png", self.frames[t])
            imageio.write_png(out / "masks" / f"mask_{t:04d}.png", self.masks[t].astype(np.uint8) * 255)
        for t in range(self.n_frames - 1):
            imageio.write_flow(out / "flow" / f"flow_{t:04d}.flo", self.flows[t])
            imageio.write_png(out / "flow" / f"valid_{t:04d}.png", self.valid[t].astype(np.uint8) * 255)
        save_cameras(out / "cameras.json", self.cameras)
        save_poses(out / "poses.json", self.poses)
        with open(out / "meta.json", "w") as fh:
            json.dump(self.meta, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        p = Path(path)
        if not (p / "meta.json").exists():
            raise FileNotFoundError(f"{p} is not a dataset directory (meta.json missing)")
        with open(p / "meta.json") as fh:
            meta = json.load(fh)
        n = meta["n_frames"]
        frames = np.stack([imageio.read_png(p / "frames" / f"frame_{t:04d}.png") for t in range(n)])
        masks = np.stack([imageio.read_mask(p / "masks" / f"mask_{t:04d}.png") for t in range(n)])
        flows = np.stack([imageio.read_flow(p / "flow" / f"flow_{t:04d}.flo") for t in range(n - 1)])
        valid = np.stack([imageio.read_mask(p / "flow" / f"valid_{t:04d}.png") for t in range(n - 1)])
        return cls(frames, masks, flows, valid, load_cameras(p / "cameras.json"),
                   load_poses(p / "poses.json"), meta)


# -- analytic scene -----------------------------------------------------------------
def _texture_params(rng, n):
    return {"base": rng.uniform(0.25, 0.75, (n, 3)),
            "amp": rng.uniform(0.08, 0.18, (n, 2, 3)),
            "freq": rng.uniform(5.0, 11.0, (n, 2, 3)),
            "phase": rng.uniform(0, 2 * np.pi, (n, 2, 3))}


def _wall_color(tex, wall, p):
    """Smooth two-sinusoid texture over the two tangent coordinates of a wall."""
    axis = wall // 2
    tang = [a for a in range(3) if a != axis]
    u, v = p[:, tang[0], None], p[:, tang[1], None]
    amp, freq, ph = tex["amp"][wall], tex["freq"][wall], tex["phase"][wall]
    c = tex["base"][wall] + amp[0] * np.sin(freq[0] * u + ph[0]) * np.cos(0.7 * freq[0] * v)
    c = c + amp[1] * np.sin(freq[1] * v + ph[1])
    return np.clip(c, 0, 1)


def _body_color(tex, part, xc):
    base = tex["base"][part]
    amp, freq, ph = tex["amp"][part], tex["freq"][part], tex["phase"][part]
    c = base + amp[0] * np.sin(1.6 * freq[0] * xc[:, 1:2] + ph[0]) + amp[1] * np.cos(freq[1] * xc[:, 0:1] + ph[1])
    return np.clip(c, 0, 1)


def _ray_room(o, d):
    """Exit distance and wall id (2 * axis + (1 if positive side)) from inside the room."""
    with np.errstate(divide="ignore"):
        hi_t = (ROOM_HI - o) / d
        lo_t = (ROOM_LO - o) / d
    t_axis = np.where(d > 0, hi_t, lo_t)
    t_axis[~np.isfinite(t_axis)] = np.inf
    axis = np.argmin(t_axis, axis=1)
    t = t_axis[np.arange(len(o)), axis]
    side = (d[np.arange(len(o)), axis] > 0).astype(int)
    return t, 2 * axis + side


def _ray_capsules(o, d, a, b, r, eps=1e-9):
    """Nearest entry distance into any capsule and its index (inf / -1 on a miss)."""
    best_t = np.full(len(o), np.inf)
    best_k = np.full(len(o), MISS)
    for k in range(len(r)):
        axis = b[k] - a[k]
        length = np.linalg.norm(axis)
        u = axis / length
        oa = o - a[k]
        dp = d - (d @ u)[:, None] * u
        op = oa - (oa @ u)[:, None] * u
        A = np.sum(dp * dp, 1)
        B = 2 * np.sum(op * dp, 1)
        C = np.sum(op * op, 1) - r[k] ** 2
        disc = B * B - 4 * A * C
        cand = []
        with np.errstate(invalid="ignore", divide="ignore"):
            tc = (-B - np.sqrt(disc)) / (2 * A)
        s = np.sum((oa + tc[:, None] * d) * u, 1)
        cand.append(np.where((disc >= 0) & (A > 1e-12) & (s >= 0) & (s <= length) & (tc > eps), tc, np.inf))
        for c in (a[k], b[k]):
            oc = o - c
            bb = np.sum(oc * d, 1)
            cc = np.sum(oc * oc, 1) - r[k] ** 2
            ds = bb * bb - cc
            with np.errstate(invalid="ignore"):
                ts = -bb - np.sqrt(ds)
            cand.append(np.where((ds >= 0) & (ts > eps), ts, np.inf))
        tk = np.min(cand, axis=0)
        better = tk < best_t
        best_t[better] = tk[better]
        best_k[better] = k
    return best_t, best_k


def trace(o, d, pose):
    """Exact first hit: (distance, surface id, hit point) with ids walls 0..5, body parts 10+k."""
    t_room, wall = _ray_room(o, d)
    a, b, r = pose.posed_segments()
    t_body, part = _ray_capsules(o, d, a, b, r)
    body = t_body < t_room
    t = np.where(body, t_body, t_room)
    ids = np.where(body, HUMAN_ID0 + part, wall)
    return t, ids, o + t[:, None] * d


def shade(points, ids, pose, tex_room, tex_body):
    color = np.zeros((len(points), 3))
    for wall in range(6):
        m = ids == wall
        if m.any():
            color[m] = _wall_color(tex_room, wall, points[m])
    for k in range(pose.K):
        m = ids == HUMAN_ID0 + k
        if m.any():
            xc = (points[m] - pose.translations[k]) @ pose.rotations[k]
            color[m] = _body_color(tex_body, k, xc)
    return color


# -- scripted motion ----------------------------------------------------------------
def _rz(deg):
    return Rotation.from_euler("z", deg, degrees=True).as_matrix()


def walk_pose(skeleton, phase, x):
    """Sideways walk: arms swing below the shoulders, legs open and close, slight torso sway."""
    s = np.sin(phase)
    arm = (-45.0 + 12.0 * s) - 30.0
    leg = (12.0 + 8.0 * s) - 20.0
    rots = [_rz(3.0 * s), _rz(arm), _rz(-arm), _rz(leg), _rz(-leg)]
    return articulate(skeleton, [x, 0.0, -0.25], np.eye(3), rots)


def make_camera(x, width, height, fov_deg=70.0):
    eye = np.array([x, 0.85, 0.65])
    focal = 0.5 * width / np.tan(np.radians(fov_deg / 2))
    R = look_at(eye, [0.5 * x, 0.7, -0.8])
    return Camera(focal, focal, width / 2, height / 2, R, eye, width, height)


def circular_path(n, width, height, radius=0.12, center=(0.0, 0.8, 0.55), target=(0.0, 0.6, -0.6)):
    """Cameras on a small horizontal circle, all facing ``target``."""
    cams = []
    focal = 0.5 * width / np.tan(np.radians(35.0))
    for i in range(n):
        ang = 2 * np.pi * i / n
        eye = np.asarray(center) + radius * np.array([np.cos(ang), 0.4 * np.sin(ang), np.sin(ang)])
        cams.append(Camera(focal, focal, width / 2, height / 2, look_at(eye, target), eye, width, height))
    return cams


def render_analytic(camera, pose, tex_room, tex_body):
    uv, _ = pixel_centers(camera)
    d = pixel_directions(camera, uv)
    o = np.broadcast_to(camera.center, d.shape)
    t, ids, pts = trace(o, d, pose)
    h, w = camera.height, camera.width
    return shade(pts, ids, pose, tex_room, tex_body).reshape(h, w, 3), ids.reshape(h, w), pts.reshape(h, w, 3)


def analytic_mask(camera, pose):
    """Exact human mask of the capsule body seen through ``camera``."""
    uv, _ = pixel_centers(camera)
    d = pixel_directions(camera, uv)
    _, ids, _ = trace(np.broadcast_to(camera.center, d.shape), d, pose)
    return (ids >= HUMAN_ID0).reshape(camera.height, camera.width)


def mask_centroid(mask):
    """(x, y) pixel-centre centroid of a binary or soft mask; None when empty."""
    m = np.asarray(mask, float)
    if m.sum() <= 0:
        return None
    yy, xx = np.mgrid[0:m.shape[0], 0:m.shape[1]] + 0.5
    return np.array([np.sum(m * xx), np.sum(m * yy)]) / m.sum()


def _advance(points, ids, pose_a, pose_b):
    """Move surface points from frame a to frame b (room static, body parts rigidly)."""
    out = points.copy()
    for k in range(pose_a.K):
        m = ids == HUMAN_ID0 + k
        if m.any():
            xc = (points[m] - pose_a.translations[k]) @ pose_a.rotations[k]
            out[m] = xc @ pose_b.rotations[k].T + pose_b.translations[k]
    return out


def forward_flow(cam_a, cam_b, pose_a, pose_b, ids_a, pts_a, ids_b, tol=2e-3):
    """Flow of each frame-a pixel into frame b plus its visibility mask."""
    h, w = cam_a.height, cam_a.width
    uv, _ = pixel_centers(cam_a)
    moved = _advance(pts_a.reshape(-1, 3), ids_a.ravel(), pose_a, pose_b)
    uv_b, z = cam_b.project(moved)
    flow = (uv_b - uv).reshape(h, w, 2)
    # bilinear neighbours (pixel centres at +0.5) must exist and show the same surface
    c0 = np.floor(uv_b[:, 0] - 0.5).astype(int)
    r0 = np.floor(uv_b[:, 1] - 0.5).astype(int)
    inside = (c0 >= 0) & (r0 >= 0) & (c0 + 1 < w) & (r0 + 1 < h) & (z > 0)
    ok = inside.copy()
    cc, rr = np.clip(c0, 0, w - 2), np.clip(r0, 0, h - 2)
    for dr in (0, 1):
        for dc in (0, 1):
            ok &= ids_b[rr + dr, cc + dc] == ids_a.ravel()
    # occlusion: re-trace towards the moved point
    d = moved - cam_b.center
    dist = np.linalg.norm(d, axis=1)
    t, ids, _ = trace(np.broadcast_to(cam_b.center, d.shape), d / dist[:, None], pose_b)
    ok &= (ids == ids_a.ravel()) & (np.abs(t - dist) < tol)
    return flow, ok.reshape(h, w)


def synth_scene(seed=7, n_frames=16, resolution=64, held_out=None):
    if resolution % 8:
        raise ValueError(f"resolution {resolution} must be divisible by 8")
    rng = np.random.default_rng(seed)
    tex_room = _texture_params(rng, 6)
    tex_body = _texture_params(rng, 5)
    skeleton = capsule_body()
    span = np.linspace(-1.0, 1.0, n_frames)
    cams = [make_camera(0.1 * s, resolution, resolution) for s in span]
    poses = [walk_pose(skeleton, 2 * np.pi * t / 8.0, 0.2 * s) for t, s in enumerate(span)]
    frames, masks, ids, pts = [], [], [], []
    for cam, pose in zip(cams, poses):
        img, idm, pt = render_analytic(cam, pose, tex_room, tex_body)
        frames.append(imageio.to_uint8(img) / 255.0)
        masks.append(idm >= HUMAN_ID0)
        ids.append(idm)
        pts.append(pt)
    flows, valid = [], []
    for t in range(n_frames - 1):
        f, v = forward_flow(cams[t], cams[t + 1], poses[t], poses[t + 1], ids[t], pts[t], ids[t + 1])
        flows.append(f)
        valid.append(v)
    if held_out is None:
        held_out = [n_frames // 3, (2 * n_frames) // 3] if n_frames >= 6 else []
    meta = {"seed": int(seed), "n_frames": int(n_frames), "resolution": int(resolution),
            "near": 0.05, "far": 2.1, "held_out": [int(h) for h in held_out],
            "scene_lo": (ROOM_LO - FIELD_PAD).tolist(), "scene_hi": (ROOM_HI + FIELD_PAD).tolist()}
    ds = SceneDataset(np.stack(frames), np.stack(masks), np.stack(flows), np.stack(valid),
                      cams, poses, meta, ids=np.stack(ids))
    ds.textures = (tex_room, tex_body)
    return ds
