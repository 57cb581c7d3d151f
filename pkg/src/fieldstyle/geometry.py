"""Pinhole cameras, ray construction, stratified sampling and positional encodings.

Camera frames follow the OpenCV convention: x right, y down, z forward.
``R`` and ``t`` map camera coordinates to world coordinates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

VIEW_FREQS = 6
DIR_FREQS = 4


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.R = np.asarray(self.R, float).reshape(3, 3)
        self.t = np.asarray(self.t, float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self):
        return self.t

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.R.ravel().tolist(), "t": self.t.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["R"], d["t"],
                   int(d["width"]), int(d["height"]))

    def project(self, points):
        """World points (..., 3) -> pixel coordinates (..., 2) and depth (...)."""
        pc = (np.asarray(points, float) - self.t) @ self.R
        z = pc[..., 2]
        u = self.fx * pc[..., 0] / z + self.cx
        v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], -1), z


def look_at(eye, target, up=(0.0, 1.0, 0.0)):
    """World-from-camera rotation for a camera at ``eye`` facing ``target``."""
    eye, target, up = (np.asarray(a, float) for a in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def save_cameras(path, cameras):
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=1)


def load_cameras(path):
    with open(path) as fh:
        return [Camera.from_dict(d) for d in json.load(fh)]


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float)
        self.direction = np.asarray(self.direction, float)
        if abs(np.linalg.norm(self.direction) - 1) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")


@dataclass
class RaySampleBatch:
    """Samples along a set of rays; arrays have a leading (rays, samples) shape."""
    t: np.ndarray
    delta: np.ndarray
    positions: np.ndarray
    source: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.source is None:
            self.source = np.zeros(self.t.shape, np.int8)


def pixel_directions(camera, uv):
    """Unit world-space directions through continuous pixel coordinates (..., 2)."""
    uv = np.asarray(uv, float)
    d = np.stack([(uv[..., 0] - camera.cx) / camera.fx,
                  (uv[..., 1] - camera.cy) / camera.fy,
                  np.ones(uv.shape[:-1])], -1)
    d = d @ camera.R.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(camera, pixel, near=0.05, far=4.0):
    u, v = pixel
    if not (0 <= u <= camera.width and 0 <= v <= camera.height):
        raise ValueError(f"pixel {pixel} outside {camera.width}x{camera.height} image")
    d = pixel_directions(camera, np.array([u, v], float))
    return Ray(camera.t.copy(), d, near, far)


def pixel_centers(camera, rect=None):
    """Pixel-center coordinates (h*w, 2) and flat pixel ids for ``rect``.

    ``rect`` is (row0, col0, height, width); the default is the full image.
    """
    r0, c0, h, w = rect if rect is not None else (0, 0, camera.height, camera.width)
    if r0 < 0 or c0 < 0 or r0 + h > camera.height or c0 + w > camera.width:
        raise ValueError(f"rect {rect} outside {camera.width}x{camera.height} image")
    rows, cols = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
    uv = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], -1)
    return uv, (rows * camera.width + cols).ravel()


# -- counter-based random numbers ----------------------------------------------
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed, key, n):
    """Uniform [0, 1) values of shape key.shape + (n,), a pure function of (seed, key, i).

    The same key always yields the same stream, regardless of batching.
    """
    key = np.asarray(key, np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(key * _GOLD + _mix(np.uint64(seed) + _GOLD))
        ctr = np.arange(1, n + 1, dtype=np.uint64) * _GOLD
        z = _mix(base[..., None] + ctr)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def stratified_sample(ray_o, ray_d, near, far, n, jitter):
    """One sample per equal sub-interval of [near, far] along each ray.

    ``near``/``far`` broadcast against the ray batch; ``jitter`` is (rays, n)
    in [0, 1).  The last interval ends at ``far``.
    """
    if n < 1:
        raise ValueError("need at least one sample per ray")
    near = np.broadcast_to(np.asarray(near, float), ray_o.shape[:-1])[..., None]
    far = np.broadcast_to(np.asarray(far, float), ray_o.shape[:-1])[..., None]
    step = (far - near) / n
    t = near + (np.arange(n) + jitter) * step
    delta = np.concatenate([np.diff(t, axis=-1), far - t[..., -1:]], axis=-1)
    pos = ray_o[..., None, :] + t[..., None] * ray_d[..., None, :]
    return RaySampleBatch(t=t, delta=delta, positions=pos)


def sample_ray(ray, n, rng):
    jitter = rng.uniform(0, 1, (1, n))
    return stratified_sample(ray.origin[None], ray.direction[None], ray.near, ray.far, n, jitter)


# -- positional encoding ------------------------------------------------------------
def encoding_dim(dim, L, include_input=True):
    return dim * (int(include_input) + 2 * L)


def positional_encode(x, L, include_input=True):
    """Per-coordinate blocks [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)].

    Accepts numpy arrays or Tensors of shape (..., dim); returns (..., dim * (1 + 2L))
    or without the raw block when ``include_input`` is False.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    if isinstance(x, T.Tensor):
        xs = T.reshape(x, x.shape + (1,))
        if L == 0:
            return x if include_input else T.zeros(x.shape[:-1] + (0,), dtype=x.dtype)
        scaled = xs * T.Tensor(2.0 ** np.arange(L), dtype=x.dtype)
        sc = T.reshape(T.stack([T.sin(scaled), T.cos(scaled)], -1), x.shape + (2 * L,))
        blocks = T.concat([xs, sc], -1) if include_input else sc
        return T.reshape(blocks, x.shape[:-1] + (-1,))
    x = np.asarray(x, float) if not isinstance(x, np.ndarray) else x
    # double-angle recursion: one sin/cos evaluation per coordinate
    sc = np.empty(x.shape + (L, 2), dtype=np.result_type(x.dtype, np.float32))
    if L:
        s, c = np.sin(x), np.cos(x)
        for level in range(L):
            sc[..., level, 0], sc[..., level, 1] = s, c
            s, c = 2 * s * c, 1 - 2 * s * s
    sc = sc.reshape(x.shape + (2 * L,))
    blocks = np.concatenate([x[..., None], sc], -1) if include_input else sc
    return blocks.reshape(x.shape[:-1] + (-1,))


def normalize_to_box(x, lo, hi):
    """Map points in the box [lo, hi] to [-1, 1]^3."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return 2 * (x - lo) / (hi - lo) - 1


def ray_box_interval(ray_o, ray_d, lo, hi):
    """Slab test: entry/exit distances per ray (exit < entry means a miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / ray_d
        t0 = (np.asarray(lo) - ray_o) * inv
        t1 = (np.asarray(hi) - ray_o) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=-1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=-1)
    return tmin, tmax
