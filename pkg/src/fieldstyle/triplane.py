"""Geometry-guided tri-plane fields.

Voxel centres of the field's box are positional-encoded and average-pooled
onto the xy, xz and yz planes.  Each of those frozen rasters is fed through
its own small U-Net to produce a learnable feature plane.  A point's feature
is the elementwise product of the three bilinearly interpolated plane
features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import VIEW_FREQS, normalize_to_box, positional_encode

PLANES = ("xy", "xz", "yz")
PLANE_AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
RESOLUTION_CAP = 512


@dataclass
class GeometryRaster:
    planes: dict
    voxel_size: float
    lo: np.ndarray
    hi: np.ndarray
    resolution: tuple
    freqs: int

    @property
    def channels(self):
        return self.planes["xy"].shape[-1]


def build_geometry_raster(bounds, voxel_size, L=VIEW_FREQS, cap=RESOLUTION_CAP):
    """Mean-pool the encodings of all voxel centres onto the three axis planes."""
    lo, hi = (np.asarray(v, float) for v in bounds)
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    extent = hi - lo
    if np.any(extent <= 0):
        raise ValueError(f"degenerate bounds {lo} .. {hi}")
    res = tuple(int(math.ceil(e / voxel_size - 1e-9)) for e in extent)
    if max(res) > cap:
        raise ValueError(
            f"plane resolution {res} exceeds cap {cap}; use a larger voxel size "
            f"(>= {extent.max() / cap:.4f} m)")
    centres = [lo[a] + (np.arange(res[a]) + 0.5) * voxel_size for a in range(3)]
    planes = {}
    for name, (i, j) in PLANE_AXES.items():
        k = 3 - i - j
        gi, gj = np.meshgrid(centres[i], centres[j], indexing="ij")
        acc = None
        for depth in centres[k]:
            pts = np.empty(gi.shape + (3,))
            pts[..., i], pts[..., j], pts[..., k] = gi, gj, depth
            enc = positional_encode(normalize_to_box(pts, lo, hi), L)
            acc = enc if acc is None else acc + enc
        planes[name] = acc / res[k]
    return GeometryRaster(planes, float(voxel_size), lo, hi, res, L)


class PlaneEncoder(T.Module):
    """Two-level convolutional encoder-decoder with skip concatenation (3x3, relu)."""

    def __init__(self, d_in, d, rng, out_bias=1.0, out_scale=0.1):
        self.enc0 = T.Conv2d(d_in, d, rng)
        self.enc1 = T.Conv2d(d, 2 * d, rng)
        self.enc2 = T.Conv2d(2 * d, 2 * d, rng)
        self.dec1 = T.Conv2d(4 * d, 2 * d, rng)
        self.dec0 = T.Conv2d(3 * d, d, rng)
        self.dec0.weight.data *= out_scale
        self.dec0.bias.data[:] = out_bias

    def __call__(self, raster):
        """(H, W, d_in) array -> (H, W, d) Tensor; borders padded to a multiple of 4."""
        h, w = raster.shape[:2]
        ph, pw = (-h) % 4, (-w) % 4
        x = np.pad(raster, ((0, ph), (0, pw), (0, 0)), mode="edge")[None]
        x = T.Tensor(x, dtype=self.enc0.weight.dtype)
        e0 = T.relu(self.enc0(x))
        e1 = T.relu(self.enc1(T.avg_pool2d(e0)))
        e2 = T.relu(self.enc2(T.avg_pool2d(e1)))
        d1 = T.relu(self.dec1(T.concat([T.upsample_nearest2d(e2), e1], axis=-1)))
        out = self.dec0(T.concat([T.upsample_nearest2d(d1), e0], axis=-1))
        if ph or pw:
            out = out[:, :h, :w, :]
        return T.reshape(out, (h, w, out.shape[-1]))


class TriPlaneField(T.Module):
    """Three feature planes over an axis-aligned box.

    With ``guided`` the planes come from U-Net encoders over the geometry
    raster; otherwise they are optimized directly.  ``mode`` chooses the
    plane aggregation ("hadamard", or "sum" for property tests only).
    """

    def __init__(self, bounds, voxel_size, feature_dim, rng, freqs=VIEW_FREQS,
                 guided=True, mode="hadamard", cap=RESOLUTION_CAP):
        self._raster = build_geometry_raster(bounds, voxel_size, freqs, cap)
        self._lo, self._hi = self._raster.lo, self._raster.hi
        self._voxel = self._raster.voxel_size
        self._mode = mode
        self._guided = guided
        self.feature_dim = feature_dim
        if guided:
            self.encoders = [PlaneEncoder(self._raster.channels, feature_dim, rng) for _ in PLANES]
        else:
            self.planes = [T.parameter(1 + 0.1 * rng.standard_normal(self._raster.planes[p].shape[:2] + (feature_dim,)))
                           for p in PLANES]
        self._cache = None
        self._cache_grad = False

    @property
    def bounds(self):
        return self._lo, self._hi

    @property
    def raster(self):
        return self._raster

    def invalidate(self):
        self._cache = None

    def encode(self):
        """Feature planes (cached until :meth:`invalidate`)."""
        stale = (self._cache is not None and not self._cache_grad and T.is_grad_enabled()
                 and any(p.requires_grad for p in self.parameters()))
        if self._cache is None or stale:
            self._cache_grad = T.is_grad_enabled()
            if self._guided:
                self._cache = [enc(self._raster.planes[p]) for enc, p in zip(self.encoders, PLANES)]
            else:
                self._cache = list(self.planes)
        return self._cache

    def set_planes(self, planes):
        """Install explicit (H, W, D) planes in place of the encoder output (tests, dumps)."""
        self._cache = [p if isinstance(p, T.Tensor) else T.Tensor(p) for p in planes]
        self._cache_grad = True

    def in_bounds(self, x):
        x = x.data if isinstance(x, T.Tensor) else np.asarray(x)
        return np.all((x >= self._lo) & (x <= self._hi), axis=-1)

    def _grid_coords(self, x):
        if isinstance(x, T.Tensor):
            g = (x - T.Tensor(self._lo, dtype=x.dtype)) * (1.0 / self._voxel) - 0.5
            return [g[:, list(PLANE_AXES[p])] for p in PLANES]
        g = (np.asarray(x, float) - self._lo) / self._voxel - 0.5
        return [T.Tensor(g[:, list(PLANE_AXES[p])]) for p in PLANES]

    def sample(self, x):
        """Point features for (M, 3) points; out-of-box points are clamped to the border."""
        planes = self.encode()
        feats = [T.grid_sample2d(pl, c) for pl, c in zip(planes, self._grid_coords(x))]
        if self._mode == "sum":
            return feats[0] + feats[1] + feats[2]
        return feats[0] * feats[1] * feats[2]

    def query(self, x):
        """f(x) for points inside the box; raises for points outside."""
        pts = x.data if isinstance(x, T.Tensor) else np.asarray(x, float)
        pts2 = pts.reshape(-1, 3)
        if not np.all(self.in_bounds(pts2)):
            raise ValueError("query point outside the field bounds; cull before querying")
        if not isinstance(x, T.Tensor):
            x = T.Tensor(pts2)
        elif x.ndim != 2:
            x = T.reshape(x, (-1, 3))
        return self.sample(x)


def dump_planes(field, out_dir, prefix="plane"):
    """Write per-plane PNG mosaics of channel slices plus raw float32 arrays."""
    from pathlib import Path

    from .imageio import write_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with T.no_grad():
        planes = field.encode()
    for name, pl in zip(PLANES, planes):
        arr = np.asarray(pl.data, np.float32)
        arr.astype("<f4").tofile(out / f"{prefix}_{name}.f32")
        h, w, d = arr.shape
        cols = int(math.ceil(math.sqrt(d)))
        rows = int(math.ceil(d / cols))
        mosaic = np.zeros((rows * h, cols * w))
        for c in range(d):
            ch = arr[..., c]
            span = ch.max() - ch.min()
            r, q = divmod(c, cols)
            mosaic[r * h:(r + 1) * h, q * w:(q + 1) * w] = (ch - ch.min()) / span if span > 0 else 0
        write_png(out / f"{prefix}_{name}.png", np.repeat(mosaic[..., None], 3, -1))
