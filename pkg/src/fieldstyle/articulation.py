"""Capsule-skeleton body proxy and the observation -> canonical warp.

A body is K capsules (segment endpoints + radius) in the canonical pose.  A
pose assigns each part a rigid transform G_k taking canonical coordinates to
observation coordinates.  Points are warped back with inverse linear blend
skinning plus a small learned residual.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import tensor as T
from .geometry import VIEW_FREQS, encoding_dim, normalize_to_box, positional_encode

BLEND_SCALE = 0.05
CORRECTION_BOUND = 0.05


class DegeneratePoseError(ValueError):
    pass


@dataclass
class Skeleton:
    """Canonical capsules; ``pivots`` are the joints each part rotates about."""
    a: np.ndarray
    b: np.ndarray
    radius: np.ndarray
    pivots: np.ndarray
    names: tuple

    @property
    def K(self):
        return len(self.radius)

    def to_list(self):
        return [{"name": n, "a": a.tolist(), "b": b.tolist(), "radius": float(r), "pivot": p.tolist()}
                for n, a, b, r, p in zip(self.names, self.a, self.b, self.radius, self.pivots)]

    @classmethod
    def from_list(cls, items):
        return cls(np.array([i["a"] for i in items], float), np.array([i["b"] for i in items], float),
                   np.array([i["radius"] for i in items], float),
                   np.array([i.get("pivot", i["a"]) for i in items], float),
                   tuple(i.get("name", f"part{k}") for k, i in enumerate(items)))

    def bounds(self, pad=0.1):
        pts = np.concatenate([self.a, self.b])
        r = self.radius.max()
        return pts.min(0) - r - pad, pts.max(0) + r + pad


def capsule_body():
    """Five-part body (torso, arms, legs) in a limbs-spread canonical pose, meters."""
    arm = np.array([np.cos(np.radians(30)), np.sin(np.radians(30)), 0.0])
    leg = np.array([np.sin(np.radians(20)), -np.cos(np.radians(20)), 0.0])
    mirror = np.array([-1.0, 1.0, 1.0])
    sh = np.array([0.13, 0.78, 0.0])
    hip = np.array([0.06, 0.38, 0.0])
    a = np.array([[0, 0.42, 0], sh, sh * mirror, hip, hip * mirror], float)
    b = np.array([[0, 0.86, 0], sh + 0.34 * arm, (sh + 0.34 * arm) * mirror,
                  hip + 0.36 * leg, (hip + 0.36 * leg) * mirror], float)
    radius = np.array([0.10, 0.04, 0.04, 0.045, 0.045])
    pivots = np.array([[0, 0.42, 0], sh, sh * mirror, hip, hip * mirror], float)
    return Skeleton(a, b, radius, pivots, ("torso", "arm_l", "arm_r", "leg_l", "leg_r"))


@dataclass
class SkeletonPose:
    """Per-part rigid transforms G_k = (R_k, t_k): canonical -> observation."""
    rotations: np.ndarray
    translations: np.ndarray
    skeleton: Skeleton

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, float).reshape(-1, 3, 3)
        self.translations = np.asarray(self.translations, float).reshape(-1, 3)
        if len(self.rotations) < 1:
            raise ValueError("pose needs at least one part")
        eye = np.einsum("kji,kjl->kil", self.rotations, self.rotations)
        if not np.allclose(eye, np.eye(3), atol=1e-6):
            raise ValueError("pose rotations must be orthonormal")

    @property
    def K(self):
        return len(self.rotations)

    def matrices(self):
        G = np.zeros((self.K, 4, 4))
        G[:, :3, :3] = self.rotations
        G[:, :3, 3] = self.translations
        G[:, 3, 3] = 1
        return G

    def apply(self, k, x):
        return x @ self.rotations[k].T + self.translations[k]

    def posed_segments(self):
        sk = self.skeleton
        a = np.einsum("kij,kj->ki", self.rotations, sk.a) + self.translations
        b = np.einsum("kij,kj->ki", self.rotations, sk.b) + self.translations
        return a, b, sk.radius

    def bounds(self, pad=0.1):
        a, b, r = self.posed_segments()
        pts = np.concatenate([a, b])
        return pts.min(0) - r.max() - pad, pts.max(0) + r.max() + pad

    @classmethod
    def identity(cls, skeleton):
        return cls(np.tile(np.eye(3), (skeleton.K, 1, 1)), np.zeros((skeleton.K, 3)), skeleton)


def articulate(skeleton, root_translation, root_rotation, part_rotations):
    """Pose each part by rotating about its pivot, then applying the root transform."""
    Rr = np.asarray(root_rotation, float)
    Tr = np.asarray(root_translation, float)
    rots, trans = [], []
    for k in range(skeleton.K):
        Rk = np.asarray(part_rotations[k], float)
        p = skeleton.pivots[k]
        rots.append(Rr @ Rk)
        trans.append(Rr @ (p - Rk @ p) + Tr)
    return SkeletonPose(np.array(rots), np.array(trans), skeleton)


def save_poses(path, poses):
    """Pose file: skeleton plus, per frame, K x {quaternion [w, x, y, z], translation}."""
    frames = []
    for pose in poses:
        q = Rotation.from_matrix(pose.rotations).as_quat()  # x, y, z, w
        frames.append([{"q": [qi[3], qi[0], qi[1], qi[2]], "t": ti.tolist()}
                       for qi, ti in zip(q, pose.translations)])
    with open(path, "w") as fh:
        json.dump({"skeleton": poses[0].skeleton.to_list(), "frames": frames}, fh, indent=1)


def load_poses(path):
    with open(path) as fh:
        doc = json.load(fh)
    skeleton = Skeleton.from_list(doc["skeleton"])
    poses = []
    for frame in doc["frames"]:
        q = np.array([[p["q"][1], p["q"][2], p["q"][3], p["q"][0]] for p in frame])
        R = Rotation.from_quat(q).as_matrix()
        poses.append(SkeletonPose(R, np.array([p["t"] for p in frame]), skeleton))
    return poses


def segment_distance(x, a, b):
    """Distance from points (..., 3) to each segment (K, 3)-(K, 3): returns (..., K)."""
    ab = b - a
    ap = x[..., None, :] - a
    s = np.clip(np.sum(ap * ab, -1) / np.maximum(np.sum(ab * ab, -1), 1e-12), 0, 1)
    closest = a + s[..., None] * ab
    return np.linalg.norm(x[..., None, :] - closest, axis=-1)


def capsule_distance(x, a, b, radius):
    """Unsigned distance to each capsule surface, zero inside: (..., K)."""
    return np.maximum(segment_distance(x, a, b) - radius, 0.0)


def blend_weights(x, pose, scale=BLEND_SCALE):
    """Gaussian-of-distance weights to the posed capsules, normalized over parts."""
    a, b, r = pose.posed_segments()
    d = capsule_distance(np.asarray(x, float), a, b, r)
    logits = -d * d / (2 * scale * scale)
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def inverse_lbs(x, pose, w, det_tol=1e-8):
    """x_canonical = (sum_k w_k G_k)^-1 x for points (..., 3) and weights (..., K)."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    A = np.einsum("...k,kij->...ij", w, pose.rotations)
    b = np.einsum("...k,ki->...i", w, pose.translations)
    det = np.linalg.det(A)
    if np.any(np.abs(det) < det_tol):
        raise DegeneratePoseError(
            f"blended transform is singular (|det| = {np.abs(det).min():.2e}); pose is degenerate")
    return np.linalg.solve(A, (x - b)[..., None])[..., 0]


def forward_lbs(x_canonical, pose, w):
    x_canonical = np.asarray(x_canonical, float)
    A = np.einsum("...k,kij->...ij", w, pose.rotations)
    b = np.einsum("...k,ki->...i", w, pose.translations)
    return np.einsum("...ij,...j->...i", A, x_canonical) + b


class CorrectionNet(T.Module):
    """Residual warp E(x): positional-encoded observation point -> bounded 3-vector offset."""

    def __init__(self, rng, bounds, hidden=64, freqs=VIEW_FREQS, bound=CORRECTION_BOUND):
        self.mlp = T.MLP([encoding_dim(3, freqs), hidden, hidden, 3], rng)
        last = self.mlp.layers[-1]
        last.weight.data[:] = 0
        self._lo, self._hi = (np.asarray(v, float) for v in bounds)
        self._freqs = freqs
        self._bound = bound

    def __call__(self, x):
        dt = self.mlp.layers[0].weight.dtype
        xn = normalize_to_box(np.asarray(x, float), self._lo, self._hi).astype(dt)
        out = self.mlp(T.Tensor(positional_encode(xn, self._freqs), dtype=dt))
        return T.tanh(out) * self._bound


def to_canonical(x, pose, correction, weights=None):
    """Warp observation points to canonical space: inverse LBS plus E(x).

    Returns ``(x_canonical Tensor, x_lbs ndarray)``; only E carries gradients.
    """
    if weights is None:
        weights = blend_weights(x, pose)
    x_lbs = inverse_lbs(x, pose, weights)
    if correction is None:
        return T.Tensor(x_lbs), x_lbs
    offset = correction(x)
    return T.Tensor(x_lbs, dtype=offset.dtype) + offset, x_lbs


def inside_canonical_body(x, skeleton):
    """True where a canonical point lies in (or on) any canonical capsule."""
    d = segment_distance(np.asarray(x, float), skeleton.a, skeleton.b) - skeleton.radius
    return d.min(axis=-1) <= 0
