"""Feature-space stylization: frozen feature pyramid, AdaAttN, decoder, style losses.

Feature maps are NHWC tensors with N = 1; attention works on flattened
(positions, channels) matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

PYRAMID_CHANNELS = (3, 16, 32, 64)
STYLE_DIM = 16
NORM_EPS = 1e-5
STD_EPS = 1e-16


def _nhwc(x, dtype=None):
    if not isinstance(x, T.Tensor):
        x = T.Tensor(np.asarray(x), dtype=dtype)
    if x.ndim == 3:
        x = T.reshape(x, (1,) + x.shape)
    return x


def _flat(x):
    return T.reshape(x, (-1, x.shape[-1]))


class FrozenFeaturePyramid:
    """Seeded conv3x3 + relu + avg-pool stages with zero bias; never trained."""

    def __init__(self, seed=0, channels=PYRAMID_CHANNELS, dtype=None):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.channels = channels
        self.weights = [T.Tensor(rng.standard_normal((3, 3, a, b)) * np.sqrt(2.0 / (9 * a)), dtype=dtype)
                        for a, b in zip(channels[:-1], channels[1:])]

    @property
    def levels(self):
        return len(self.weights)

    def astype(self, dtype):
        self.weights = [T.Tensor(w.data, dtype=dtype) for w in self.weights]
        return self

    def __call__(self, image):
        """Image (h, w, 3) in [0, 1] -> list of level maps (1, h/2^l, w/2^l, C_l)."""
        x = _nhwc(image, self.weights[0].dtype)
        h, w = x.shape[1:3]
        m = 2 ** self.levels
        if h % m or w % m:
            raise ValueError(f"image {h}x{w} must be divisible by {m}; pad by "
                             f"({(-h) % m}, {(-w) % m}) pixels")
        out = []
        for wt in self.weights:
            x = T.avg_pool2d(T.relu(T.conv2d(x, wt, padding=1)))
            out.append(x)
        return out


extract_features = FrozenFeaturePyramid.__call__


def channelnorm(x, eps=NORM_EPS):
    """Normalize each position (row) to zero mean and unit std over channels."""
    mu = T.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    return xc / T.sqrt(T.mean(xc * xc, axis=-1, keepdims=True) + eps)


def attention_stats(q, k, v, eps=STD_EPS):
    """Attention-weighted mean and std of values: returns (A, M, S)."""
    if k.shape[0] == 0:
        raise ValueError("adaattn: style feature map is empty")
    d = q.shape[-1]
    A = T.softmax(T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(d)), axis=-1)
    # moments of values centred on their global mean: same result, less cancellation
    shift = T.mean(v, axis=0)
    vc = v - shift
    Mc = T.matmul(A, vc)
    var = T.matmul(A, vc * vc) - Mc * Mc
    S = T.sqrt(T.relu(var) + eps)
    return A, Mc + shift, S


@dataclass
class StyleContext:
    """Style pyramid features plus precomputed attention keys; built once per style image."""
    image: np.ndarray
    features: list     # flattened (positions, C_l) arrays per level
    keys: list         # channelnorm of the features
    mean: list
    std: list          # sqrt(var + STD_EPS) per channel

    @classmethod
    def build(cls, image, pyramid):
        with T.no_grad():
            feats = [_flat(f) for f in pyramid(image)]
            keys = [channelnorm(f) for f in feats]
            stats = [_spatial_stats(f) for f in feats]
        mean = [m.data for m, _ in stats]
        std = [s.data for _, s in stats]
        return cls(np.asarray(image), [f.data for f in feats], [k.data for k in keys], mean, std)


def adaattn_core(content, keys, values, eps=STD_EPS, return_attention=False):
    """Parameter-free AdaAttN: S * channelnorm(content) + M with attention on normalized keys."""
    content = content if isinstance(content, T.Tensor) else T.Tensor(content)
    dt = content.dtype
    q = channelnorm(content)
    A, M, S = attention_stats(q, T.Tensor(keys, dtype=dt), T.Tensor(values, dtype=dt), eps)
    out = S * q + M
    return (out, A) if return_attention else out


class AdaAttN(T.Module):
    """phi (C -> d) and psi (d -> M) per-position maps around the attention layer.

    The content features entering the normalization are phi(F_c), so the
    statistics transferred from the level-1 style features share their width.
    """

    def __init__(self, rng, c_in=64, d=STYLE_DIM, m_out=64):
        self.phi = T.Linear(c_in, d, rng, scale=np.sqrt(1.0 / c_in))
        self.psi = T.Linear(d, m_out, rng, scale=np.sqrt(1.0 / d))

    def __call__(self, content, keys, values, eps=STD_EPS, return_attention=False):
        """content (N, C) -> (N, M)."""
        out, A = adaattn_core(self.phi(content), keys, values, eps, return_attention=True)
        out = self.psi(out)
        return (out, A) if return_attention else out


def adaattn(F_c, F_s, phi, psi, eps=STD_EPS):
    """psi(AdaAttN(phi(F_c), F_s)) for flattened maps; ``phi``/``psi`` are callables."""
    F_s = F_s.data if isinstance(F_s, T.Tensor) else np.asarray(F_s)
    if F_s.size == 0:
        raise ValueError("adaattn: style feature map is empty")
    keys = channelnorm(T.Tensor(F_s)).data
    return psi(adaattn_core(phi(F_c), keys, F_s, eps))


class Decoder(T.Module):
    """Three 3x3 convolutions at input resolution: M -> 64 -> 32 -> 3, sigmoid output."""

    def __init__(self, rng, m_in=64):
        self.conv0 = T.Conv2d(m_in, 64, rng)
        self.conv1 = T.Conv2d(64, 32, rng)
        self.conv2 = T.Conv2d(32, 3, rng, scale=np.sqrt(1.0 / (9 * 32)))

    def __call__(self, x):
        """(h, w, M) or (1, h, w, M) -> (h, w, 3) in [0, 1]."""
        x = _nhwc(x, self.conv0.weight.dtype)
        x = T.relu(self.conv0(x))
        x = T.relu(self.conv1(x))
        y = T.sigmoid(self.conv2(x))
        return T.reshape(y, y.shape[1:])


def decode(decoder, F_cs):
    return decoder(F_cs)


def mean_norm(x, y=None):
    """Mean over positions of the per-position L2 norm of ``x - y`` (last axis)."""
    d = x if y is None else x - (y if isinstance(y, T.Tensor) else T.Tensor(y, dtype=x.dtype))
    return T.mean(T.norm(_flat(d), axis=-1))


def _spatial_stats(f):
    f = _flat(f)
    mu = T.mean(f, axis=0)
    fc = f - mu
    return mu, T.sqrt(T.mean(fc * fc, axis=0) + STD_EPS)


def style_losses(I_cs, ctx, pyramid, content):
    """(global, local) style losses of image I_cs (h, w, 3).

    global = sum_l |mu_l - mu_l^s| + |sigma_l - sigma_l^s|; local = sum_l of
    the mean per-position distance between the pyramid features of I_cs and
    the parameter-free AdaAttN of the content image's features.
    """
    feats = pyramid(I_cs)
    with T.no_grad():
        cfeat = pyramid(content)
    g = None
    loc = None
    for l, f in enumerate(feats):
        mu, sd = _spatial_stats(f)
        dt = mu.dtype
        term = (T.norm(mu - T.Tensor(ctx.mean[l], dtype=dt))
                + T.norm(sd - T.Tensor(ctx.std[l], dtype=dt)))
        g = term if g is None else g + term
        with T.no_grad():
            target = adaattn_core(T.Tensor(_flat(cfeat[l]).data, dtype=dt), ctx.keys[l], ctx.features[l])
        lt = mean_norm(_flat(f), target.data)
        loc = lt if loc is None else loc + lt
    return g, loc


def feature_target(image, pyramid, projection):
    """Level-1 pyramid features of ``image`` mapped to C channels, upsampled to full res."""
    with T.no_grad():
        f1 = pyramid(image)[0]
        up = T.upsample_nearest2d(f1)
    return np.einsum("nhwc,cd->hwd", up.data, projection)


def projection_matrix(seed, c_in=PYRAMID_CHANNELS[1], c_out=64):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((c_in, c_out)) / np.sqrt(c_in)
