"""Point-query throughput: geometry-guided tri-plane vs an 8x128 coordinate MLP."""
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..geometry import VIEW_FREQS, normalize_to_box, positional_encode
from ..triplane import TriPlaneField

PAPER_SPEEDUP = 0.70     # reported inference-time speedup, for context only


class MLPField(T.Module):
    """gamma_v(x) -> feature through 8 hidden layers of width 128."""

    def __init__(self, bounds, feature_dim, rng, depth=8, width=128, freqs=VIEW_FREQS):
        self._lo, self._hi = (np.asarray(b, float) for b in bounds)
        self._freqs = freqs
        self.net = T.MLP([3 * (1 + 2 * freqs)] + [width] * depth + [feature_dim], rng)

    def query(self, x):
        enc = positional_encode(normalize_to_box(np.asarray(x, np.float32), self._lo, self._hi), self._freqs)
        return self.net(T.Tensor(enc.astype(np.float32)))


def n_params(module):
    return int(sum(p.data.size for p in module.parameters()))


@dataclass
class BenchReport:
    n_points: int
    batch: int
    reps: int
    rows: list = field(default_factory=list)   # (name, n_params, best_seconds, queries_per_second)
    ratio: float = float("nan")                # tri-plane qps / MLP qps

    def speedup_text(self):
        if not np.isfinite(self.ratio):
            return "no points queried"
        return (f"tri-plane/MLP throughput ratio {self.ratio:.2f} "
                f"(reported inference speedup for context: about {PAPER_SPEEDUP:.0%})")


def _timed(fn, x, batch, reps):
    fn(x[:min(batch, len(x))])   # warmup, excluded
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        for s in range(0, len(x), batch):
            fn(x[s:s + batch])
        best = min(best, time.perf_counter() - t)
    return best


def bench_query(n_points=1_000_000, bounds=((-0.8, 0.0, -0.8), (0.8, 1.6, 0.8)), voxel=0.01,
                feature_dim=16, batch=65536, reps=3, seed=0):
    """Min-of-reps wall time for querying n_points random points with each field."""
    rep = BenchReport(int(n_points), batch, reps)
    if n_points <= 0:
        return rep
    rng = np.random.default_rng(seed)
    with T.default_dtype(np.float32):
        tri = TriPlaneField(bounds, voxel, feature_dim, rng)
        mlp = MLPField(bounds, feature_dim, rng).astype(np.float32)
        lo, hi = tri.bounds
        x = rng.uniform(lo, hi, (int(n_points), 3)).astype(np.float32)
        with T.no_grad():
            tri.encode()         # planes are produced once per model, not per query
            t_tri = _timed(tri.query, x, batch, reps)
            t_mlp = _timed(mlp.query, x, batch, reps)
    rep.rows = [("triplane", n_params(tri), t_tri, n_points / t_tri),
                ("mlp", n_params(mlp), t_mlp, n_points / t_mlp)]
    rep.ratio = rep.rows[0][3] / rep.rows[1][3]
    return rep
