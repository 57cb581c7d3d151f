"""Image metrics and flow-warp temporal consistency."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

FAR_GAP = 7


def psnr(a, b, mask=None):
    err = (np.asarray(a, float) - np.asarray(b, float)) ** 2
    if mask is not None:
        err = err[np.asarray(mask, bool)]
    return float(10 * np.log10(1.0 / max(err.mean(), 1e-12)))


def _bilinear(img, uv):
    """Sample (H, W, C) at continuous pixel coords uv (N, 2); pixel centres sit at +0.5."""
    coords = [uv[:, 1] - 0.5, uv[:, 0] - 0.5]
    img = img.reshape(img.shape[0], img.shape[1], -1)
    return np.stack([map_coordinates(img[..., c], coords, order=1, mode="nearest")
                     for c in range(img.shape[-1])], -1)


def _all_neighbours(mask, uv):
    """True where the point lies inside the pixel-centre lattice and all 4 neighbours are set."""
    h, w = mask.shape
    c0 = np.floor(uv[:, 0] - 0.5).astype(int)
    r0 = np.floor(uv[:, 1] - 0.5).astype(int)
    ok = (c0 >= 0) & (r0 >= 0) & (c0 + 1 < w) & (r0 + 1 < h)
    cc, rr = np.clip(c0, 0, w - 2), np.clip(r0, 0, h - 2)
    # a point exactly on a centre only needs that centre
    on = (np.abs(uv[:, 0] - 0.5 - np.round(uv[:, 0] - 0.5)) < 1e-9) & \
         (np.abs(uv[:, 1] - 0.5 - np.round(uv[:, 1] - 0.5)) < 1e-9)
    cn = np.clip(np.round(uv[:, 0] - 0.5).astype(int), 0, w - 1)
    rn = np.clip(np.round(uv[:, 1] - 0.5).astype(int), 0, h - 1)
    inb = (uv[:, 0] >= 0.5 - 1e-9) & (uv[:, 1] >= 0.5 - 1e-9) & (uv[:, 0] <= w - 0.5 + 1e-9) & \
          (uv[:, 1] <= h - 0.5 + 1e-9)
    full = ok & mask[rr, cc] & mask[rr, cc + 1] & mask[rr + 1, cc] & mask[rr + 1, cc + 1]
    return np.where(on, inb & mask[rn, cn], full)


def compose_flow(flows, valid, t, gap):
    """Positions (H*W, 2) in frame t+gap of the frame-t pixel centres, and their validity."""
    h, w = valid.shape[1:]
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    uv = np.stack([jj.ravel() + 0.5, ii.ravel() + 0.5], -1).astype(float)
    ok = np.ones(h * w, bool)
    for k in range(t, t + gap):
        ok &= _all_neighbours(valid[k], uv)
        uv = uv + _bilinear(flows[k], uv)
    return uv, ok


def warp_rmse(frame_a, frame_b, uv_b, ok):
    """RMSE of frame_a against frame_b sampled at the flowed positions, over ok pixels."""
    if not ok.any():
        return float("nan"), 0
    fa = np.asarray(frame_a, float).reshape(-1, frame_a.shape[-1])[ok]
    fb = _bilinear(np.asarray(frame_b, float), uv_b[ok])
    return float(np.sqrt(np.mean(np.sum((fa - fb) ** 2, -1) / fa.shape[-1]))), int(ok.sum())


@dataclass
class ConsistencyReport:
    pairs: list = field(default_factory=list)     # (t, gap, rmse, n_valid)
    adjacent: float = float("nan")
    far: float = float("nan")
    overall: float = float("nan")

    def gap_mean(self, gap):
        v = [r for _, g, r, n in self.pairs if g == gap and n > 0]
        return float(np.mean(v)) if v else float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "gap", "rmse", "n_valid"])
            for row in self.pairs:
                wr.writerow([row[0], row[1], f"{row[2]:.8f}", row[3]])
            for name in ("adjacent", "far", "overall"):
                wr.writerow([name, "", f"{getattr(self, name):.8f}", ""])


def eval_consistency(frames, dataset, gaps=(1, FAR_GAP)):
    """Masked warp RMSE of rendered frames along the dataset's ground-truth flow."""
    frames = np.asarray(frames)
    if len(frames) != dataset.n_frames:
        raise ValueError(f"eval_consistency: {len(frames)} frames for a {dataset.n_frames}-frame dataset")
    rep = ConsistencyReport()
    for gap in gaps:
        for t in range(dataset.n_frames - gap):
            uv, ok = compose_flow(dataset.flows, dataset.valid, t, gap)
            r, n = warp_rmse(frames[t], frames[t + gap], uv, ok)
            rep.pairs.append((t, gap, r, n))
    rep.adjacent = rep.gap_mean(1)
    rep.far = rep.gap_mean(FAR_GAP)
    v = [r for _, _, r, n in rep.pairs if n > 0]
    rep.overall = float(np.mean(v)) if v else float("nan")
    return rep
