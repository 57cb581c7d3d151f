"""Report figures (written to files, never shown)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def loss_curves(metrics, path, keys=None):
    """metrics: list of dicts with a 'step' key, as written by the trainer."""
    keys = keys or [k for k in metrics[0] if k.startswith("L_") or k == "loss"]
    steps = [m["step"] for m in metrics]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in keys:
        ax.plot(steps, [m.get(k, np.nan) for m in metrics], label=k)
    ax.set_xlabel("step")
    ax.set_ylabel("loss term")
    ax.legend(fontsize=7)
    return _save(fig, path)


def psnr_bars(frames, values, path, threshold=None):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar([str(f) for f in frames], values, color="tab:blue")
    if threshold is not None:
        ax.axhline(threshold, color="tab:red", ls="--", lw=1)
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    return _save(fig, path)


def consistency(reports, path):
    """reports: {label: ConsistencyReport}; per-pair RMSE against t for each gap."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rep in reports.items():
        for gap in sorted({g for _, g, _, _ in rep.pairs}):
            rows = [(t, r) for t, g, r, _ in rep.pairs if g == gap]
            ax.plot([t for t, _ in rows], [r for _, r in rows], marker="o", ms=3, label=f"{label} gap {gap}")
    ax.set_xlabel("frame t")
    ax.set_ylabel("masked warp RMSE")
    ax.legend(fontsize=7)
    return _save(fig, path)


def bench(report, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    names = [r[0] for r in report.rows]
    ax.bar(names, [r[3] / 1e6 for r in report.rows], color=["tab:green", "tab:gray"][:len(names)])
    ax.set_ylabel("M queries / s")
    ax.set_title(f"ratio {report.ratio:.2f}", fontsize=9)
    return _save(fig, path)


def image_strip(images, path, titles=None):
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 1.9), squeeze=False)
    for i, ax in enumerate(axes[0]):
        img = np.asarray(images[i])
        ax.imshow(np.clip(img, 0, 1), cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
        ax.set_axis_off()
        if titles:
            ax.set_title(str(titles[i]), fontsize=7)
    return _save(fig, path)
