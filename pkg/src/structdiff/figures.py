"""Figure rendering for the CLI report paths.

Every figure lands next to its delimited source (CSV/JSON) so a run
directory is self-describing. Agg backend only; nothing here opens a
display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

LOSS_SERIES = ("l_clip", "l_struct", "l_sem", "l_denoise", "l_total")


def loss_curves_figure(log: dict[str, np.ndarray], out_path) -> str:
    """Per-step loss curves from a parsed loss CSV ({column: values})."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    steps = log["step"]
    for name in LOSS_SERIES:
        ax.plot(steps, log[name], label=name, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training losses")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def metrics_figure(report: dict, out_path) -> str:
    """Bar panels for the evaluation report (cosine/SSIM vs FID scales differ)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.5))
    ax1.bar(["clip_score", "ssim"], [report["clip_score"], report["ssim"]], color=["#4878d0", "#6acc64"])
    ax1.set_ylim(-1.0 if report["clip_score"] < 0 else 0.0, 1.05)
    ax1.set_title(f"alignment (n={report['n_items']})")
    ax2.bar(["fid"], [report["fid"]], color="#d65f5f")
    ax2.set_title(f"feature distance ({report['feature_space']})")
    for ax, values in ((ax1, [report["clip_score"], report["ssim"]]), (ax2, [report["fid"]])):
        for i, v in enumerate(values):
            ax.annotate(f"{v:.4f}", (i, v), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def ablation_figure(rows: list[dict], axis: str, out_path) -> str:
    """One panel per metric against the swept axis; error cells are skipped."""
    ok = [r for r in rows if r.get("status", "ok") == "ok"]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    panels = ("clip_score", "fid", "ssim", "final_l_total")
    for ax, key in zip(axes.flat, panels):
        if ok:
            xs = [float(r["axis_value"]) for r in ok]
            ys = [float(r[key]) for r in ok]
            ax.plot(xs, ys, marker="o")
        ax.set_xlabel(axis)
        ax.set_ylabel(key)
    fig.suptitle(f"ablation over {axis}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
