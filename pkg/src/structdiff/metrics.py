"""Evaluation: mean text-image cosine, Fréchet feature distance, and SSIM.

Feature statistics come from the frozen semantic encoder ("internal"
feature space); generated images are paired with their corpus references
through the per-sample JSON sidecars written at sampling time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import CorpusManifest
from .encoders import encode_image, encode_text, semantic_features
from .losses import cosine_sim
from .ppm import read_ppm
from .scenes import LUMA_WEIGHTS
from .text import MAX_CAPTION_LEN, PAD_ID

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
EIG_CLAMP = 1e-8


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian summary (mean, unbiased covariance, sample count) of a feature set."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 samples for covariance, got {self.count}")
        if self.cov.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean {self.mean.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        eigmin = float(np.linalg.eigvalsh(self.cov).min())
        if eigmin < -EIG_CLAMP:
            raise ValueError(f"covariance has negative eigenvalue {eigmin}")


def feature_stats(features: np.ndarray) -> FeatureStats:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"expected (n, d) features, got shape {feats.shape}")
    if feats.shape[0] < 2:
        raise ValueError(f"need at least 2 samples for covariance, got {feats.shape[0]}")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (feats.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean=mean, cov=cov, count=feats.shape[0])


def _psd_sqrt(mat: np.ndarray, label: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -EIG_CLAMP:
        raise ValueError(f"{label} has negative eigenvalue {vals.min():.3e} beyond tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(p: FeatureStats, q: FeatureStats) -> float:
    """||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^{1/2}), eigendecomposition route."""
    if p.mean.shape != q.mean.shape:
        raise ValueError(f"feature dimension mismatch: {p.mean.shape[0]} vs {q.mean.shape[0]}")
    diff = float(((p.mean - q.mean) ** 2).sum())
    sp = _psd_sqrt(p.cov, "covariance")
    inner = sp @ q.cov @ sp
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < -EIG_CLAMP:
        raise ValueError(f"cross term has negative eigenvalue {vals.min():.3e} beyond tolerance")
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    fid = diff + float(np.trace(p.cov) + np.trace(q.cov)) - 2.0 * trace_sqrt
    return max(fid, 0.0)


def _to_luma(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[0] + g * img[1] + b * img[2]
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (3, H, W) or (H, W) image, got shape {img.shape}")


def ssim(a, b) -> float:
    """Mean SSIM over all 8x8 windows (stride 1, uniform weights) on luminance.

    Inputs in [0, 1]; constants C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range.
    """
    x = _to_luma(a)
    y = _to_luma(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wx = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = np.lib.stride_tricks.sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    vx = (wx**2).mean(axis=(-2, -1)) - mx**2
    vy = (wy**2).mean(axis=(-2, -1)) - my**2
    cxy = (wx * wy).mean(axis=(-2, -1)) - mx * my
    score = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
        (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2))
    return float(score.mean())


def clip_score(v_batch: torch.Tensor, t_batch: torch.Tensor) -> tuple[float, list[float]]:
    """Mean and per-item cosine similarity of paired image/text embeddings."""
    if len(v_batch) == 0:
        raise ValueError("empty batch")
    if len(v_batch) != len(t_batch):
        raise ValueError(f"batch size mismatch: {len(v_batch)} vs {len(t_batch)}")
    sims = cosine_sim(v_batch, t_batch)
    per_item = [float(s) for s in torch.atleast_1d(torch.as_tensor(sims))]
    return float(np.mean(per_item)), per_item


@dataclass(frozen=True)
class MetricReport:
    clip_score: float
    fid: float
    ssim: float
    n_items: int
    feature_space: str = "internal"

    def to_json(self) -> str:
        payload = {
            "clip_score": self.clip_score,
            "fid": self.fid,
            "ssim": self.ssim,
            "n_items": self.n_items,
            "feature_space": self.feature_space,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


BREAKDOWN_HEADER = "manifest_index,clip_score,ssim"


@dataclass
class EvalResult:
    report: MetricReport
    rows: list[tuple[int, float, float]] = field(default_factory=list)


def _load_pairs(gen_dir, manifest: CorpusManifest, corpus_dir):
    """Match generated PPMs to corpus records via their JSON sidecars."""
    names = sorted(n for n in os.listdir(gen_dir) if n.endswith(".ppm"))
    if not names:
        raise ValueError(f"no generated .ppm images found in {gen_dir}")
    pairs = []
    for name in names:
        gen_path = os.path.join(gen_dir, name)
        sidecar = gen_path + ".json"
        if not os.path.exists(sidecar):
            raise ValueError(f"generated image {gen_path} has no sidecar {sidecar}")
        with open(sidecar) as f:
            info = json.load(f)
        idx = int(info["manifest_index"])
        if idx < 0 or idx >= len(manifest.records):
            raise ValueError(f"{sidecar}: manifest_index {idx} out of range")
        record = manifest.records[idx]
        gen_img = read_ppm(gen_path)
        ref_img = read_ppm(os.path.join(corpus_dir, record.image_path))
        pairs.append((idx, gen_img, ref_img, record.caption_tokens))
    return pairs


def evaluate(gen_dir, manifest: CorpusManifest, corpus_dir, models) -> EvalResult:
    """Paired evaluation of a sample directory against its source corpus.

    clip_score: cosine of generated-image vs caption embeddings.
    fid: Fréchet distance between semantic-feature stats of generated and
    paired reference images. ssim: mean paired SSIM.
    """
    pairs = _load_pairs(gen_dir, manifest, corpus_dir)
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 generated images for feature statistics, got {len(pairs)}")
    gen_images = torch.from_numpy(np.stack([p[1] for p in pairs]))
    ref_images = torch.from_numpy(np.stack([p[2] for p in pairs]))
    tokens = torch.tensor(
        [list(p[3]) + [PAD_ID] * (MAX_CAPTION_LEN - len(p[3])) for p in pairs],
        dtype=torch.int64)
    with torch.no_grad():
        v = encode_image(gen_images, models.image_enc)
        t = encode_text(tokens, models.text_enc)
        f_gen = semantic_features(gen_images, models.semantic).numpy()
        f_ref = semantic_features(ref_images, models.semantic).numpy()
    mean_clip, per_clip = clip_score(v, t)
    fid = frechet_distance(feature_stats(f_gen), feature_stats(f_ref))
    per_ssim = [ssim(p[1], p[2]) for p in pairs]
    report = MetricReport(
        clip_score=mean_clip, fid=fid, ssim=float(np.mean(per_ssim)), n_items=len(pairs))
    rows = [(pairs[i][0], per_clip[i], per_ssim[i]) for i in range(len(pairs))]
    return EvalResult(report=report, rows=rows)


def write_eval_outputs(result: EvalResult, out_dir) -> tuple[str, str]:
    """report.json + breakdown.csv; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as f:
        f.write(result.report.to_json() + "\n")
    csv_path = os.path.join(out_dir, "breakdown.csv")
    with open(csv_path, "w") as f:
        f.write(BREAKDOWN_HEADER + "\n")
        for idx, c, s in result.rows:
            f.write(f"{idx},{c!r},{s!r}\n")
    return report_path, csv_path
