"""The training objectives: contrastive, structure, semantic, denoising, total.

All functions accept torch tensors and stay differentiable; scalar Python
floats come out only via LossReport.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .encoders import structure_features

COSINE_GUARD = 1e-12


def scalar(value) -> float:
    """Plain float from a (possibly grad-tracking) 0-d tensor or number."""
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    batch_size: int = 32
    symmetric: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 1.0
    lambda3: float = 0.5

    def __post_init__(self):
        values = (self.lambda1, self.lambda2, self.lambda3)
        if any(v < 0 for v in values):
            raise ValueError(f"loss weights must be nonnegative, got {values}")
        if all(v == 0 for v in values):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossReport:
    l_clip: float
    l_struct: float
    l_sem: float
    l_denoise: float
    l_total: float

    CSV_HEADER = "step,l_clip,l_struct,l_sem,l_denoise,l_total"

    def __post_init__(self):
        for name in ("l_clip", "l_struct", "l_sem", "l_denoise", "l_total"):
            v = getattr(self, name)
            if not (v == v and abs(v) != float("inf")):
                raise ValueError(f"{name} is not finite: {v}")

    def csv_row(self, step: int) -> str:
        return (f"{step},{self.l_clip!r},{self.l_struct!r},{self.l_sem!r},"
                f"{self.l_denoise!r},{self.l_total!r}")

    def recompose(self, w: LossWeights) -> float:
        return (w.lambda1 * self.l_clip + w.lambda2 * self.l_struct
                + w.lambda3 * self.l_sem + self.l_denoise)


def _pair(a, b) -> tuple[torch.Tensor, torch.Tensor]:
    a = a if isinstance(a, torch.Tensor) else torch.as_tensor(a, dtype=torch.float32)
    b = b if isinstance(b, torch.Tensor) else torch.as_tensor(b, dtype=torch.float32)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a, b


def cosine_sim(a, b):
    """Cosine similarity along the last axis with a zero-vector guard."""
    a, b = _pair(a, b)
    num = (a * b).sum(dim=-1)
    den = a.norm(dim=-1).clamp_min(COSINE_GUARD) * b.norm(dim=-1).clamp_min(COSINE_GUARD)
    out = num / den
    return out if out.ndim else float(out)


def _stack(batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch if batch.ndim == 2 else batch[None]
    return torch.stack([v if isinstance(v, torch.Tensor) else torch.as_tensor(v, dtype=torch.float32)
                        for v in batch])


def clip_loss(v_batch, t_batch, cfg: ContrastiveConfig) -> torch.Tensor:
    """InfoNCE over in-batch pairs, image->text direction.

    Row i's positive is t_i; the softmax runs over all t_j in the batch
    (via log_softmax, i.e. with max subtraction). The symmetric flag
    averages in the text->image direction as well.
    """
    v = _stack(v_batch)
    t = _stack(t_batch)
    if v.shape[0] == 0:
        raise ValueError("empty batch")
    if v.shape[0] != t.shape[0]:
        raise ValueError(f"batch size mismatch: {v.shape[0]} images vs {t.shape[0]} texts")
    if v.shape[0] != cfg.batch_size:
        raise ValueError(f"batch of {v.shape[0]} does not match configured N={cfg.batch_size}")
    if v.shape[1] != t.shape[1]:
        raise ValueError(f"dimension mismatch: {v.shape[1]} vs {t.shape[1]}")
    vn = v / v.norm(dim=1, keepdim=True).clamp_min(COSINE_GUARD)
    tn = t / t.norm(dim=1, keepdim=True).clamp_min(COSINE_GUARD)
    logits = (vn @ tn.T) / cfg.temperature
    targets = torch.arange(v.shape[0])
    loss = F.cross_entropy(logits, targets)
    if cfg.symmetric:
        loss = 0.5 * (loss + F.cross_entropy(logits.T, targets))
    return loss


def feature_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of two feature stacks (documented reduction)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def struct_loss(x_hat, prior) -> torch.Tensor:
    """L1 between Sobel-pyramid features of the image and of the prior.

    Both inputs are in [0, 1]; shapes (B, 3, H, W) vs (B, 1, H, W) or unbatched.
    """
    fa = structure_features(x_hat)
    fb = structure_features(prior)
    return feature_l1(fa, fb)


def sem_loss(f_xhat, f_x) -> torch.Tensor:
    """1 - cosine similarity of semantic embeddings; batched rows are averaged."""
    a, b = _pair(f_xhat, f_x)
    sim = cosine_sim(a, b)
    if isinstance(sim, torch.Tensor) and sim.ndim:
        return (1.0 - sim).mean()
    return 1.0 - (sim if isinstance(sim, torch.Tensor) else torch.as_tensor(sim))


def total_loss(l_clip, l_struct, l_sem, l_denoise, w: LossWeights) -> torch.Tensor:
    """Weighted sum of the three objectives plus the base denoising MSE.

    The denoising term always enters at weight 1; it is what gives the
    noise predictor a learning signal and is reported separately.
    """
    parts = {"l_clip": l_clip, "l_struct": l_struct, "l_sem": l_sem, "l_denoise": l_denoise}
    for name, value in parts.items():
        v = scalar(value)
        if v != v:
            raise ValueError(f"loss term {name} is NaN")
    return w.lambda1 * l_clip + w.lambda2 * l_struct + w.lambda3 * l_sem + l_denoise


def make_report(l_clip, l_struct, l_sem, l_denoise, w: LossWeights) -> LossReport:
    total = total_loss(l_clip, l_struct, l_sem, l_denoise, w)
    return LossReport(
        l_clip=scalar(l_clip), l_struct=scalar(l_struct), l_sem=scalar(l_sem),
        l_denoise=scalar(l_denoise), l_total=scalar(total),
    )
