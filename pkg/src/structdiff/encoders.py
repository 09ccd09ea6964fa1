"""Feature extractors: text encoder, image encoder, Sobel-pyramid structure
features, and the frozen semantic encoder with its pretraining routine.

All learned modules are tiny conv/MLP stacks initialized uniformly in
[-a, a] with a = sqrt(6 / (fan_in + fan_out)) from an explicit generator,
biases zero, so parameter bytes are reproducible from the seed alone.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .scenes import LUMA_WEIGHTS, SOBEL_X, SOBEL_Y
from .text import MAX_CAPTION_LEN, VOCAB, Caption

N_ATTRIBUTE_CLASSES = 12  # 3 shapes x 4 colors of the first object


def init_params(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded uniform init for weights, zeros for biases, in declaration order."""
    for name, p in module.named_parameters():
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in, fan_out = _fans(p)
                bound = (6.0 / (fan_in + fan_out)) ** 0.5
                p.uniform_(-bound, bound, generator=generator)


def _fans(p: torch.Tensor) -> tuple[int, int]:
    if p.ndim == 2:  # linear / embedding table
        return p.shape[1], p.shape[0]
    if p.ndim == 4:  # conv weight (out, in, kh, kw)
        rf = p.shape[2] * p.shape[3]
        return p.shape[1] * rf, p.shape[0] * rf
    raise ValueError(f"no fan rule for parameter of shape {tuple(p.shape)}")


def to_tokens(caption, max_len: int = MAX_CAPTION_LEN) -> torch.Tensor:
    """Normalize Caption / id sequence / tensor into padded (B, max_len) int64."""
    from .text import PAD_ID

    if isinstance(caption, Caption):
        ids = torch.tensor(caption.padded(max_len), dtype=torch.int64)
    elif isinstance(caption, torch.Tensor):
        ids = caption.to(torch.int64)
    else:
        ids = torch.tensor(list(caption), dtype=torch.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.shape[1] < max_len:
        pad = torch.full((ids.shape[0], max_len - ids.shape[1]), PAD_ID, dtype=torch.int64)
        ids = torch.cat([ids, pad], dim=1)
    elif ids.shape[1] > max_len:
        raise ValueError(f"token rows of length {ids.shape[1]} exceed max {max_len}")
    bad = (ids < 0) | (ids >= len(VOCAB))
    if bad.any():
        offending = int(ids[bad][0])
        raise ValueError(f"token id {offending} outside vocabulary of size {len(VOCAB)}")
    return ids


class TextEncoder(nn.Module):
    """Token embedding table, mean-pool over the padded window, 2-layer MLP."""

    def __init__(self, embed_dim: int, vocab_size: int = len(VOCAB), max_len: int = MAX_CAPTION_LEN):
        super().__init__()
        self.embed_dim = embed_dim
        self.max_len = max_len
        self.table = nn.Parameter(torch.empty(vocab_size, embed_dim))
        self.fc1 = nn.Linear(embed_dim, embed_dim)
        self.fc2 = nn.Linear(embed_dim, embed_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        emb = self.table[tokens]          # (B, L, d)
        pooled = emb.mean(dim=1)          # pad embeddings included, so all-pad is legal
        return self.fc2(F.silu(self.fc1(pooled)))

    def config(self) -> dict:
        return {"embed_dim": self.embed_dim, "vocab_size": self.table.shape[0], "max_len": self.max_len}


class ImageEncoder(nn.Module):
    """Two stride-2 convs and a linear head onto the shared embedding space."""

    def __init__(self, embed_dim: int, image_size: int = 32, channels: int = 8):
        super().__init__()
        self.embed_dim = embed_dim
        self.image_size = image_size
        self.channels = channels
        self.conv1 = nn.Conv2d(3, channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels, 2 * channels, 3, stride=2, padding=1)
        flat = 2 * channels * (image_size // 4) ** 2
        self.head = nn.Linear(flat, embed_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(images))
        h = F.silu(self.conv2(h))
        return self.head(h.flatten(1))

    def config(self) -> dict:
        return {"embed_dim": self.embed_dim, "image_size": self.image_size, "channels": self.channels}


class SemanticEncoder(nn.Module):
    """Conv trunk + attribute classifier; the penultimate layer is f(.).

    Must be frozen (via .freeze()) before semantic_features will accept it.
    """

    def __init__(self, feature_dim: int = 32, image_size: int = 32, channels: int = 8):
        super().__init__()
        self.feature_dim = feature_dim
        self.image_size = image_size
        self.channels = channels
        self.frozen = False
        self.conv1 = nn.Conv2d(3, channels, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels, 2 * channels, 3, stride=2, padding=1)
        flat = 2 * channels * (image_size // 4) ** 2
        self.fc = nn.Linear(flat, feature_dim)
        self.classifier = nn.Linear(feature_dim, N_ATTRIBUTE_CLASSES)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(images))
        h = F.silu(self.conv2(h))
        return F.silu(self.fc(h.flatten(1)))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(images))

    def freeze(self) -> "SemanticEncoder":
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self

    def config(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "image_size": self.image_size,
            "channels": self.channels,
            "frozen": self.frozen,
        }


def encode_text(caption, encoder: TextEncoder) -> torch.Tensor:
    """(B, 16) padded tokens (or a single Caption) -> (B, d) embeddings."""
    tokens = to_tokens(caption, encoder.max_len)
    return encoder(tokens)


def encode_image(images, encoder: ImageEncoder) -> torch.Tensor:
    """(B, 3, H, W) images in [0, 1] -> (B, d) embeddings."""
    images = _as_batch(images, 3)
    return encoder(images)


def semantic_features(images, encoder: SemanticEncoder) -> torch.Tensor:
    """Frozen high-level features f(.); gradients flow to the image only."""
    if not encoder.frozen:
        raise ValueError("semantic encoder must be frozen (call .freeze() after pretraining)")
    images = _as_batch(images, 3)
    return encoder.features(images)


def _as_batch(images, channels: int) -> torch.Tensor:
    if not isinstance(images, torch.Tensor):
        images = torch.as_tensor(np.asarray(images))
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[1] != channels:
        raise ValueError(f"expected (B, {channels}, H, W), got shape {tuple(images.shape)}")
    return images


_sobel_cache: dict[torch.dtype, tuple[torch.Tensor, torch.Tensor]] = {}


def _sobel_kernels(dtype: torch.dtype):
    if dtype not in _sobel_cache:
        kx = torch.tensor(SOBEL_X, dtype=dtype).view(1, 1, 3, 3)
        ky = torch.tensor(SOBEL_Y, dtype=dtype).view(1, 1, 3, 3)
        _sobel_cache[dtype] = (kx, ky)
    return _sobel_cache[dtype]


def sobel_magnitude_torch(gray: torch.Tensor) -> torch.Tensor:
    """(B, 1, H, W) -> (B, 1, H, W); replicate borders, differentiable."""
    kx, ky = _sobel_kernels(gray.dtype)
    padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, ky)
    # clamp keeps sqrt'(0) finite; constant inputs still map to ~0 (1e-12)
    return torch.sqrt((gx**2 + gy**2).clamp_min(1e-24))


def structure_features(images) -> torch.Tensor:
    """Parameter-free Sobel pyramid: magnitudes at full/half/quarter resolution.

    Accepts (B, C, H, W) or (C, H, W) with C in {1, 3}, values in [0, 1];
    returns a flat (B, F) stack, differentiable with respect to the input.
    """
    if not isinstance(images, torch.Tensor):
        images = torch.as_tensor(np.asarray(images))
    squeeze = images.ndim == 3
    if squeeze:
        images = images[None]
    if images.ndim != 4 or images.shape[1] not in (1, 3):
        raise ValueError(f"expected 1- or 3-channel images, got shape {tuple(images.shape)}")
    if images.shape[1] == 3:
        r, g, b = LUMA_WEIGHTS
        gray = r * images[:, 0:1] + g * images[:, 1:2] + b * images[:, 2:3]
    else:
        gray = images
    full = sobel_magnitude_torch(gray)
    half = F.avg_pool2d(full, 2)
    quarter = F.avg_pool2d(half, 2)
    feats = torch.cat([full.flatten(1), half.flatten(1), quarter.flatten(1)], dim=1)
    return feats[0] if squeeze else feats


def attribute_class(record_tokens_or_spec) -> int:
    """12-way label (shape * 4 + color) of the scene's first object."""
    from .scenes import SceneSpec
    from .text import COLORS, SHAPES

    spec: SceneSpec = record_tokens_or_spec
    first = spec.objects[0]
    return SHAPES.index(first.shape) * len(COLORS) + COLORS.index(first.color)


def pretrain_semantic_encoder(
    images: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    feature_dim: int = 32,
    image_size: int = 32,
) -> tuple[SemanticEncoder, list[float]]:
    """Train the attribute classifier with plain SGD; returns it frozen.

    `labels` are 12-way attribute classes; raises if the corpus is too small
    or degenerate. The returned batch-loss history covers every step taken.
    """
    if len(images) < 32:
        raise ValueError(f"pretraining corpus too small: {len(images)} < 32 items")
    if len(np.unique(labels)) < 2:
        raise ValueError("pretraining corpus must contain at least 2 attribute classes")
    gen = torch.Generator().manual_seed(seed)
    enc = SemanticEncoder(feature_dim=feature_dim, image_size=image_size)
    init_params(enc, gen)
    x = torch.from_numpy(images)
    y = torch.from_numpy(labels.astype(np.int64))
    history: list[float] = []
    for _ in range(epochs):
        order = torch.randperm(len(x), generator=gen)
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            logits = enc(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            enc.zero_grad()
            loss.backward()
            with torch.no_grad():
                for p in enc.parameters():
                    p -= learning_rate * p.grad
            history.append(float(loss.detach()))
    return enc.freeze(), history


def classifier_accuracy(encoder: SemanticEncoder, images: np.ndarray, labels: np.ndarray) -> float:
    with torch.no_grad():
        logits = encoder(torch.from_numpy(images))
    pred = logits.argmax(dim=1).numpy()
    return float((pred == labels).mean())
