"""Procedural scene specs, hard-edged rasterization, captions, edge priors.

Everything here is a pure function of its inputs: no global RNG, no
anti-aliasing, so pixel counts and edge responses have exact oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .text import (
    COLORS,
    FILLERS,
    MAX_CAPTION_LEN,
    MIN_CAPTION_LEN,
    POSITIONS,
    SHAPES,
    SIZES,
    Caption,
    caption_from_words,
)

VERBOSITIES = ("short", "medium", "long")

BACKGROUND = 0.5  # mid-gray, equal in all channels
COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
# half-extent of the object's bounding box as a fraction of the canvas
SIZE_FRACTION = {"small": 3 / 32, "large": 6 / 32}
POSITION_CENTER = {
    "top-left": (0.25, 0.25),
    "top-right": (0.75, 0.25),
    "bottom-left": (0.25, 0.75),
    "bottom-right": (0.75, 0.75),
    "center": (0.5, 0.5),
}

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: str
    position: str

    def __post_init__(self):
        for field, allowed in (
            ("shape", SHAPES), ("color", COLORS), ("size", SIZES), ("position", POSITIONS),
        ):
            value = getattr(self, field)
            if value not in allowed:
                raise ValueError(f"{field} {value!r} not one of {allowed}")


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...]
    canvas_size: int = 32
    seed: int = 0

    def __post_init__(self):
        n = self.canvas_size
        if n < 8 or (n & (n - 1)) != 0:
            raise ValueError(f"canvas_size must be a power of two >= 8, got {n}")
        if not (1 <= len(self.objects) <= 4):
            raise ValueError(f"scene must hold 1..4 objects, got {len(self.objects)}")
        positions = [o.position for o in self.objects]
        if len(set(positions)) != len(positions):
            raise ValueError(f"objects share a position slot: {positions}")
        if not (0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for obj in self.objects:
            x0, y0, x1, y1 = object_bbox(obj, n)
            if x0 < 0 or y0 < 0 or x1 > n or y1 > n:
                raise ValueError(f"object {obj} bounding box {(x0, y0, x1, y1)} leaves the canvas")


@dataclass(frozen=True)
class StructurePrior:
    """Single-channel edge map in [0, 1], same spatial size as the scene image."""

    edge_map: np.ndarray

    def __post_init__(self):
        em = self.edge_map
        if em.ndim != 3 or em.shape[0] != 1:
            raise ValueError(f"edge map must be (1, H, W), got {tuple(em.shape)}")
        if em.min() < 0.0 or em.max() > 1.0:
            raise ValueError("edge map values must lie in [0, 1]")


def object_bbox(obj: ObjectSpec, canvas_size: int) -> tuple[int, int, int, int]:
    cx, cy = POSITION_CENTER[obj.position]
    half = round(SIZE_FRACTION[obj.size] * canvas_size)
    x = round(cx * canvas_size)
    y = round(cy * canvas_size)
    return x - half, y - half, x + half, y + half


def _object_mask(obj: ObjectSpec, canvas_size: int) -> np.ndarray:
    """Boolean inclusion mask: a pixel belongs iff its center satisfies the shape."""
    x0, y0, x1, y1 = object_bbox(obj, canvas_size)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half = (x1 - x0) / 2.0
    ys, xs = np.mgrid[0:canvas_size, 0:canvas_size]
    px = xs + 0.5
    py = ys + 0.5
    if obj.shape == "square":
        return (np.abs(px - cx) <= half) & (np.abs(py - cy) <= half)
    if obj.shape == "circle":
        return (px - cx) ** 2 + (py - cy) ** 2 <= half**2
    # upward triangle: apex at top-center of the bbox, base along the bottom
    inside_y = (py >= cy - half) & (py <= cy + half)
    spread = (py - (cy - half)) / 2.0  # half-width grows linearly toward the base
    return inside_y & (np.abs(px - cx) <= spread)


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Render to a channels-first (3, H, W) float32 image in [0, 1]."""
    n = spec.canvas_size
    img = np.full((3, n, n), BACKGROUND, dtype=np.float32)
    for obj in spec.objects:  # list order = draw order; later objects on top
        mask = _object_mask(obj, n)
        for c, value in enumerate(COLOR_RGB[obj.color]):
            img[c][mask] = value
    return img


def luminance(image: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H, W); single-channel input passes through."""
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {tuple(image.shape)}")
    if image.shape[0] == 1:
        return image[0].astype(np.float64)
    if image.shape[0] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * image[0] + g * image[1] + b * image[2]
    raise ValueError(f"expected 1 or 3 channels, got {image.shape[0]}")


def _conv3x3_replicate(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(gray, 1, mode="edge")
    out = np.zeros_like(gray, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy : dy + gray.shape[0], dx : dx + gray.shape[1]]
    return out


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude with replicate borders, so constant images give zero."""
    gx = _conv3x3_replicate(gray, SOBEL_X)
    gy = _conv3x3_replicate(gray, SOBEL_Y)
    return np.sqrt(gx**2 + gy**2)


def edge_prior(image: np.ndarray) -> StructurePrior:
    """Sobel magnitude of the luminance channel, normalized to peak 1."""
    mag = sobel_magnitude(luminance(image))
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return StructurePrior(edge_map=mag[None].astype(np.float32))


def _filler(spec: SceneSpec, slot: int) -> str:
    return FILLERS[(spec.seed + slot) % len(FILLERS)]


def _long_words(spec: SceneSpec) -> list[str]:
    first = spec.objects[0]
    words = [_filler(spec, 0), first.size, first.color, first.shape, "at", first.position]
    for obj in spec.objects[1:]:
        words += ["and", obj.color, obj.shape]
    return words


def caption_for(spec: SceneSpec, verbosity: str) -> Caption:
    """Grammar-templated caption for the scene.

    short mentions color+shape of the first object, medium adds its size and
    position, long covers every object and opens with a filler adjective.
    """
    if verbosity not in VERBOSITIES:
        raise ValueError(f"verbosity {verbosity!r} not one of {VERBOSITIES}")
    first = spec.objects[0]
    if verbosity == "short":
        words = [first.color, first.shape]
    elif verbosity == "medium":
        words = [first.size, first.color, first.shape, "at", first.position]
    else:
        words = _long_words(spec)
    return caption_from_words(words)


def caption_with_length(spec: SceneSpec, n_tokens: int) -> Caption:
    """Caption with exactly `n_tokens` tokens (end token included).

    Starts from the long template, truncates or pads with filler adjectives.
    Used by the caption-length ablation axis.
    """
    if not (MIN_CAPTION_LEN <= n_tokens <= MAX_CAPTION_LEN):
        raise ValueError(
            f"caption length {n_tokens} outside [{MIN_CAPTION_LEN}, {MAX_CAPTION_LEN}]"
        )
    words = _long_words(spec)
    want = n_tokens - 1  # room for the end token
    if len(words) > want:
        words = words[:want]
    slot = 1
    while len(words) < want:
        words.append(_filler(spec, slot))
        slot += 1
    return caption_from_words(words)


def sample_scene(canvas_size: int, scene_seed: int) -> SceneSpec:
    """Deterministic scene draw: object count, then attributes per object.

    Positions are drawn without replacement so slots never collide.
    """
    rng = np.random.Generator(np.random.PCG64(scene_seed))
    n_objects = int(rng.integers(1, 5))
    slots = rng.permutation(len(POSITIONS))[:n_objects]
    objects = tuple(
        ObjectSpec(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=COLORS[rng.integers(len(COLORS))],
            size=SIZES[rng.integers(len(SIZES))],
            position=POSITIONS[slot],
        )
        for slot in slots
    )
    return SceneSpec(objects=objects, canvas_size=canvas_size, seed=scene_seed)
