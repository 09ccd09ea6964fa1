"""Synthetic corpus generation: paired (image, caption, edge prior) triples.

Every artifact is a pure function of (seed, config); per-scene seeds come
from a seed sequence over (global seed, scene index), so scenes could be
generated in parallel and still land in the manifest in index order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ppm
from .scenes import caption_for, caption_with_length, edge_prior, render_scene, sample_scene

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class CorpusRecord:
    image_path: str
    edge_path: str
    caption_text: str
    caption_tokens: list[int]
    split: str
    scene_seed: int


@dataclass
class CorpusManifest:
    canvas_size: int
    seed: int
    count: int
    caption_verbosity: str
    caption_len: int | None
    records: list[CorpusRecord] = field(default_factory=list)

    def split_indices(self, split: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.split == split]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        data = json.loads(text)
        records = [CorpusRecord(**r) for r in data.pop("records")]
        return cls(records=records, **data)


def scene_seed_for(seed: int, index: int) -> int:
    ss = np.random.SeedSequence([seed, index])
    return int(ss.generate_state(1, np.uint64)[0])


def split_for(index: int) -> str:
    """Fixed 90/10 assignment: every tenth scene is held out."""
    return "eval" if index % 10 == 9 else "train"


def generate_corpus(
    count: int,
    seed: int,
    out_dir,
    canvas_size: int = 32,
    caption_verbosity: str = "long",
    caption_len: int | None = None,
    overwrite: bool = False,
) -> CorpusManifest:
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    out_dir = os.fspath(out_dir)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path) and not overwrite:
        raise FileExistsError(f"{manifest_path} already exists; pass overwrite to replace it")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "edges"), exist_ok=True)

    manifest = CorpusManifest(
        canvas_size=canvas_size,
        seed=seed,
        count=count,
        caption_verbosity=caption_verbosity,
        caption_len=caption_len,
    )
    for i in range(count):
        s = scene_seed_for(seed, i)
        spec = sample_scene(canvas_size, s)
        image = render_scene(spec)
        prior = edge_prior(image)
        if caption_len is None:
            caption = caption_for(spec, caption_verbosity)
        else:
            caption = caption_with_length(spec, caption_len)
        image_rel = f"images/scene_{i:05d}.ppm"
        edge_rel = f"edges/scene_{i:05d}.pgm"
        try:
            ppm.write_ppm(os.path.join(out_dir, image_rel), image)
            ppm.write_pgm(os.path.join(out_dir, edge_rel), prior.edge_map)
        except OSError as exc:
            raise OSError(f"failed writing corpus files under {out_dir}: {exc}") from exc
        manifest.records.append(
            CorpusRecord(
                image_path=image_rel,
                edge_path=edge_rel,
                caption_text=caption.raw_text,
                caption_tokens=list(caption.tokens),
                split=split_for(i),
                scene_seed=s,
            )
        )
    try:
        with open(manifest_path, "w") as f:
            f.write(manifest.to_json())
    except OSError as exc:
        raise OSError(f"failed writing {manifest_path}: {exc}") from exc
    return manifest


def load_manifest(corpus_dir) -> CorpusManifest:
    path = os.path.join(os.fspath(corpus_dir), MANIFEST_NAME)
    with open(path) as f:
        return CorpusManifest.from_json(f.read())


def load_arrays(manifest: CorpusManifest, corpus_dir, split: str | None = None):
    """Materialize (images, tokens, priors) float32/int64 arrays for training.

    images: (n, 3, H, W) in [0, 1]; tokens: (n, 16) padded; priors: (n, 1, H, W).
    """
    from .text import MAX_CAPTION_LEN, PAD_ID

    corpus_dir = os.fspath(corpus_dir)
    indices = range(len(manifest.records)) if split is None else manifest.split_indices(split)
    images, tokens, priors = [], [], []
    for i in indices:
        rec = manifest.records[i]
        images.append(ppm.read_ppm(os.path.join(corpus_dir, rec.image_path)))
        priors.append(ppm.read_pgm(os.path.join(corpus_dir, rec.edge_path)))
        row = list(rec.caption_tokens) + [PAD_ID] * (MAX_CAPTION_LEN - len(rec.caption_tokens))
        tokens.append(row)
    n = len(images)
    if n == 0:
        h = manifest.canvas_size
        return (
            np.zeros((0, 3, h, h), np.float32),
            np.zeros((0, MAX_CAPTION_LEN), np.int64),
            np.zeros((0, 1, h, h), np.float32),
        )
    return (
        np.stack(images).astype(np.float32),
        np.asarray(tokens, dtype=np.int64),
        np.stack(priors).astype(np.float32),
    )
