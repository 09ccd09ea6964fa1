"""End-to-end stages: dataset -> pretrain -> train -> sample -> eval.

Each stage is a plain function over (config, paths) so the CLI, the
ablation driver, and tests all share one code path. Report-producing
stages render a matplotlib figure next to their CSV/JSON output.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .config import Config
from .corpus import CorpusManifest, generate_corpus, load_arrays, load_manifest
from .diffusion import build_schedule, sample
from .encoders import attribute_class, classifier_accuracy, encode_text, pretrain_semantic_encoder
from .figures import loss_curves_figure, metrics_figure
from .metrics import EvalResult, evaluate, write_eval_outputs
from .ppm import read_pgm, write_ppm
from .scenes import sample_scene
from .training import (
    derive_seed,
    load_checkpoint,
    load_semantic_checkpoint,
    read_loss_log,
    save_semantic_checkpoint,
    train,
)


def run_dataset(cfg: Config, data_dir, overwrite: bool = False) -> CorpusManifest:
    return generate_corpus(
        count=cfg.corpus_count,
        seed=cfg.seed,
        out_dir=data_dir,
        canvas_size=cfg.canvas_size,
        caption_verbosity=cfg.caption_verbosity,
        caption_len=cfg.caption_len,
        overwrite=overwrite,
    )


def run_pretrain(cfg: Config, data_dir, out_path) -> tuple[str, float]:
    """Fit the attribute classifier on the train split; freeze and save.

    Returns (checkpoint path, eval-split accuracy). Labels are recovered
    from each record's scene seed, which fully determines the scene.
    """
    manifest = load_manifest(data_dir)
    images, _, _ = load_arrays(manifest, data_dir, "train")
    labels = np.array(
        [attribute_class(sample_scene(manifest.canvas_size, manifest.records[i].scene_seed))
         for i in manifest.split_indices("train")],
        dtype=np.int64,
    )
    enc, history = pretrain_semantic_encoder(
        images, labels,
        epochs=cfg.pretrain_epochs,
        learning_rate=cfg.pretrain_learning_rate,
        batch_size=cfg.pretrain_batch_size,
        seed=derive_seed(cfg.seed, "pretrain"),
        feature_dim=cfg.semantic_dim,
        image_size=cfg.canvas_size,
    )
    out_path = os.fspath(out_path)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    save_semantic_checkpoint(out_path, enc, cfg)
    with open(out_path + ".loss.csv", "w") as f:
        f.write("step,loss\n")
        f.writelines(f"{i + 1},{v!r}\n" for i, v in enumerate(history))
    eval_images, _, _ = load_arrays(manifest, data_dir, "eval")
    if len(eval_images):
        eval_labels = np.array(
            [attribute_class(sample_scene(manifest.canvas_size, manifest.records[i].scene_seed))
             for i in manifest.split_indices("eval")],
            dtype=np.int64,
        )
        accuracy = classifier_accuracy(enc, eval_images, eval_labels)
    else:
        accuracy = float("nan")
    return out_path, accuracy


def run_train(cfg: Config, data_dir, semantic_path, out_dir, resume=None) -> str:
    manifest = load_manifest(data_dir)
    semantic = load_semantic_checkpoint(semantic_path)
    final = train(manifest, data_dir, cfg, semantic, out_dir, resume=resume)
    log_path = os.path.join(out_dir, "loss_log.csv")
    if os.path.exists(log_path) and cfg.steps > 0:
        loss_curves_figure(read_loss_log(log_path), os.path.join(out_dir, "loss_curves.png"))
    return final


def run_sample(cfg: Config, data_dir, ckpt_path, out_dir,
               blank_prior: bool = False, count: int | None = None) -> list[str]:
    """Sample the eval split; one PPM plus JSON sidecar per corpus record.

    Per-item seeds derive from (cfg.seed, manifest index), so a blank-prior
    run sees exactly the same noise draws as its true-prior counterpart.
    """
    manifest = load_manifest(data_dir)
    models, _, _ = load_checkpoint(ckpt_path)
    sched = build_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    indices = manifest.split_indices("eval")
    count = cfg.sample_count if count is None else count
    if count is not None:
        indices = indices[:count]
    if not indices:
        raise ValueError("no eval-split records to sample")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    canvas = manifest.canvas_size
    for i in indices:
        rec = manifest.records[i]
        if blank_prior:
            prior = torch.zeros((1, canvas, canvas))
        else:
            prior = torch.from_numpy(read_pgm(os.path.join(data_dir, rec.edge_path)))
        with torch.no_grad():
            text = encode_text(torch.tensor([rec.caption_tokens]), models.text_enc)
        item_seed = derive_seed(cfg.seed, "sample", i)
        img = sample(prior, text[0], models.denoiser, sched, item_seed, canvas)
        img01 = ((img + 1.0) / 2.0).numpy()
        out_path = os.path.join(out_dir, f"sample_{i:05d}.ppm")
        write_ppm(out_path, img01)
        sidecar = {
            "manifest_index": i,
            "seed": item_seed,
            "timesteps": cfg.timesteps,
            "beta_start": cfg.beta_start,
            "beta_end": cfg.beta_end,
            "caption_tokens": list(rec.caption_tokens),
            "caption_text": rec.caption_text,
            "blank_prior": blank_prior,
            "prior_path": None if blank_prior else rec.edge_path,
        }
        with open(out_path + ".json", "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
        written.append(out_path)
    return written


def run_eval(cfg: Config, data_dir, ckpt_path, gen_dir, out_dir) -> EvalResult:
    manifest = load_manifest(data_dir)
    models, _, _ = load_checkpoint(ckpt_path)
    result = evaluate(gen_dir, manifest, data_dir, models)
    write_eval_outputs(result, out_dir)
    metrics_figure(json.loads(result.report.to_json()), os.path.join(out_dir, "metrics.png"))
    return result
