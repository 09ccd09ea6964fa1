"""Joint training of encoders and denoiser against the weighted total loss.

Determinism contract: one torch.Generator drives every stochastic draw, in
a fixed order per step (batch indices, then timesteps, then noise), and its
state rides along in checkpoints, so a resumed run replays the exact byte
sequence of an uninterrupted one. Plain SGD, no optimizer state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import Config
from .corpus import CorpusManifest, load_arrays
from .diffusion import Denoiser, NoiseSchedule, build_schedule, forward_noise, predict_x0
from .encoders import (
    ImageEncoder,
    SemanticEncoder,
    TextEncoder,
    encode_image,
    encode_text,
    init_params,
    semantic_features,
    structure_features,
)
from .losses import (
    ContrastiveConfig,
    LossReport,
    LossWeights,
    clip_loss,
    scalar,
    sem_loss,
    struct_loss,
    total_loss,
)

_SEED_TAGS = {"init": 0, "train": 1, "pretrain": 2, "sample": 3}


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Stable per-purpose seed stream derived from the run seed."""
    ss = np.random.SeedSequence([seed, _SEED_TAGS[tag], index])
    return int(ss.generate_state(1, np.uint64)[0]) & ((1 << 63) - 1)


@dataclass
class Models:
    text_enc: TextEncoder
    image_enc: ImageEncoder
    denoiser: Denoiser
    semantic: SemanticEncoder | None = None

    def trainable(self):
        for module in (self.text_enc, self.image_enc, self.denoiser):
            yield from module.parameters()

    def zero_grad(self):
        for module in (self.text_enc, self.image_enc, self.denoiser):
            module.zero_grad()


def build_models(cfg: Config, semantic: SemanticEncoder | None = None) -> Models:
    """Seeded construction; generator is consumed in text, image, denoiser order."""
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "init"))
    text_enc = TextEncoder(cfg.embed_dim)
    init_params(text_enc, gen)
    image_enc = ImageEncoder(cfg.embed_dim, image_size=cfg.canvas_size)
    init_params(image_enc, gen)
    denoiser = Denoiser(cfg.embed_dim, hidden=cfg.denoiser_hidden).init(gen)
    return Models(text_enc=text_enc, image_enc=image_enc, denoiser=denoiser, semantic=semantic)


def compute_losses(models: Models, sched: NoiseSchedule, cfg: Config,
                   images01: torch.Tensor, tokens: torch.Tensor, priors: torch.Tensor,
                   t: torch.Tensor, eps: torch.Tensor):
    """Assemble every loss term for one batch; returns differentiable scalars."""
    x0 = images01 * 2.0 - 1.0
    x_t = forward_noise(x0, t, eps, sched)
    text_emb = encode_text(tokens, models.text_enc)
    eps_hat = models.denoiser(x_t, t, priors, text_emb)
    l_denoise = ((eps_hat - eps) ** 2).mean()
    x0_hat01 = (predict_x0(x_t, eps_hat, t, sched) + 1.0) / 2.0
    v = encode_image(images01, models.image_enc)
    ccfg = ContrastiveConfig(temperature=cfg.temperature, batch_size=images01.shape[0],
                             symmetric=cfg.symmetric_contrastive)
    l_clip = clip_loss(v, text_emb, ccfg)
    l_struct = struct_loss(x0_hat01, priors)
    f_gen = semantic_features(x0_hat01, models.semantic)
    f_real = semantic_features(images01, models.semantic)
    l_sem = sem_loss(f_gen, f_real)
    return l_clip, l_struct, l_sem, l_denoise


def train_step(batch, models: Models, sched: NoiseSchedule, cfg: Config,
               gen: torch.Generator) -> LossReport:
    """One SGD step. Draw order from `gen`: timesteps, then noise."""
    images01, tokens, priors = batch
    n = images01.shape[0]
    t = torch.randint(1, sched.T + 1, (n,), generator=gen)
    eps = torch.randn(images01.shape, generator=gen)
    weights = LossWeights(cfg.lambda1, cfg.lambda2, cfg.lambda3)
    l_clip, l_struct, l_sem, l_denoise = compute_losses(
        models, sched, cfg, images01, tokens, priors, t, eps)
    total = total_loss(l_clip, l_struct, l_sem, l_denoise, weights)  # raises on NaN
    report = LossReport(l_clip=scalar(l_clip), l_struct=scalar(l_struct), l_sem=scalar(l_sem),
                        l_denoise=scalar(l_denoise), l_total=scalar(total))
    models.zero_grad()
    total.backward()
    if models.semantic is not None:
        for name, p in models.semantic.named_parameters():
            if p.grad is not None and float(p.grad.abs().max()) != 0.0:
                raise RuntimeError(f"internal error: frozen semantic parameter {name} received gradient")
    with torch.no_grad():
        for p in models.trainable():
            if p.grad is not None:
                p -= cfg.learning_rate * p.grad
    return report


def save_checkpoint(path, models: Models, step: int, gen: torch.Generator, cfg: Config) -> None:
    arrays = (ckpt.module_arrays("text", models.text_enc)
              + ckpt.module_arrays("image", models.image_enc)
              + ckpt.module_arrays("denoiser", models.denoiser)
              + ckpt.module_arrays("semantic", models.semantic))
    arrays.append(("rng_state", gen.get_state().numpy().astype(np.uint8)))
    meta = {
        "step": step,
        "optimizer": "sgd",
        "text": models.text_enc.config(),
        "image": models.image_enc.config(),
        "denoiser": models.denoiser.config(),
        "semantic": models.semantic.config(),
        "frozen": ["semantic"],
    }
    ckpt.save_container(path, arrays, meta)
    ckpt.write_sidecar(path, cfg.to_dict(), cfg.seed)


def load_checkpoint(path) -> tuple[Models, int, torch.Tensor]:
    """Rebuild the model bundle; returns (models, step, rng state tensor)."""
    arrays, meta = ckpt.load_container(path)
    text_enc = TextEncoder(meta["text"]["embed_dim"], vocab_size=meta["text"]["vocab_size"],
                           max_len=meta["text"]["max_len"])
    image_enc = ImageEncoder(meta["image"]["embed_dim"], image_size=meta["image"]["image_size"],
                             channels=meta["image"]["channels"])
    denoiser = Denoiser(meta["denoiser"]["text_dim"], hidden=meta["denoiser"]["hidden"],
                        time_dim=meta["denoiser"]["time_dim"])
    semantic = SemanticEncoder(feature_dim=meta["semantic"]["feature_dim"],
                               image_size=meta["semantic"]["image_size"],
                               channels=meta["semantic"]["channels"])
    ckpt.load_module_arrays("text", text_enc, arrays)
    ckpt.load_module_arrays("image", image_enc, arrays)
    ckpt.load_module_arrays("denoiser", denoiser, arrays)
    ckpt.load_module_arrays("semantic", semantic, arrays)
    semantic.freeze()
    models = Models(text_enc=text_enc, image_enc=image_enc, denoiser=denoiser, semantic=semantic)
    rng_state = torch.from_numpy(arrays["rng_state"])
    return models, int(meta["step"]), rng_state


def save_semantic_checkpoint(path, encoder: SemanticEncoder, cfg: Config) -> None:
    meta = {"kind": "semantic", "semantic": encoder.config()}
    ckpt.save_container(path, ckpt.module_arrays("semantic", encoder), meta)
    ckpt.write_sidecar(path, cfg.to_dict(), cfg.seed)


def load_semantic_checkpoint(path) -> SemanticEncoder:
    arrays, meta = ckpt.load_container(path)
    enc = SemanticEncoder(feature_dim=meta["semantic"]["feature_dim"],
                          image_size=meta["semantic"]["image_size"],
                          channels=meta["semantic"]["channels"])
    ckpt.load_module_arrays("semantic", enc, arrays)
    return enc.freeze()


def train(
    manifest: CorpusManifest,
    corpus_dir,
    cfg: Config,
    semantic: SemanticEncoder,
    out_dir,
    resume=None,
) -> str:
    """Run cfg.steps SGD steps over seeded minibatches; returns the final
    checkpoint path. Writes interval checkpoints and the per-step loss CSV."""
    if not semantic.frozen:
        raise ValueError("semantic encoder must be frozen before training")
    images_np, tokens_np, priors_np = load_arrays(manifest, corpus_dir, "train")
    if len(images_np) == 0:
        raise ValueError("training corpus is empty")
    images = torch.from_numpy(images_np)
    tokens = torch.from_numpy(tokens_np)
    priors = torch.from_numpy(priors_np)
    sched = build_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    gen = torch.Generator()
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss_log.csv")
    if resume is not None:
        # the frozen semantic copy travels inside the checkpoint
        models, start_step, rng_state = load_checkpoint(resume)
        gen.set_state(rng_state)
        log_mode = "a" if os.path.exists(log_path) else "w"
    else:
        models = build_models(cfg, semantic=semantic)
        gen.manual_seed(derive_seed(cfg.seed, "train"))
        start_step = 0
        log_mode = "w"
    semantic_before = [p.detach().clone() for p in models.semantic.parameters()]

    with open(log_path, log_mode) as log:
        if log_mode == "w":
            log.write(LossReport.CSV_HEADER + "\n")
        for step in range(start_step + 1, cfg.steps + 1):
            idx = torch.randint(0, len(images), (cfg.batch_size,), generator=gen)
            batch = (images[idx], tokens[idx], priors[idx])
            report = train_step(batch, models, sched, cfg, gen)
            log.write(report.csv_row(step) + "\n")
            if step % cfg.checkpoint_interval == 0 and step != cfg.steps:
                save_checkpoint(os.path.join(out_dir, f"ckpt_step_{step:06d}.ckpt"),
                                models, step, gen, cfg)

    for before, after in zip(semantic_before, models.semantic.parameters()):
        if not torch.equal(before, after):
            raise RuntimeError("internal error: frozen semantic encoder changed during training")
    final_path = os.path.join(out_dir, "final.ckpt")
    save_checkpoint(final_path, models, cfg.steps, gen, cfg)
    return final_path


def read_loss_log(path) -> dict[str, np.ndarray]:
    rows = np.genfromtxt(path, delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    return {name: np.asarray(rows[name], dtype=np.float64) for name in rows.dtype.names}


# ---------------------------------------------------------------------------
# Gradient verification


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)


def _fd_check(params: list[torch.Tensor], closure) -> tuple[float, int]:
    """Central finite differences against autograd, float64.

    Step h = 1e-5 * max(1, |theta|) per coordinate; returns (max relative
    error, number of coordinates checked).
    """
    loss = closure()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    worst = 0.0
    count = 0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                h = 1e-5 * max(1.0, abs(orig))
                flat[i] = orig + h
                up = float(closure())
                flat[i] = orig - h
                down = float(closure())
                flat[i] = orig
                fd = (up - down) / (2.0 * h)
                worst = max(worst, _rel_error(float(gflat[i]), fd))
                count += 1
    return worst, count


class _MicroSetting:
    """Shared <=5k-parameter float64 instance for every gradcheck component.

    The operating point is chosen away from the predict_x0 clamp (small
    timesteps, images in [0.25, 0.75]) so the graph is smooth around it.
    """

    def __init__(self):
        self.cfg = Config(
            canvas_size=8, embed_dim=8, denoiser_hidden=4, semantic_dim=8,
            timesteps=10, batch_size=2, temperature=0.5, corpus_count=0,
        )
        torch.set_default_dtype(torch.float64)
        try:
            gen = torch.Generator().manual_seed(1234)
            self.text_enc = TextEncoder(8)
            init_params(self.text_enc, gen)
            self.image_enc = ImageEncoder(8, image_size=8, channels=2)
            init_params(self.image_enc, gen)
            self.denoiser = Denoiser(8, hidden=4, time_dim=4).init(gen)
            # gradcheck wants a generic point, not the zero-initialized one
            init_params(self.denoiser, gen)
            self.semantic = SemanticEncoder(feature_dim=8, image_size=8, channels=2)
            init_params(self.semantic, gen)
            self.semantic.freeze()
            self.sched = build_schedule(self.cfg.timesteps, 1e-4, 0.02)
            self.images = 0.25 + 0.5 * torch.rand((2, 3, 8, 8), generator=gen)
            self.priors = torch.rand((2, 1, 8, 8), generator=gen)
            self.tokens = torch.randint(0, 20, (2, 16), generator=gen)
            self.t = torch.tensor([2, 3])
            self.eps = 0.1 * torch.randn((2, 3, 8, 8), generator=gen)
            self.mix = {}  # fixed projections turning vector outputs into scalars
            for name, dim in (("text", 8), ("image", 8), ("semantic", 8)):
                self.mix[name] = torch.randn(dim, generator=gen)
            self.mix["denoiser"] = torch.randn((2, 3, 8, 8), generator=gen)
        finally:
            torch.set_default_dtype(torch.float32)

    def models(self) -> Models:
        return Models(text_enc=self.text_enc, image_enc=self.image_enc,
                      denoiser=self.denoiser, semantic=self.semantic)


GRADCHECK_COMPONENTS = (
    "identity", "text_encoder", "image_encoder", "denoiser",
    "structure_features", "semantic_features", "total_loss",
)


def gradcheck(component: str = "all", tolerance: float = 1e-4) -> dict:
    """Compare analytic gradients with central finite differences (float64).

    Returns {component: {"max_rel_error", "n_checks", "passed"}}; failures
    are report entries, never exceptions.
    """
    names = GRADCHECK_COMPONENTS if component == "all" else (component,)
    for name in names:
        if name not in GRADCHECK_COMPONENTS:
            raise ValueError(f"unknown gradcheck component {name!r}; "
                             f"choose from {GRADCHECK_COMPONENTS} or 'all'")
    ms = _MicroSetting()
    report = {}
    for name in names:
        params, closure = _component_case(ms, name)
        err, count = _fd_check(params, closure)
        report[name] = {"max_rel_error": err, "n_checks": count, "passed": bool(err < tolerance)}
    return report


def _component_case(ms: _MicroSetting, name: str):
    if name == "identity":
        # small operating point keeps the central-difference cancellation
        # noise orders of magnitude under the 1e-10 bar for a linear map
        theta = 0.01 * torch.randn(16, dtype=torch.float64,
                                   generator=torch.Generator().manual_seed(7))
        theta.requires_grad_(True)
        coeffs = torch.arange(1.0, 17.0, dtype=torch.float64)
        return [theta], lambda: (theta * coeffs).sum()
    if name == "text_encoder":
        params = list(ms.text_enc.parameters())
        return params, lambda: (encode_text(ms.tokens, ms.text_enc) * ms.mix["text"]).sum()
    if name == "image_encoder":
        params = list(ms.image_enc.parameters())
        return params, lambda: (encode_image(ms.images, ms.image_enc) * ms.mix["image"]).sum()
    if name == "denoiser":
        params = list(ms.denoiser.parameters())
        text = ms.mix["text"].expand(2, -1)
        return params, lambda: (
            ms.denoiser(ms.images * 2 - 1, ms.t, ms.priors, text) * ms.mix["denoiser"]).sum()
    if name == "structure_features":
        x = ms.images.clone().requires_grad_(True)
        return [x], lambda: structure_features(x).abs().sum()
    if name == "semantic_features":
        x = ms.images.clone().requires_grad_(True)
        return [x], lambda: (semantic_features(x, ms.semantic) * ms.mix["semantic"]).sum()
    if name == "total_loss":
        models = ms.models()
        params = list(models.trainable())

        def closure():
            l_clip, l_struct, l_sem, l_denoise = compute_losses(
                models, ms.sched, ms.cfg, ms.images, ms.tokens, ms.priors, ms.t, ms.eps)
            w = LossWeights(ms.cfg.lambda1, ms.cfg.lambda2, ms.cfg.lambda3)
            return (w.lambda1 * l_clip + w.lambda2 * l_struct
                    + w.lambda3 * l_sem + l_denoise)

        return params, closure
    raise AssertionError(name)
