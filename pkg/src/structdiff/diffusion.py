"""Noise schedule, forward noising, the conditioned denoiser, and sampling.

Images live in [-1, 1] inside the diffusion process; corpus images in
[0, 1] are mapped in and out at the boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import init_params


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep coefficients, 1-based: index t runs 1..T."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(self.beta) < 0):
            raise ValueError("beta must be nondecreasing")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.any(self.alpha_bar <= 0) or np.any(self.alpha_bar >= 1):
            raise ValueError("alpha_bar values must lie strictly in (0, 1)")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")
        if self.sigma[0] != 0.0:
            raise ValueError("sigma at the final reverse step (t=1) must be 0")

    def _gather(self, arr: np.ndarray, t) -> torch.Tensor:
        idx = torch.as_tensor(t, dtype=torch.int64) - 1
        if idx.min() < 0 or idx.max() >= self.T:
            raise ValueError(f"timestep out of range 1..{self.T}")
        vals = torch.from_numpy(arr)[idx.reshape(-1)]
        return vals.reshape(idx.shape if idx.ndim else ())

    def coeff(self, name: str, t, like: torch.Tensor) -> torch.Tensor:
        """Schedule value(s) for timestep(s) t, broadcastable against `like`."""
        vals = self._gather(getattr(self, name), t).to(like.dtype)
        if vals.ndim == 0:
            return vals
        return vals.reshape(-1, *([1] * (like.ndim - 1)))


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta interpolation; sigma_t = sqrt(beta_t) except sigma_1 = 0."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0 < beta_start <= beta_end):
        raise ValueError(f"need 0 < beta_start <= beta_end, got {beta_start}, {beta_end}")
    if beta_end >= 1:
        raise ValueError(f"beta_end must be < 1, got {beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    sigma[0] = 0.0
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def forward_noise(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    abar = sched.coeff("alpha_bar", t, x0)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps


def predict_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """Algebraic inverse of forward noising, clamped to the data range [-1, 1]."""
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: x_t {tuple(x_t.shape)} vs eps_hat {tuple(eps_hat.shape)}")
    abar = sched.coeff("alpha_bar", t, x_t)
    x0 = (x_t - torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(abar)
    return x0.clamp(-1.0, 1.0)


def timestep_embedding(t: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / (half - 1))
    args = t.to(dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class Denoiser(nn.Module):
    """Noise predictor conditioned on timestep, edge prior, and text embedding.

    The prior is concatenated channel-wise with x_t; timestep and text
    enter as per-channel biases after the first conv. The final conv is
    zero-initialized so the prediction is exactly 0 at initialization.
    """

    def __init__(self, text_dim: int, hidden: int = 16, time_dim: int = 16):
        super().__init__()
        self.text_dim = text_dim
        self.hidden = hidden
        self.time_dim = time_dim
        self.conv1 = nn.Conv2d(4, hidden, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, hidden)
        self.text_proj = nn.Linear(text_dim, hidden)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv2d(hidden, 3, 3, padding=1)

    def init(self, generator: torch.Generator) -> "Denoiser":
        init_params(self, generator)
        with torch.no_grad():
            self.conv3.weight.zero_()
            self.conv3.bias.zero_()
        return self

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, prior: torch.Tensor,
                text: torch.Tensor) -> torch.Tensor:
        if prior.shape[-2:] != x_t.shape[-2:] or prior.shape[1] != 1:
            raise ValueError(f"prior shape {tuple(prior.shape)} does not match x_t {tuple(x_t.shape)}")
        if text.shape[-1] != self.text_dim:
            raise ValueError(f"text embedding dim {text.shape[-1]} != configured {self.text_dim}")
        t = torch.as_tensor(t, dtype=torch.int64).reshape(-1)
        h = F.silu(self.conv1(torch.cat([x_t, prior], dim=1)))
        temb = self.time_proj(timestep_embedding(t, self.time_dim, dtype=x_t.dtype))
        h = h + temb[:, :, None, None] + self.text_proj(text)[:, :, None, None]
        h = F.silu(self.conv2(h))
        return self.conv3(h)

    def config(self) -> dict:
        return {"text_dim": self.text_dim, "hidden": self.hidden, "time_dim": self.time_dim}


@dataclass
class DiffusionState:
    """x_t plus its timestep; t = 0 marks a finished reverse trajectory."""

    x_t: torch.Tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"timestep must be >= 0, got {self.t}")


def reverse_step(
    state: DiffusionState,
    prior: torch.Tensor,
    text: torch.Tensor,
    model,
    sched: NoiseSchedule,
    z: torch.Tensor,
) -> DiffusionState:
    """One reverse update: mean from the predicted noise, plus sigma_t * z."""
    t = state.t
    if t < 1:
        raise ValueError("sampling already complete (t = 0)")
    if t > sched.T:
        raise ValueError(f"timestep {t} exceeds schedule length {sched.T}")
    x_t = state.x_t
    if z.shape != x_t.shape:
        raise ValueError(f"shape mismatch: z {tuple(z.shape)} vs x_t {tuple(x_t.shape)}")
    eps_hat = model(x_t, torch.full((x_t.shape[0],), t, dtype=torch.int64), prior, text)
    alpha = sched.coeff("alpha", t, x_t)
    abar = sched.coeff("alpha_bar", t, x_t)
    sigma = sched.coeff("sigma", t, x_t)
    mean = (x_t - (1.0 - alpha) / torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(alpha)
    return DiffusionState(x_t=mean + sigma * z, t=t - 1)


def sample(
    prior: torch.Tensor,
    text: torch.Tensor,
    model,
    sched: NoiseSchedule,
    seed: int,
    image_size: int,
) -> torch.Tensor:
    """Full reverse trajectory from seeded Gaussian noise; returns (3, H, W) in [-1, 1]."""
    gen = torch.Generator().manual_seed(seed)
    if prior.ndim == 3:
        prior = prior[None]
    if text.ndim == 1:
        text = text[None]
    shape = (1, 3, image_size, image_size)
    state = DiffusionState(x_t=torch.randn(shape, generator=gen), t=sched.T)
    with torch.no_grad():
        while state.t >= 1:
            z = torch.randn(shape, generator=gen) if state.t > 1 else torch.zeros(shape)
            state = reverse_step(state, prior, text, model, sched, z)
    return state.x_t[0].clamp(-1.0, 1.0)
