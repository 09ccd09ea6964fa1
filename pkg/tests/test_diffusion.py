import math

import numpy as np
import pytest
import torch

from structdiff.diffusion import (
    Denoiser,
    DiffusionState,
    NoiseSchedule,
    build_schedule,
    forward_noise,
    predict_x0,
    reverse_step,
    sample,
    timestep_embedding,
)


def schedule_from_betas(betas):
    beta = np.asarray(betas, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    sigma[0] = 0.0
    return NoiseSchedule(T=len(beta), beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def zero_model(x_t, t, prior, text):
    return torch.zeros_like(x_t)


def small_denoiser(seed=0, text_dim=8, hidden=4, randomize_head=False):
    model = Denoiser(text_dim=text_dim, hidden=hidden, time_dim=8)
    gen = torch.Generator().manual_seed(seed)
    model.init(gen)
    if randomize_head:
        with torch.no_grad():
            model.conv3.weight.copy_(0.1 * torch.randn(model.conv3.weight.shape, generator=gen))
    return model


# --- schedule ----------------------------------------------------------------


def test_schedule_constant_half_beta():
    sched = build_schedule(2, 0.5, 0.5)
    assert np.allclose(sched.alpha_bar, [0.5, 0.25])
    assert sched.sigma[0] == 0.0
    assert sched.sigma[1] == pytest.approx(math.sqrt(0.5))


@pytest.mark.parametrize("T,b0,b1", [(2, 0.5, 0.5), (10, 0.01, 0.2), (100, 1e-4, 0.02), (7, 0.3, 0.3)])
def test_schedule_invariants(T, b0, b1):
    sched = build_schedule(T, b0, b1)
    assert sched.beta.shape == (T,)
    assert np.all(np.diff(sched.beta) >= 0)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all((sched.alpha_bar > 0) & (sched.alpha_bar < 1))
    assert sched.sigma[0] == 0.0
    assert np.allclose(sched.sigma[1:], np.sqrt(sched.beta[1:]))
    assert np.allclose(sched.alpha, 1.0 - sched.beta)


def test_schedule_final_alpha_bar_log_space_oracle():
    # independent evaluation route: sum of logs instead of running product
    sched = build_schedule(100, 1e-4, 0.02)
    want = np.exp(np.cumsum(np.log1p(-sched.beta)))
    assert np.allclose(sched.alpha_bar, want, rtol=1e-12, atol=0.0)
    assert sched.alpha_bar[-1] == pytest.approx(want[-1], rel=1e-12)


def test_schedule_rejects_bad_bounds():
    with pytest.raises(ValueError, match="T"):
        build_schedule(1, 0.1, 0.2)
    with pytest.raises(ValueError, match="beta"):
        build_schedule(10, 0.0, 0.2)
    with pytest.raises(ValueError, match="beta"):
        build_schedule(10, 0.1, 1.0)
    with pytest.raises(ValueError, match="beta"):
        build_schedule(10, 0.3, 0.2)


def test_schedule_dataclass_guards():
    with pytest.raises(ValueError, match="decreasing"):
        schedule_from_betas([0.2, 1e-9])  # alpha_bar would flatten out


# --- forward process and inversion -------------------------------------------


def test_forward_noise_zero_eps_scales_input(gen):
    sched = build_schedule(10, 0.01, 0.2)
    x0 = torch.rand((2, 3, 8, 8), generator=gen) * 2 - 1
    for t in (1, 5, 10):
        got = forward_noise(x0, t, torch.zeros_like(x0), sched)
        assert torch.allclose(got, math.sqrt(sched.alpha_bar[t - 1]) * x0, atol=1e-7)


def test_forward_noise_hand_case():
    # two steps of beta = 0.2 leave alpha_bar exactly 0.64
    sched = schedule_from_betas([0.2, 0.2])
    x0 = torch.ones((1, 1, 2, 2))
    eps = torch.full_like(x0, 0.5)
    got = forward_noise(x0, 2, eps, sched)
    assert torch.allclose(got, torch.full_like(x0, 1.1), atol=1e-6)
    back = predict_x0(got, eps, 2, sched)
    assert torch.allclose(back, torch.ones_like(x0), atol=1e-6)


def test_forward_noise_shape_mismatch():
    sched = build_schedule(10, 0.01, 0.2)
    with pytest.raises(ValueError, match="shape"):
        forward_noise(torch.zeros((1, 3, 8, 8)), 1, torch.zeros((1, 3, 4, 4)), sched)


def test_predict_x0_round_trip_all_timesteps(gen):
    sched = build_schedule(100, 1e-4, 0.02)
    x0 = torch.rand((4, 3, 8, 8), generator=gen) * 2 - 1  # inside the clamp range
    for t in range(1, sched.T + 1):
        eps = torch.randn(x0.shape, generator=gen)
        x_t = forward_noise(x0, t, eps, sched)
        assert torch.allclose(predict_x0(x_t, eps, t, sched), x0, atol=1e-5)


def test_predict_x0_zero_case_and_clamp():
    sched = build_schedule(10, 0.01, 0.2)
    zero = torch.zeros((1, 3, 4, 4))
    assert torch.all(predict_x0(zero, zero, 5, sched) == 0.0)
    big = torch.full((1, 3, 4, 4), 50.0)
    assert predict_x0(big, torch.zeros_like(big), 10, sched).max() == 1.0


# --- timestep embedding ------------------------------------------------------


def test_timestep_embedding_shape_and_distinctness():
    t = torch.tensor([1, 2, 50, 100])
    emb = timestep_embedding(t, 16)
    assert emb.shape == (4, 16)
    assert emb.dtype == torch.float32
    for i in range(4):
        for j in range(i + 1, 4):
            assert not torch.allclose(emb[i], emb[j])
    assert torch.equal(emb, timestep_embedding(t, 16))
    assert timestep_embedding(t, 16, dtype=torch.float64).dtype == torch.float64


# --- denoiser ----------------------------------------------------------------


def test_denoiser_zero_at_init(gen):
    model = small_denoiser()
    x = torch.randn((2, 3, 8, 8), generator=gen)
    prior = torch.rand((2, 1, 8, 8), generator=gen)
    text = torch.randn((2, 8), generator=gen)
    out = model(x, torch.tensor([1, 2]), prior, text)
    assert out.shape == x.shape
    assert torch.all(out == 0.0)


def test_denoiser_deterministic_and_sensitive(gen):
    model = small_denoiser(randomize_head=True)
    x = torch.randn((1, 3, 8, 8), generator=gen)
    prior = torch.rand((1, 1, 8, 8), generator=gen)
    text = torch.randn((1, 8), generator=gen)
    a = model(x, torch.tensor([3]), prior, text)
    assert torch.equal(a, model(x, torch.tensor([3]), prior, text))
    assert not torch.equal(a, model(x, torch.tensor([7]), prior, text))
    other_prior = torch.rand((1, 1, 8, 8), generator=gen)
    assert not torch.equal(a, model(x, torch.tensor([3]), other_prior, text))


def test_denoiser_validates_conditioning(gen):
    model = small_denoiser()
    x = torch.randn((1, 3, 8, 8), generator=gen)
    with pytest.raises(ValueError, match="prior"):
        model(x, torch.tensor([1]), torch.rand((1, 1, 4, 4), generator=gen), torch.zeros((1, 8)))
    with pytest.raises(ValueError, match="text"):
        model(x, torch.tensor([1]), torch.rand((1, 1, 8, 8), generator=gen), torch.zeros((1, 5)))


# --- reverse process ---------------------------------------------------------


def test_reverse_step_zero_fixture():
    sched = build_schedule(10, 0.01, 0.2)
    zeros = torch.zeros((1, 3, 4, 4))
    state = DiffusionState(x_t=zeros.clone(), t=5)
    nxt = reverse_step(state, zeros[:, :1], torch.zeros((1, 8)), zero_model, sched, zeros)
    assert nxt.t == 4
    assert torch.all(nxt.x_t == 0.0)


def test_reverse_step_is_pure_with_zero_z(gen):
    sched = build_schedule(10, 0.01, 0.2)
    x = torch.randn((1, 3, 4, 4), generator=gen)
    prior = torch.rand((1, 1, 4, 4), generator=gen)
    text = torch.randn((1, 8), generator=gen)
    model = small_denoiser(randomize_head=True)
    z = torch.zeros_like(x)
    a = reverse_step(DiffusionState(x_t=x.clone(), t=3), prior, text, model, sched, z)
    b = reverse_step(DiffusionState(x_t=x.clone(), t=3), prior, text, model, sched, z)
    assert torch.equal(a.x_t, b.x_t)


def test_reverse_step_scalar_hand_case():
    # constant-noise model: the bracket collapses and the update reduces to
    # x_{t-1} = (1 - beta_t) / sqrt(alpha_t) = sqrt(alpha_t) for x_t = 1
    sched = schedule_from_betas([0.01, 0.01])
    x = torch.ones((1, 3, 2, 2))

    def matched_noise(x_t, t, prior, text):
        return torch.full_like(x_t, math.sqrt(1.0 - sched.alpha_bar[1]))

    state = DiffusionState(x_t=x, t=2)
    nxt = reverse_step(state, x[:, :1], torch.zeros((1, 8)), matched_noise, sched, torch.zeros_like(x))
    assert torch.allclose(nxt.x_t, torch.full_like(x, math.sqrt(0.99)), atol=1e-6)
    assert nxt.x_t[0, 0, 0, 0].item() == pytest.approx(0.994987, abs=1e-6)


def test_reverse_step_hand_case_at_published_operating_point():
    # eleven equal betas tuned so alpha_bar_11 = 0.9 while alpha_11 = 0.99:
    # same collapse as above evaluated at that exact (alpha, alpha_bar) pair
    b = 1.0 - (0.9 / 0.99) ** 0.1
    sched = schedule_from_betas([b] * 10 + [0.01])
    assert sched.alpha[10] == pytest.approx(0.99, abs=1e-12)
    assert sched.alpha_bar[10] == pytest.approx(0.9, abs=1e-12)
    x = torch.ones((1, 3, 2, 2))

    def matched_noise(x_t, t, prior, text):
        return torch.full_like(x_t, math.sqrt(1.0 - sched.alpha_bar[10]))  # sqrt(0.1)

    nxt = reverse_step(
        DiffusionState(x_t=x, t=11), x[:, :1], torch.zeros((1, 8)), matched_noise, sched,
        torch.zeros_like(x),
    )
    assert nxt.x_t[0, 0, 0, 0].item() == pytest.approx(0.994987, abs=1e-6)


def test_reverse_step_rejects_finished_and_overflow():
    sched = build_schedule(10, 0.01, 0.2)
    zeros = torch.zeros((1, 3, 4, 4))
    with pytest.raises(ValueError, match="already complete"):
        reverse_step(DiffusionState(x_t=zeros, t=0), zeros[:, :1], torch.zeros((1, 8)),
                     zero_model, sched, zeros)
    with pytest.raises(ValueError, match="exceeds"):
        reverse_step(DiffusionState(x_t=zeros, t=11), zeros[:, :1], torch.zeros((1, 8)),
                     zero_model, sched, zeros)
    with pytest.raises(ValueError, match="shape"):
        reverse_step(DiffusionState(x_t=zeros, t=2), zeros[:, :1], torch.zeros((1, 8)),
                     zero_model, sched, torch.zeros((1, 3, 2, 2)))


def test_state_rejects_negative_timestep():
    with pytest.raises(ValueError, match=">= 0"):
        DiffusionState(x_t=torch.zeros((1, 3, 4, 4)), t=-1)


# --- sampling ----------------------------------------------------------------


def test_sample_deterministic_and_shaped():
    sched = build_schedule(10, 0.01, 0.2)
    model = small_denoiser(randomize_head=True)
    prior = torch.zeros((1, 8, 8))
    text = torch.zeros(8)
    a = sample(prior, text, model, sched, seed=5, image_size=8)
    b = sample(prior, text, model, sched, seed=5, image_size=8)
    assert a.shape == (3, 8, 8)
    assert torch.equal(a, b)
    assert a.min() >= -1.0 and a.max() <= 1.0
    assert not torch.equal(a, sample(prior, text, model, sched, seed=6, image_size=8))


def test_sample_with_oracle_denoiser_recovers_target(gen):
    # a denoiser that always reports the exact noise separating x_t from a
    # fixed target drives the reverse chain onto that target
    sched = build_schedule(50, 1e-4, 0.02)
    target = (torch.rand((1, 3, 8, 8), generator=gen) * 1.6 - 0.8)

    def oracle(x_t, t, prior, text):
        abar = sched.coeff("alpha_bar", int(t[0]), x_t)
        return (x_t - torch.sqrt(abar) * target) / torch.sqrt(1.0 - abar)

    out = sample(torch.zeros((1, 8, 8)), torch.zeros(8), oracle, sched, seed=1, image_size=8)
    mae = (out - target[0]).abs().mean().item()
    assert mae < 0.05


def test_sample_sensitive_to_prior():
    sched = build_schedule(10, 0.01, 0.2)
    model = small_denoiser(randomize_head=True)
    text = torch.zeros(8)
    flat = torch.zeros((1, 8, 8))
    edged = torch.zeros((1, 8, 8))
    edged[:, :, 4:] = 1.0
    a = sample(flat, text, model, sched, seed=5, image_size=8)
    b = sample(edged, text, model, sched, seed=5, image_size=8)
    assert not torch.equal(a, b)
