import numpy as np
import pytest
import torch

from structdiff.config import Config
from structdiff.corpus import generate_corpus


@pytest.fixture
def tiny_cfg():
    """Small but fully functional config for pipeline-shaped tests."""
    return Config(
        corpus_count=50,
        canvas_size=16,
        steps=6,
        batch_size=4,
        pretrain_epochs=2,
        pretrain_batch_size=8,
        checkpoint_interval=3,
        embed_dim=8,
        denoiser_hidden=4,
        semantic_dim=8,
        timesteps=10,
        sample_count=3,
        seed=11,
    ).validate()


@pytest.fixture
def tiny_corpus(tmp_path, tiny_cfg):
    data_dir = tmp_path / "data"
    manifest = generate_corpus(
        count=tiny_cfg.corpus_count,
        seed=tiny_cfg.seed,
        out_dir=data_dir,
        canvas_size=tiny_cfg.canvas_size,
    )
    return manifest, data_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)
