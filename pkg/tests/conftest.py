"""Shared fixtures: small deterministic configs and datasets."""

import numpy as np
import pytest

from flaming.config import RunConfig
from flaming.synthdata import GenConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_gen_cfg():
    """Small scenes that render fast but still place every actor."""
    return GenConfig(H0=32, W0=48, T_raw=8, actor_min=3, actor_max=4,
                     speed_min=1.7, speed_max=3.0, jitter_amplitude=0.2,
                     seed=0)


@pytest.fixture
def tiny_run_cfg():
    """Model small enough that a forward pass is a few milliseconds."""
    return RunConfig(height=32, width=48, t_raw=8,
                     actor_min=3, actor_max=4,
                     channels=12, tokens=3, blocks=2, heads=2,
                     widths=(6, 8, 12), t_frames=3,
                     epochs=2, batch=2, warmup_epochs=1,
                     lr_peak=1e-3)


@pytest.fixture(scope="session")
def tiny_dataset():
    """16 samples, 2 per class, shared across tests that only read them."""
    cfg = GenConfig(H0=32, W0=48, T_raw=8, actor_min=3, actor_max=4,
                    jitter_amplitude=0.2, seed=7)
    return generate_dataset(cfg, 16)
