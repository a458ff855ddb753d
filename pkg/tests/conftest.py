"""Shared fixtures: a small rendered dataset and tiny model bundles."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from patchlift.config import resolve_config
from patchlift.models import create_bundle
from patchlift.synthdata.dataset import generate_dataset

TINY_MODEL = {"base_width": 8, "cond_width": 4, "semantic_dim": 32, "time_dim": 16}
MICRO_MODEL = {"base_width": 2, "cond_width": 2, "semantic_dim": 8, "time_dim": 8}


def small_data_config(n: int = 24, size: int = 32, **extra) -> dict:
    overrides = {
        "data.n_samples": n,
        "data.image_size": size,
        "data.test_fraction": 0.25,
        "diffusion.timesteps": 1000,
    }
    overrides.update(extra)
    return resolve_config({}, overrides)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """24-sample 32x32 dataset reused across test modules."""
    root = tmp_path_factory.mktemp("dataset")
    cfg = small_data_config()
    manifest = generate_dataset(cfg, root, seed=7)
    return cfg, manifest


@pytest.fixture()
def tiny_bundle():
    return create_bundle(TINY_MODEL, seed=0)


@pytest.fixture()
def micro_bundle():
    return create_bundle(MICRO_MODEL, seed=0)


def rand_image(shape, seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


def rand_tensor(shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=gen)


def binary_mask(shape, seed=0, fill=0.4):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(shape, generator=gen) < fill).float()
