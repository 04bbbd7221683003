"""Shared fixtures: tiny rendered datasets and a fast micro architecture."""

import numpy as np
import pytest

from sqrec.dataset import SamplingRanges, generate_dataset, split_dataset
from sqrec.geometry import SuperquadricParams
from sqrec.regressor import ArchitectureConfig, LayerSpec, _conv_block
from sqrec.rendering import RenderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)


@pytest.fixture
def sphere():
    return SuperquadricParams(40.0, 40.0, 40.0, 1.0, 1.0, 128.0, 128.0, 128.0)


def small_render_config(size: int = 32) -> RenderConfig:
    return RenderConfig(width=size, height=size)


@pytest.fixture
def tiny_dataset_factory(tmp_path):
    """Build a small on-disk dataset; returns (manifest, root)."""

    def build(count=12, seed=7, size=32, fractions=(0.5, 0.25, 0.25)):
        root = tmp_path / f"ds_{count}_{seed}_{size}"
        manifest = generate_dataset(count, seed, SamplingRanges(),
                                    small_render_config(size), root)
        if fractions is not None:
            manifest = split_dataset(manifest, fractions, seed)
        return manifest, root

    return build


def micro_arch(size: int = 16) -> ArchitectureConfig:
    """Two conv blocks and a head, small enough for gradient-speed tests."""
    layers = []
    layers += _conv_block(3, 2, 1, 4)
    layers += _conv_block(3, 2, 4, 8)
    side = size // 4
    layers.append(LayerSpec(kind="flatten"))
    layers.append(LayerSpec(kind="dense", in_ch=side * side * 8, out_ch=8))
    return ArchitectureConfig(name=f"micro{size}", input_hw=(size, size), layers=tuple(layers))
