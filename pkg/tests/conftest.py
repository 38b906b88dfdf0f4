import numpy as np
import pytest

from physdyn.model import AttributeLayout, ModelConfig
from physdyn.synthetic import WorldConfig, build_synthetic_schema, generate_synthetic_world


@pytest.fixture(scope="session")
def schema():
    return build_synthetic_schema(12)


@pytest.fixture(scope="session")
def small_world():
    """600 trajectories, rendered, shared by data-pipeline tests."""
    return generate_synthetic_world(
        WorldConfig(n_objects=64, n_object_types=12, n_trajectories=600, render=True),
        seed=11,
    )


@pytest.fixture(scope="session")
def tiny_layout():
    return AttributeLayout(sizes=(3, 2, 4))


def tiny_model_config(layout, **overrides):
    """Small but fully wired config for fast model tests."""
    defaults = dict(
        hidden_size=8,
        dropout=0.0,
        encoder_layers=2,
        encoder_heads=2,
        decoder_layers=2,
        decoder_heads=2,
        ffn_size=16,
        n_boxes=3,
        box_dim=5,
    )
    defaults.update(overrides)
    setup = defaults.pop("setup", "base+symbolic")
    return ModelConfig.for_setup(setup, layout, **defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
