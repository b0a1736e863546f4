import numpy as np
import pytest

from syncprompt import (
    PromptConfig,
    PromptedClassifier,
    ToyDataConfig,
    ToyDualEncoder,
    make_two_domain_dataset,
)
from syncprompt.encoders import EncoderSpec


@pytest.fixture(scope="session")
def toy_model():
    return ToyDualEncoder(seed=0, dtype=np.float64)


@pytest.fixture(scope="session")
def small_model():
    visual = EncoderSpec(n_layers=2, embed_dim=16, n_heads=2, output_dim=8, patch_count=4)
    text = EncoderSpec(n_layers=2, embed_dim=16, n_heads=2, output_dim=8, max_tokens=8)
    return ToyDualEncoder(visual, text, seed=0, dtype=np.float64)


@pytest.fixture
def prompt_config():
    return PromptConfig(m1=2, m2=2, n=2, k=4, depth=2, embed_dim_v=32, embed_dim_t=32)


@pytest.fixture
def classifier(toy_model, prompt_config):
    return PromptedClassifier(toy_model, prompt_config, mode="sync-clip", seed=3)


@pytest.fixture(scope="session")
def toy_dataset():
    return make_two_domain_dataset(
        ToyDataConfig(seed=1, synth_per_class=8, val_per_class=2, test_per_class=4)
    )


def random_patches(rng, count=1, patch_count=9, dim=32):
    arr = rng.normal(0.0, 1.0, (count, patch_count, dim))
    return arr[0] if count == 1 else arr
