import numpy as np
import pytest

from textshot.classifier import ClassifierConfig
from textshot.conditioner import ConditionerConfig
from textshot.datagen import MultimodalDataset, MultimodalInstance, SyntheticSpec, generate_dataset
from textshot.encoder import EncoderConfig
from textshot.trainer import init_model

# small but non-degenerate: enough classes/instances for 5-way episodes
SMALL_SPEC = SyntheticSpec(
    n_classes=12,
    instances_per_class=14,
    T=4,
    D_in=10,
    latent_dim=6,
    n_object_variants=3,
    noise_scale=0.4,
    seed=3,
)

SMALL_ENCODER = EncoderConfig(input_dim=10, stage_dims=(12, 16), output_dim=16)
SMALL_CONDITIONER = ConditionerConfig(d_text=32, l_dim=8, hidden_dim=16)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(SMALL_SPEC)


@pytest.fixture
def make_state():
    """Factory for small ModelStates; variant and seed per call."""

    def _make(variant: str = "TNT", seed: int = 0,
              classifier: ClassifierConfig | None = None):
        return init_model(
            SMALL_ENCODER,
            SMALL_CONDITIONER,
            classifier or ClassifierConfig(),
            variant,
            seed,
        )

    return _make


def noise_dataset(n_classes: int = 6, per_class: int = 12, t: int = 4,
                  d: int = 8, seed: int = 0) -> MultimodalDataset:
    """Classes carry no signal at all: pure iid Gaussian frames."""
    rng = np.random.default_rng(seed)
    words = ["alpha", "beta", "gamma", "delta"]
    instances = []
    for c in range(n_classes):
        for j in range(per_class):
            instances.append(
                MultimodalInstance(
                    instance_id=f"n{c}-{j}",
                    class_id=f"noise{c}",
                    frames=rng.normal(size=(t, d)),
                    text=f"{words[int(rng.integers(len(words)))]} "
                         f"{words[int(rng.integers(len(words)))]}",
                )
            )
    return MultimodalDataset(instances)
