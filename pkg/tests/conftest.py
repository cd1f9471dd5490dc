import hypothesis
import numpy as np
import pytest

from hepadet.config import RunConfig
from hepadet.phantoms.generator import PhantomSpec, generate_phantom

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile("fast")

DESK = {
    "seed": 7,
    "net": {"depth": 50, "width_scale": "1/8", "input_size": 64, "conv1_depth": 4},
    "anchors": {"scales": [6, 10, 16], "ratios": [0.5, 1, 2], "strides": [4, 8, 16, 32]},
    "window": {"width": 250, "level": 60},
    "pipeline": {"fused_channels": 8, "hidden": 16, "top_k": 16, "gate_threshold": 0.3, "roi_count": 8},
    "optimizer": {"epochs": 1, "batch_size": 2},
}


@pytest.fixture
def desk_config() -> RunConfig:
    return RunConfig.from_dict(DESK)


@pytest.fixture
def small_spec() -> PhantomSpec:
    return PhantomSpec(dims=(12, 48, 48), lesion_count=(1, 2))


@pytest.fixture
def phantom(small_spec):
    return generate_phantom(small_spec, seed=3, subject_id="subject000")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
