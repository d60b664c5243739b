import numpy as np
import pytest

from relembed.config import RunConfig, validate
from relembed.data import synth_generate


def desk_config(**overrides) -> RunConfig:
    """Small-but-real configuration for fast end-to-end tests."""
    base = dict(
        embed_dim=16,
        branch_hidden=16,
        app_out=12,
        spatial_hidden=12,
        spatial_out=8,
        synth_subjects=4,
        synth_predicates=5,
        synth_objects=6,
        synth_cluster_size=3,
        synth_families=5,
        synth_train_pairs=11,
        synth_test_pairs=2,
        synth_heldout=3,
        synth_heldout_test_pairs=21,
        synth_appearance_dim=12,
    )
    base.update(overrides)
    return validate(RunConfig(**base))


@pytest.fixture(scope="session")
def small_bench():
    """Shared read-only synthetic benchmark (train, test, words, heldout)."""
    cfg = desk_config()
    return cfg, synth_generate(cfg.synth_config(), seed=0)
