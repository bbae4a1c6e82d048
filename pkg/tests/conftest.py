from __future__ import annotations

import numpy as np
import pytest

from oodkit.data import Feature, FeatureSchema, SplitSpec, SyntheticSpec, encode, fit_encoding, generate_synthetic, split


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_schema():
    return FeatureSchema((Feature("age"), Feature("gender", "categorical", ("M", "V"))))


@pytest.fixture(scope="session")
def small_encoded():
    """Train/val/test encoded matrices plus a 3-sigma shifted group, 6 continuous + 1 categorical."""
    spec = SyntheticSpec(n_rows=900, n_continuous=6, categorical_levels=(3,), latent_rank=2,
                         shift=(3.0, 3.0, 0, 0, 0, 0), seed=5, n_shifted=200)
    in_dist, shifted = generate_synthetic(spec)
    train, val, test = split(in_dist, SplitSpec((0.7, 0.15, 0.15), 0))
    enc = fit_encoding(train)
    return encode(train, enc), encode(val, enc), encode(test, enc), encode(shifted, enc)
