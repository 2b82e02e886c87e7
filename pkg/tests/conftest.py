import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__)), "run_lowbend"))

from lowbend.imaging import generate_triplets, make_dataset  # noqa: E402
from lowbend.loss import LossConfig  # noqa: E402
from lowbend.nn import Autoencoder  # noqa: E402
from lowbend.trainer import Trainer  # noqa: E402

DESK_RESOLUTION = 8
DESK_TRIPLETS = 2000
DESK_HIDDEN = (64, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_run():
    """Train small joint models once per session: (kind, lam, steps, latent_dim, seed)."""
    runs = {}

    def train(kind, lam, steps=3000, latent_dim=8, seed=0):
        key = (kind, lam, steps, latent_dim, seed)
        if key not in runs:
            spec = make_dataset(kind, DESK_RESOLUTION)
            init_seed, data_seed = np.random.SeedSequence(seed).spawn(2)
            width, height, channels = spec.renderer.image_shape()
            model = Autoencoder.create(
                width * height * channels,
                latent_dim,
                np.random.default_rng(init_seed),
                hidden=DESK_HIDDEN,
                lr=1e-3,
            )
            trainer = Trainer(
                model,
                spec,
                LossConfig(spec.epsilon, lam=lam),
                np.random.default_rng(data_seed),
                batch_size=32,
                triplets=generate_triplets(spec, DESK_TRIPLETS, seed),
            )
            runs[key] = (model, spec, trainer.run(steps))
        return runs[key]

    return train
