# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import CollapsedEncoderError, GradientError, ParameterError, TrainingError
from .geometry import PairSampler
from .imaging import DatasetSpec, Triplet, make_triplet
from .loss import LossConfig, TripletBatch, loss_components, total_loss
from .nn import Autoencoder, save_checkpoint

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "isometry_loss", "flatness_loss", "reconstruction_loss"]


class Trainer:
    """Run Adam on an autoencoder with batches of training triplets.

    Attributes:
        model: The autoencoder being trained.
        dataset: Manifold, renderer and locality radius of the training data.
        loss_cfg: epsilon, lambda, kappa and the training mode.
        triplets: Optional fixed training set; batches are rendered on the fly without it.
        rows: Logged (step, isometry, flatness, reconstruction) values.
        last_good: Copy of the model after the latest finite step, saved on abort.

    Methods:
        next_batch: Draw the next batch of triplets.
        train_step: One optimizer step in the given phase.
        run: Train for `steps` steps (twice that in encoder_first mode).
    """

    def __init__(
        self,
        model: Autoencoder,
        dataset: DatasetSpec,
        loss_cfg: LossConfig,
        rng: np.random.Generator,
        batch_size: int = 128,
        triplets: Optional[Sequence[Triplet]] = None,
        last_good_path: Optional[str] = None,
        log_every: int = 100,
    ):
        loss_cfg.validate(dataset.manifold.uniqueness_bound)
        if batch_size < 1:
            raise ParameterError(f"Batch size must be positive: {batch_size}")
        self.model = model
        self.dataset = dataset
        self.loss_cfg = loss_cfg
        self.rng = rng
        self.batch_size = batch_size
        self.triplets = list(triplets) if triplets is not None else None
        self.last_good_path = last_good_path
        self.log_every = log_every
        self.sampler = PairSampler(dataset.manifold, loss_cfg.epsilon, dataset.circle_only)
        self.rows: List[Tuple[int, float, float, float]] = []
        self.last_good = model.copy()

    def next_batch(self) -> TripletBatch:
        if self.triplets:
            idx = self.rng.integers(0, len(self.triplets), size=self.batch_size)
            return TripletBatch.from_triplets([self.triplets[i] for i in idx])
        spec = self.dataset
        return TripletBatch.from_triplets(
            [
                make_triplet(
                    spec.manifold, spec.renderer, spec.epsilon, self.rng, sampler=self.sampler
                )
                for _ in range(self.batch_size)
            ]
        )

    def _abort(self, step: int, reason: str, cause: Optional[Exception] = None):
        if self.last_good_path:
            save_checkpoint(self.last_good_path, self.last_good)
        raise TrainingError(
            f"Training stopped at step {step}: {reason}", self.last_good_path
        ) from cause

    def _optimizers(self, phase: str):
        model = self.model
        if phase == "encoder":
            return [model.encoder_opt]
        if phase == "decoder":
            return [model.decoder_opt]
        return [model.encoder_opt, model.decoder_opt]

    def train_step(self, step: int, phase: str = "joint") -> Tuple[float, float, float]:
        enc, dec = self.model.encoder, self.model.decoder
        batch = self.next_batch()
        try:
            iso, flat, recon = loss_components(enc, dec, batch, self.loss_cfg)
            values = (float(iso.data), float(flat.data), float(recon.data))
            if not all(math.isfinite(v) for v in values):
                self._abort(step, f"non-finite loss {values}")
            total_loss(enc, dec, batch, self.loss_cfg, phase).backward()
            optimizers = self._optimizers(phase)
            for opt in optimizers:
                if not all(np.all(np.isfinite(g)) for g in opt.net.grads()):
                    raise GradientError(f"Non-finite gradient in the {phase} phase")
            for opt in optimizers:
                opt.step()
        except (GradientError, CollapsedEncoderError) as e:
            self._abort(step, str(e), e)
        finally:
            enc.zero_grad()
            dec.zero_grad()
        self.last_good = self.model.copy()
        return values

    def run(self, steps: int) -> pd.DataFrame:
        if steps < 0:
            raise ParameterError(f"Step count must be nonnegative: {steps}")
        if self.loss_cfg.mode == "joint":
            phases = ["joint"] * steps
        else:
            phases = ["encoder"] * steps + ["decoder"] * steps
        for step, phase in enumerate(phases, start=1):
            values = self.train_step(step, phase)
            self.rows.append((step, *values))
            if step % self.log_every == 0 or step == len(phases):
                log.info(
                    f"step {step} ({phase}): isometry {values[0]:.5g} "
                    f"flatness {values[1]:.5g} reconstruction {values[2]:.5g}"
                )
        return self.log_frame()

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)
