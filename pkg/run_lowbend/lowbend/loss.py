"""Low-bending, low-distortion encoder loss and the reconstruction loss."""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import logging
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import CollapsedEncoderError, ParameterError, ShapeError
from .imaging import Triplet
from .nn import Mlp, Tensor

log = logging.getLogger(__name__)

MODES = ("joint", "encoder_first")
COLLAPSE_TOL = 1e-8


class LossConfig(NamedTuple):
    epsilon: float
    lam: float = 0.0
    kappa: float = 1.0
    mode: str = "joint"

    def validate(self, uniqueness_bound: Optional[float] = None):
        if not self.epsilon > 0:
            raise ParameterError(f"Locality radius must be positive: {self.epsilon}")
        if uniqueness_bound is not None and self.epsilon > uniqueness_bound:
            raise ParameterError(
                f"Locality radius {self.epsilon} exceeds the uniqueness bound {uniqueness_bound}"
            )
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ParameterError(f"Flatness weight must be finite and nonnegative: {self.lam}")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ParameterError(f"Reconstruction weight must be finite and positive: {self.kappa}")
        if self.mode not in MODES:
            raise ParameterError(f"Unknown training mode {self.mode}, use one of {MODES}")


class TripletBatch:
    """Triplets packed into (B, n) arrays plus the distance vector."""

    def __init__(self, x, y, av, dist):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.av = np.asarray(av, dtype=np.float64)
        self.dist = np.asarray(dist, dtype=np.float64).reshape(-1)
        if self.x.ndim != 2 or not self.x.shape == self.y.shape == self.av.shape:
            raise ShapeError("Triplet images must form three (B, n) arrays of equal shape")
        if len(self) == 0:
            raise ParameterError("Empty batch")
        if self.dist.shape != (len(self),):
            raise ShapeError(f"{self.dist.size} distances for {len(self)} triplets")
        if not np.all(self.dist > 0):
            raise ParameterError("All triplet distances must be positive")

    @classmethod
    def from_triplets(cls, triplets: Sequence[Triplet]) -> "TripletBatch":
        if not triplets:
            raise ParameterError("Empty batch")
        return cls(
            [t.img_x.vector() for t in triplets],
            [t.img_y.vector() for t in triplets],
            [t.img_av.vector() for t in triplets],
            [t.dist for t in triplets],
        )

    def __len__(self):
        return self.x.shape[0]


def _check_distance(d):
    if not np.all(np.asarray(d) > 0):
        raise ParameterError(f"Distances must be positive: {d}")


def gamma(v) -> np.ndarray:
    """|v|^2 + |v|^-2 - 2 along the last axis."""
    sq = np.sum(np.square(v), axis=-1)
    if np.any(sq == 0):
        raise CollapsedEncoderError("gamma of a zero vector")
    return np.square(sq - 1.0) / sq


def delta1(fx, fy, d) -> np.ndarray:
    _check_distance(d)
    return (np.asarray(fy) - np.asarray(fx)) / np.asarray(d)[..., None]


def delta2(fx, fy, fav, d) -> np.ndarray:
    _check_distance(d)
    mid = 0.5 * (np.asarray(fx) + np.asarray(fy))
    return 8.0 * (mid - np.asarray(fav)) / np.square(np.asarray(d))[..., None]


def flatness_ratio(d1, d2) -> np.ndarray:
    return np.linalg.norm(d2, axis=-1) / np.linalg.norm(d1, axis=-1)


def _difference_quotients(encoder: Mlp, batch: TripletBatch) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    ex, ey, eav = encoder(batch.x), encoder(batch.y), encoder(batch.av)
    inv_d = (1.0 / batch.dist)[:, None]
    d1 = (ey - ex) * inv_d
    d2 = ((ex + ey) * 0.5 - eav) * (8.0 * inv_d**2)
    return ex, ey, d1, d2


def _isometry_terms(d1: Tensor) -> Tensor:
    sq = (d1 * d1).sum(axis=1)
    smallest = float(np.sqrt(sq.data.min()))
    if smallest < COLLAPSE_TOL:
        raise CollapsedEncoderError(
            f"Encoder collapsed a pair onto one code (|delta1| = {smallest:.3e})"
        )
    return sq + sq**-1.0 - 2.0


def _squared_error(decoder: Mlp, codes, target: np.ndarray) -> Tensor:
    r = decoder(codes) - target
    return (r * r).sum(axis=1)


def loss_components(
    encoder: Mlp, decoder: Mlp, batch: TripletBatch, cfg: LossConfig
) -> Tuple[Tensor, Tensor, Tensor]:
    """Batch means of gamma(delta1), |delta2|^2 and the reconstruction error."""
    ex, ey, d1, d2 = _difference_quotients(encoder, batch)
    iso = _isometry_terms(d1).mean()
    flat = (d2 * d2).sum(axis=1).mean()
    recon = (_squared_error(decoder, ex, batch.x) + _squared_error(decoder, ey, batch.y)).mean()
    return iso, flat, recon


def encoder_loss(encoder: Mlp, batch: TripletBatch, cfg: LossConfig) -> Tensor:
    _, _, d1, d2 = _difference_quotients(encoder, batch)
    return (_isometry_terms(d1) + cfg.lam * (d2 * d2).sum(axis=1)).mean()


def recon_loss(encoder: Mlp, decoder: Mlp, batch: TripletBatch) -> Tensor:
    if decoder.output_width != batch.x.shape[1]:
        raise ShapeError(
            f"Decoder produces {decoder.output_width} values for {batch.x.shape[1]} pixels"
        )
    ex, ey = encoder(batch.x), encoder(batch.y)
    return (_squared_error(decoder, ex, batch.x) + _squared_error(decoder, ey, batch.y)).mean()


def total_loss(
    encoder: Mlp,
    decoder: Mlp,
    batch: TripletBatch,
    cfg: LossConfig,
    phase: str = "encoder",
) -> Tensor:
    """Joint E + kappa R, or the objective of one encoder_first phase.

    In encoder_first mode `phase` selects E ("encoder") or R with the codes
    computed off the tape ("decoder"), so encoder parameters receive no
    gradient in phase two.
    """
    if cfg.mode == "joint":
        return encoder_loss(encoder, batch, cfg) + cfg.kappa * recon_loss(encoder, decoder, batch)
    if phase == "encoder":
        return encoder_loss(encoder, batch, cfg)
    if phase != "decoder":
        raise ParameterError(f"Unknown training phase: {phase}")
    codes_x = Tensor(encoder.predict(batch.x))
    codes_y = Tensor(encoder.predict(batch.y))
    return (_squared_error(decoder, codes_x, batch.x) + _squared_error(decoder, codes_y, batch.y)).mean()
