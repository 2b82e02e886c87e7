import os

import numpy as np
import pandas as pd
import pytest

from lowbend import trainer as trainer_module
from lowbend.evaluate import interp_errors, smooth
from lowbend.exceptions import ParameterError, TrainingError
from lowbend.geometry import sample_pair
from lowbend.imaging import make_dataset, make_triplet
from lowbend.loss import LossConfig
from lowbend.nn import Autoencoder, load_checkpoint
from lowbend.trainer import LOG_COLUMNS, Trainer


def flat_trainer(seed=0, mode="joint", lr=1e-3, **kwargs):
    spec = make_dataset("flat_square")
    init_rng, data_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    model = Autoencoder.create(2, 2, init_rng, hidden=(32, 16), lr=lr)
    cfg = LossConfig(spec.epsilon, lam=1.0, mode=mode)
    return Trainer(model, spec, cfg, data_rng, batch_size=32, **kwargs)


def test_zero_steps_keep_initialization():
    trainer = flat_trainer()
    before = [p.copy() for p in trainer.model.encoder.arrays()]
    log = trainer.run(0)
    assert list(log.columns) == LOG_COLUMNS
    assert len(log) == 0
    for a, b in zip(before, trainer.model.encoder.arrays()):
        np.testing.assert_array_equal(a, b)


def test_joint_training_logs_every_step():
    log = flat_trainer().run(20)
    assert log["step"].tolist() == list(range(1, 21))
    assert np.all(np.isfinite(log[LOG_COLUMNS[1:]].to_numpy()))


def test_encoder_first_runs_two_phases():
    trainer = flat_trainer(mode="encoder_first")
    assert len(trainer.run(5)) == 10


def test_decoder_phase_keeps_encoder_fixed():
    trainer = flat_trainer(mode="encoder_first")
    enc_before = [p.copy() for p in trainer.model.encoder.arrays()]
    dec_before = [p.copy() for p in trainer.model.decoder.arrays()]
    trainer.train_step(1, "decoder")
    for a, b in zip(enc_before, trainer.model.encoder.arrays()):
        np.testing.assert_array_equal(a, b)
    assert any(np.any(a != b) for a, b in zip(dec_before, trainer.model.decoder.arrays()))
    assert all(p.requires_grad for p in trainer.model.encoder.params)


def test_training_is_deterministic():
    pd.testing.assert_frame_equal(flat_trainer(seed=4).run(10), flat_trainer(seed=4).run(10))


def test_fixed_training_set(rng):
    spec = make_dataset("flat_square")
    triplets = [make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng) for _ in range(20)]
    assert len(flat_trainer(triplets=triplets).run(3)) == 3


def test_non_finite_loss_stops_with_checkpoint(tmp_path):
    path = str(tmp_path / "last-good.lblm")
    trainer = flat_trainer(last_good_path=path)
    trainer.run(2)
    good = [p.copy() for p in trainer.model.encoder.arrays() + trainer.model.decoder.arrays()]
    trainer.model.encoder.params[0].data[0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        trainer.run(3)
    assert info.value.checkpoint_path == path
    assert os.path.exists(path)
    saved = load_checkpoint(path)
    assert saved.encoder.spec.widths == (2, 32, 16, 2)
    arrays = saved.encoder.arrays() + saved.decoder.arrays()
    assert all(np.all(np.isfinite(a)) for a in arrays)
    for a, b in zip(good, arrays):
        np.testing.assert_array_equal(a, b)
    assert saved.encoder_opt.state.step == 2


def test_non_finite_gradient_updates_neither_network(tmp_path, monkeypatch):
    path = str(tmp_path / "last-good.lblm")
    trainer = flat_trainer(last_good_path=path)
    dec = trainer.model.decoder
    monkeypatch.setattr(dec, "grads", lambda: [np.full_like(p.data, np.nan) for p in dec.params])
    before = [p.copy() for p in trainer.model.encoder.arrays()]
    with pytest.raises(TrainingError):
        trainer.train_step(1)
    for a, b in zip(before, trainer.model.encoder.arrays()):
        np.testing.assert_array_equal(a, b)
    assert trainer.model.encoder_opt.state.step == 0
    assert all(np.all(np.isfinite(a)) for a in load_checkpoint(path).decoder.arrays())


def test_training_uses_the_total_loss(monkeypatch):
    calls = []
    real = trainer_module.total_loss

    def recording(encoder, decoder, batch, cfg, phase="encoder"):
        calls.append(phase)
        return real(encoder, decoder, batch, cfg, phase)

    monkeypatch.setattr(trainer_module, "total_loss", recording)
    flat_trainer(mode="encoder_first").run(2)
    assert calls == ["encoder", "encoder", "decoder", "decoder"]


def test_collapsed_encoder_stops_training():
    trainer = flat_trainer()
    for p in trainer.model.encoder.params:
        p.data[...] = 0.0
    with pytest.raises(TrainingError):
        trainer.train_step(1)
    assert all(p.grad is None for p in trainer.model.encoder.params)


def test_invalid_settings():
    with pytest.raises(ParameterError):
        flat_trainer().run(-1)
    spec = make_dataset("flat_square")
    model = Autoencoder.create(2, 2, np.random.default_rng(0), hidden=(4,))
    with pytest.raises(ParameterError):
        Trainer(model, spec, LossConfig(spec.epsilon), np.random.default_rng(0), batch_size=0)
    rotations = make_dataset("r", 8, epsilon=2.0)
    with pytest.raises(ParameterError):
        Trainer(model, rotations, LossConfig(rotations.epsilon), np.random.default_rng(0))


@pytest.mark.slow
def test_flat_square_loss_decreases():
    log = flat_trainer(seed=1).run(2000)
    energy = (log["isometry_loss"] + log["flatness_loss"]).to_numpy()
    smoothed = smooth(energy, 100)
    assert smoothed[-1] < 0.1 * energy[:10].mean()
    recon = smooth(log["reconstruction_loss"].to_numpy(), 100)
    assert recon[-1] < recon[99]


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["g", "s", "r"])
def test_desk_scale_loss_curves_decrease(kind, desk_run):
    _, _, log = desk_run(kind, lam=1.0)
    values = log[LOG_COLUMNS[1:]].to_numpy()
    assert np.all(np.isfinite(values))
    for column in LOG_COLUMNS[1:]:
        curve = log[column].to_numpy()
        assert smooth(curve, 100)[-1] < curve[:10].mean(), column


@pytest.mark.slow
def test_flatness_improves_interpolation_on_rotations(desk_run):
    curves = {}
    for lam in (0.0, 5.0):
        model, spec, _ = desk_run("r", lam=lam)
        rng = np.random.default_rng(99)
        pairs = [sample_pair(spec.manifold, spec.epsilon, rng) for _ in range(64)]
        curves[lam] = interp_errors(model, spec.renderer, spec.manifold, pairs)
    flat, bent = curves[5.0], curves[0.0]
    assert flat.err[5] < bent.err[5]
    assert np.count_nonzero(flat.signed_mean_sq <= bent.signed_mean_sq) >= 8
