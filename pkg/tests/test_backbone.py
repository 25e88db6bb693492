import numpy as np
import pytest

from mevgan.autodiff import Tape, Tensor, ops
from mevgan.autodiff.nn import Linear
from mevgan.backbone import (
    Backbone, BackboneConfig, FrozenContractError, gradient_penalty, sample_latents, train_backbone,
)
from mevgan.checkpoint import read_records, write_records


@pytest.fixture(scope="module")
def backbone():
    return Backbone(BackboneConfig(seed=3))


def test_generator_and_feature_shapes(backbone):
    images = backbone.generate(sample_latents(3, 0)).data
    assert images.shape == (3, 1, 32, 32)
    assert np.all(np.abs(images) <= 1.0)
    assert backbone.extract_features(images).shape == (3, 512)
    assert backbone.discriminate(images).shape[0] == 3


def test_latents_lie_on_unit_sphere():
    np.testing.assert_allclose(np.linalg.norm(sample_latents(16, 1).data, axis=1), 1.0, atol=1e-6)


def test_wrong_latent_width_raises(backbone):
    with pytest.raises(ValueError):
        backbone.generate(Tensor(np.zeros((1, 511), np.float32)))
    with pytest.raises(ValueError):
        backbone.generate_frame(np.full(512, np.nan))


def test_extractor_rejects_wrong_resolution(backbone):
    with pytest.raises(ValueError):
        backbone.extract_features(np.zeros((1, 1, 16, 16), np.float32))


def test_config_validates_resolution():
    with pytest.raises(ValueError):
        BackboneConfig(resolution=48)
    with pytest.raises(ValueError):
        BackboneConfig(resolution=64, g_widths=(8, 8, 8))


def test_gradient_penalty_of_linear_critic():
    # a linear critic has input gradient w everywhere, so GP = (||w|| - 1)^2
    rng = np.random.default_rng(0)
    critic = Linear(6, 1, rng)
    real, fake = Tensor(rng.standard_normal((4, 6))), Tensor(rng.standard_normal((4, 6)))
    with Tape():
        gp = gradient_penalty(critic, real, fake, rng.uniform(size=4))
    w = critic.weight.data
    assert gp.item() == pytest.approx((np.linalg.norm(w) - 1.0) ** 2, rel=1e-5)


def test_freeze_is_idempotent_and_blocks_training():
    bb = Backbone(BackboneConfig(seed=1))
    first = bb.freeze()
    assert bb.freeze() == first and bb.frozen
    assert all(p.frozen and not p.requires_grad for p in bb.parameters())
    with pytest.raises(FrozenContractError):
        train_backbone(np.zeros((4, 1, 32, 32), np.float32), bb.cfg, backbone=bb)


def test_verify_frozen_detects_weight_change():
    bb = Backbone(BackboneConfig(seed=2))
    with pytest.raises(FrozenContractError):
        bb.verify_frozen()
    bb.freeze()
    bb.verify_frozen()
    bb.generator.parameters()[0].data[0] += 1.0
    with pytest.raises(FrozenContractError):
        bb.verify_frozen()


def test_training_changes_weights_and_logs_each_step():
    cfg = BackboneConfig(steps=3, batch_size=2, seed=0)
    frames = np.random.default_rng(0).uniform(-1, 1, (8, 1, 32, 32)).astype(np.float32)
    before = Backbone(cfg).checksum()
    bb, log = train_backbone(frames, cfg)
    assert bb.checksum() != before
    assert len(log.d_loss) == len(log.g_loss) == len(log.gp) == 3
    assert all(np.isfinite(log.d_loss))


def test_training_is_seed_deterministic():
    cfg = BackboneConfig(steps=2, batch_size=2, seed=5)
    frames = np.random.default_rng(1).uniform(-1, 1, (6, 1, 32, 32)).astype(np.float32)
    assert train_backbone(frames, cfg)[0].checksum() == train_backbone(frames, cfg)[0].checksum()


def test_frame_shape_mismatch_raises():
    with pytest.raises(ValueError):
        train_backbone(np.zeros((4, 1, 16, 16), np.float32), BackboneConfig(steps=1))


def test_progressive_growth_and_fade_in():
    cfg = BackboneConfig(progressive=True, steps=6, batch_size=2, fade_steps=2, seed=0)
    frames = np.random.default_rng(2).uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32)
    bb, log = train_backbone(frames, cfg)
    assert log.resolution == [8, 8, 16, 16, 32, 32]
    assert bb.generator.alpha == 1.0


def test_fade_in_blends_linearly():
    # the blend happens before the output tanh
    bb = Backbone(BackboneConfig(progressive=True, seed=0))
    bb.grow_resolution()
    z = sample_latents(2, 0)
    bb.set_alpha(0.0)
    low = np.arctanh(bb.generate(z).data.astype(np.float64))
    bb.set_alpha(1.0)
    high = np.arctanh(bb.generate(z).data.astype(np.float64))
    bb.set_alpha(0.25)
    mixed = np.arctanh(bb.generate(z).data.astype(np.float64))
    np.testing.assert_allclose(mixed, 0.75 * low + 0.25 * high, atol=1e-4)
    bb.grow_resolution()
    with pytest.raises(ValueError):
        bb.grow_resolution()


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    bb = Backbone(BackboneConfig(seed=4))
    bb.freeze()
    path = tmp_path / "bb.ckpt"
    write_records(path, bb.records())
    back = Backbone.from_records(read_records(path))
    assert back.checksum() == bb.checksum() and back.frozen
    z = sample_latents(2, 9)
    np.testing.assert_array_equal(back.generate(z).data, bb.generate(z).data)


def test_checkpoint_missing_role_raises(tmp_path):
    bb = Backbone(BackboneConfig(seed=4))
    path = tmp_path / "bb.ckpt"
    write_records(path, bb.records()[:2])
    with pytest.raises(KeyError):
        Backbone.from_records(read_records(path))
