import json

import numpy as np
import pytest

from mevgan import memory
from mevgan.backbone import Backbone, BackboneConfig
from mevgan.plugin import PluginNet
from mevgan.video_disc import VideoDiscriminator
from oracles import PLUGIN_PARAMS, VIDEO_D_PARAMS


def test_count_params_by_freeze_flag():
    assert memory.count_params(PluginNet()) == (PLUGIN_PARAMS, 0)
    assert memory.count_params(VideoDiscriminator()) == (VIDEO_D_PARAMS, 0)
    bb = Backbone(BackboneConfig())
    bb.freeze()
    trainable, frozen = memory.count_params(bb)
    assert trainable == 0 and frozen == sum(p.size for p in bb.parameters())


def test_mevgan_trainable_is_plugin_plus_video_d():
    p = memory.profile("mevgan-stage2", batch=4)
    assert p.trainable_params == PLUGIN_PARAMS + VIDEO_D_PARAMS
    assert p.optimizer_state_bytes == 8 * p.trainable_params
    assert p.total_bytes == p.peak_activation_bytes + 4 * p.trainable_params * 2 + p.optimizer_state_bytes


@pytest.mark.parametrize("res", [16, 32, 64])
def test_symbolic_backbone_counts_match_instantiated(res):
    widths = (32, 16, 8, 8)[:memory._levels(res)]
    cfg = BackboneConfig(resolution=res, g_widths=widths, d_widths=widths)
    p = memory.profile("mevgan-stage2", 1, resolution=res, cfg=cfg)
    assert p.frozen_params == memory.backbone_param_count(cfg)


def test_symbolic_plugin_and_video_d_counts_match_instantiated():
    assert sum(l.params for l in memory.plugin_table()) == PluginNet().num_parameters()
    assert sum(l.params for l in memory.video_disc_table()) == VideoDiscriminator().num_parameters()


@pytest.mark.parametrize("pipeline", memory.PIPELINES)
def test_doubling_batch_doubles_activations(pipeline):
    a, b = memory.profile(pipeline, 3), memory.profile(pipeline, 6)
    assert b.peak_activation_bytes == 2 * a.peak_activation_bytes
    assert b.trainable_params == a.trainable_params


def test_activation_bound_is_twice_recorded_float32_values():
    table = memory.layer_table("mevgan-stage2")
    frames = sum(np.prod(l.activation) for l in table if l.activation and l.per == "frame")
    clips = sum(np.prod(l.activation) for l in table if l.activation and l.per == "clip")
    p = memory.profile("mevgan-stage2", batch=2, n_frames=8)
    assert p.peak_activation_bytes == 2 * 4 * (2 * 8 * frames + 2 * clips)


def test_resolution_scaling():
    mev = [memory.profile("mevgan", 4, resolution=r).trainable_params for r in (16, 32, 64)]
    base = [memory.profile("baseline", 4, resolution=r).trainable_params for r in (16, 32, 64)]
    assert len(set(mev)) == 1
    assert base[0] < base[1] < base[2]
    assert all(m < b for m, b in zip(mev, base))


def test_baseline_keeps_clip_shapes():
    table = memory.baseline_table(8, 32)
    assert [l for l in table if l.name == "G3.to_rgb"][0].activation == (1, 8, 32, 32)


def test_profiles_are_deterministic():
    assert memory.profile("baseline-3d", 2).to_dict() == memory.profile("baseline-3d", 2).to_dict()


@pytest.mark.parametrize("bad", [dict(pipeline="tgan"), dict(pipeline="mevgan", resolution=48),
                                 dict(pipeline="mevgan", n_frames=16)])
def test_invalid_profiles(bad):
    with pytest.raises(ValueError):
        memory.profile(batch=1, **bad)


def test_report_text_and_json():
    text = memory.report(4)
    assert "check mevgan_fewer_trainable: ok" in text and "ratio trainable_params" in text
    data = json.loads(memory.report(4, as_json=True))
    assert set(data["mevgan-stage2"]) >= {"trainable_params", "frozen_params", "peak_activation_bytes",
                                          "optimizer_state_bytes", "total_bytes"}
    assert data["ratios"]["trainable_params"] > 1 and all(data["checks"].values())
