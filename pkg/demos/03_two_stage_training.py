"""
Two-stage training at toy scale
===============================

Stage 1 trains an image GAN on frames from bouncing-shape videos and freezes
it. Stage 2 trains only the plugin and the video discriminator; the frozen
backbone turns latents into frames and frames into features.

Sizes here are tiny (16px, a few hundred steps) so the script finishes in
about a minute; the acceptance run uses 32px and 2000 backbone steps.
"""
import tempfile
from pathlib import Path

import numpy as np

from mevgan.backbone import BackboneConfig, train_backbone
from mevgan.data import DatasetSpec, FramePool, export_frames, make_dataset
from mevgan.trainer import CompositeGenerator, TrainConfig, load_video_model, save_video_model, train_plugin

spec = DatasetSpec(resolution=16, n_videos=8, frames_per_video=16, size_range=(3.0, 4.0), seed=0)
videos = make_dataset(spec)
frames = FramePool.from_clips(videos).frames
print(f"{len(videos)} videos, {len(frames)} frames of shape {frames.shape[1:]}")

# %%
# Stage 1.
cfg = BackboneConfig(resolution=16, g_widths=(16, 8), d_widths=(16, 8), steps=200, seed=0)
backbone, log = train_backbone(frames, cfg)
state = backbone.freeze()
print(f"critic loss {log.d_loss[0]:.3f} -> {log.d_loss[-1]:.3f}; frozen checksum {state.weight_checksum:016x}")

# %%
# Stage 2. The backbone checksum is verified before and after.
plugin, vdisc, history = train_plugin(backbone, videos, TrainConfig(epochs=3, batch_size=4, seed=0))
print(history.to_text())
print("backbone unchanged:", backbone.checksum() == state.weight_checksum)

# %%
# Sampling a clip is deterministic in the seed.
composite = CompositeGenerator(plugin, backbone)
a, b = composite.sample_video(42), composite.sample_video(42)
print("clip", a.frames.shape, "reproducible:", a.frames.tobytes() == b.frames.tobytes())

with tempfile.TemporaryDirectory() as tmp:
    save_video_model(Path(tmp) / "model.ckpt", backbone, plugin, vdisc)
    _, plugin2, _ = load_video_model(Path(tmp) / "model.ckpt")
    restored = CompositeGenerator(plugin2, backbone).sample_video(42)
    print("restored checkpoint gives the same clip:", np.array_equal(restored.frames, a.frames))
    files = export_frames(a, Path(tmp) / "clip", "pgm")
    print("exported", [f.name for f in files[:3]], "...")
