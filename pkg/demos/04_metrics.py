"""
Fréchet distances and Inception Score with a probe extractor
============================================================

Pretrained Inception/I3D networks are not used. A small convolutional probe
is trained on the synthetic shape labels and must reach 90% held-out
accuracy before its features may be used. Values are only comparable
within this toolkit.
"""
import numpy as np

from mevgan.autodiff import generator
from mevgan.data import DatasetSpec, FramePool, make_dataset
from mevgan.evaluate import gated_probe, real_clips, shuffle_frames
from mevgan.metrics import GaussianStats, fid, frechet_distance, fvd_proxy, inception_score

# %%
# Closed forms first. In one dimension the distance is (m1-m2)^2 + (s1-s2)^2.
a = GaussianStats(np.array([0.0]), np.array([[4.0]]))
b = GaussianStats(np.array([1.0]), np.array([[1.0]]))
print("1-D Fréchet:", frechet_distance(a, b), "expected", 1.0 + 1.0)

# Confident predictions spread evenly over C classes give IS = C.
probs = np.eye(4)[np.tile(np.arange(4), 25)]
print("IS of confident, balanced predictions:", inception_score(probs, splits=5))

# %%
# Train the probe on one dataset and compare sets of real frames.
videos = make_dataset(DatasetSpec(n_videos=32, seed=1000))
probe = gated_probe(videos, seed=1000, steps=600)
print(f"probe held-out accuracy {probe.accuracy:.3f}")

pool = FramePool.from_clips(videos).frames
rng = np.random.default_rng(0)
idx = rng.permutation(len(pool))
real, heldout = pool[idx[:500]], pool[idx[500:1000]]
noise = rng.uniform(-1, 1, real.shape).astype(np.float32)
print(f"FID real vs held-out real {fid(real, heldout, probe.embed):.3f}")
print(f"FID real vs uniform noise {fid(real, noise, probe.embed):.3f}")

# %%
# The clip embedding also measures frame-to-frame change, so shuffling the
# frames of real clips is detected even though every frame is real.
r = generator(0, "demo")
ref, other = real_clips(videos, 128, 8, r), real_clips(videos, 128, 8, r)
print(f"FVD proxy real vs real      {fvd_proxy(ref, other, probe.embed):.4f}")
print(f"FVD proxy real vs shuffled  {fvd_proxy(ref, shuffle_frames(other, r), probe.embed):.4f}")
