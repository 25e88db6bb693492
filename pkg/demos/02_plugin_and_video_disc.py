"""
The plugin and the video discriminator
======================================

The plugin maps frame times and one shared noise vector to a trajectory of
unit-norm latents. The video discriminator reads an 8 x 512 matrix of
per-frame features as a one-channel image.
"""
import numpy as np

from mevgan.autodiff import Tensor
from mevgan.plugin import PluginNet, extend_timeline, plugin_forward, sample_noise, training_timeline
from mevgan.video_disc import VideoDiscriminator, shape_chain_report

plugin, vdisc = PluginNet(seed=0), VideoDiscriminator(seed=0)
print(f"plugin parameters: {plugin.num_parameters():,}")
print(f"video discriminator parameters: {vdisc.num_parameters():,}")

# %%
# Eight frame times 0, 1/8, ..., 7/8 and one noise vector give eight latents.
t = training_timeline(8)
z = sample_noise(1, seed=0)[0]
traj = plugin_forward(t, z, plugin).data
print("trajectory", traj.shape, "row norms", np.round(np.linalg.norm(traj, axis=1), 6))

# Neighbouring frames get similar latents; distant frames drift apart.
cos = traj @ traj.T
print("cosine(frame 0, frame k):", np.round(cos[0], 4))

# %%
# Longer clips continue the same time grid; the first eight rows do not change.
long = plugin_forward(extend_timeline(t, 8), z, plugin).data
print("16-frame trajectory", long.shape, "prefix identical:", np.array_equal(long[:8], traj))

# %%
# Shapes through the discriminator.
trace = []
p = vdisc(Tensor(np.random.default_rng(0).standard_normal((1, 1, 8, 512)).astype(np.float32)), trace=trace)
for shape in trace:
    print("  ", shape)
print("probability", float(p.data[0]))

# The discriminator only accepts eight frames; other lengths dead-end.
for n in (7, 16):
    print(n, "frames:", shape_chain_report(n, 512).error)
