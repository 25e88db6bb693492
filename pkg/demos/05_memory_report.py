"""
Why training only a plugin is cheap
===================================

Stage 2 trains the plugin and the video discriminator. Neither ever sees a
pixel, so their size does not depend on frame resolution. A fully trainable
3-D convolutional video GAN of similar widths is profiled for comparison.
"""
from mevgan import memory

print(memory.report(batch=4, n_frames=8, resolution=32))

# %%
# Activation bounds scale linearly with the batch.
for batch in (1, 2, 4, 8):
    m = memory.profile("mevgan-stage2", batch)
    b = memory.profile("baseline-3d", batch)
    print(f"batch {batch}: activations mevgan {m.peak_activation_bytes / 2**20:7.1f} MiB, "
          f"baseline {b.peak_activation_bytes / 2**20:7.1f} MiB")

# %%
# The biggest layers of each pipeline.
for name in memory.PIPELINES:
    top = sorted(memory.layer_table(name), key=lambda l: -l.params)[:3]
    print(name, [(l.name, l.params, "trainable" if l.trainable else "frozen") for l in top])
