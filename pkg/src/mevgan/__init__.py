"""Plugin-based video GAN toolkit on a from-scratch numpy autodiff engine."""
