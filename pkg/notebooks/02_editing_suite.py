# %% [markdown]
# # The editing suite
#
# Every edit is a pure function of the image (and a seed for noise). The
# evaluation conditions chain them: JPEG then 8x downsampling, and so on.

# %%
import numpy as np

from gramtex.editing import (EditSpec, apply_edits, gaussian_kernel, jpeg_codec, l0_smooth,
                             nonzero_gradient_count, psnr)
from gramtex.evaluation import condition_edits
from gramtex.synth import varied_texture_set

img = varied_texture_set(1, size=128, seed=3)[0]

# %%
for q in (10, 50, 75, 95, 100):
    once = jpeg_codec(img, q)
    twice = jpeg_codec(once, q)
    print(f"q={q:>3}  PSNR {psnr(once, img):5.1f} dB  re-encode drift {np.abs(twice.astype(int) - once).max()}")

# %% [markdown]
# Blur weights follow the usual sigma-from-kernel-size rule; a 25-tap kernel
# has sigma 3.8 and sums to one.

# %%
k = gaussian_kernel(25)
print(k.sum(), k.max())

# %% [markdown]
# L0 smoothing removes small gradients and keeps strong edges. The count of
# non-zero gradients never rises above the input's, but it is not monotone in
# lambda: a large lambda delays the edges until late in the half-quadratic
# schedule, and they come back as short ramps of several small steps.

# %%
rng = np.random.default_rng(0)
blocks = np.kron(rng.uniform(0.2, 0.8, (4, 4)), np.ones((16, 16))) + rng.uniform(-0.02, 0.02, (64, 64))
for lam in (0.0, 0.005, 0.02):
    out = l0_smooth(blocks, lam)
    print(f"lambda={lam:<6} nonzero gradients {nonzero_gradient_count(out, 1e-3)}")

# %%
for name in ("down8", "jpeg-down8", "blur", "noise"):
    chain = condition_edits(name, noise_seed=1)
    print(name.ljust(10), [e.kind for e in chain], apply_edits(img, chain).shape)
