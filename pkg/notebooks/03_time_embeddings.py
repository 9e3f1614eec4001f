"""
Time-step embeddings
====================

Compares the sinusoidal embedding with the harmonic Fourier-series variant.
"""

import numpy as np

from lidardiff.embedding import EmbeddingSpec, embed_batch, harmonic_number

steps = np.arange(1001)
sin = embed_batch(steps, EmbeddingSpec(d=128, kind="sinusoidal"))
four = embed_batch(steps, EmbeddingSpec(d=128, N=4))

# %%
# At t=0 every Fourier component equals the harmonic number H_N.
print("fourier(0)[:4] =", four[0, :4], " H_4 =", harmonic_number(4))

# %%
# Neighbouring steps must stay distinguishable for the denoiser.
for name, e in (("sinusoidal", sin), ("fourier", four)):
    gaps = np.linalg.norm(np.diff(e, axis=0), axis=1)
    print(f"{name:>10}: adjacent-step distance min {gaps.min():.4f} max {gaps.max():.4f}")
