"""
Training a small denoiser
=========================

Trains a reduced reference U-Net on toy range images for about 720 optimizer steps,
samples with the full and a shortened reverse chain, and scores the results.
A full-size run lives in the acceptance suite.
"""

import time

import numpy as np
import torch

from lidardiff.denoiser import ReferenceUNetConfig, build_reference_unet, count_parameters
from lidardiff.diffusion import DiffusionConfig, sample, train_loop
from lidardiff.embedding import EmbeddingSpec
from lidardiff.metrics import evaluate
from lidardiff.schedule import make_schedule
from lidardiff.toydata import toy_range_images

torch.set_num_threads(1)
data = toy_range_images(120, seed=0)
train, val, test = data[:96], data[96:108], data[108:]

cfg = DiffusionConfig(make_schedule("time-dependent", 1000), embedding=EmbeddingSpec(d=32))
model = build_reference_unet(ReferenceUNetConfig(base_channels=16, depth=3, embed_dim=32), seed=0)
print("parameters:", count_parameters(model))

# %%
result = train_loop(model, train, cfg, epochs=30, batch_size=4, val_images=val, patience=2)
for epoch, tr, va in result.history:
    print(f"epoch {epoch}: train {tr:.4f} val {va:.4f}")
model.load_state_dict(result.best_state)

# %%
# Sampling with 250 of the 1000 trained steps skips evenly spaced steps.
for steps in (1000, 250):
    c = DiffusionConfig(cfg.schedule, T_sample=steps, embedding=cfg.embedding, rng_seed=1)
    t0 = time.perf_counter()
    imgs = sample(model, c, (12, 1, 32, 128)).numpy()[:, 0]
    dt = time.perf_counter() - t0
    r = evaluate(imgs, test[:, 0])
    print(f"{steps} steps: {dt:.1f} s, jsd {r.jsd:.3f} mmd {r.mmd:.3f} frechet {r.frechet:.2f}")

noise = np.clip(np.random.default_rng(2).normal(0.5, 0.5, size=test[:, 0].shape), 0, 1)
r = evaluate(noise, test[:, 0])
# At this budget the patch statistics are close to the data while the
# intensity histogram still lags; the acceptance run trains a wider network longer.
print(f"noise:     jsd {r.jsd:.3f} mmd {r.mmd:.3f} frechet {r.frechet:.2f}")
