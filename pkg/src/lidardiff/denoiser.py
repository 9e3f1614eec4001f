"""Noise-prediction networks, the AdamW update and checkpoint files.

Any object honouring :class:`DenoiserContract` can drive training and
sampling. :class:`ReferenceUNet` is a compact convolutional encoder-decoder
with skip connections and a learned per-stage lift of the time embedding.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import gcd
from typing import Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import lpci
from .errors import FormatError, ShapeError


@runtime_checkable
class DenoiserContract(Protocol):
    def predict(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor: ...
    def parameters(self): ...
    def train(self, mode: bool = True): ...
    def eval(self): ...


@dataclass(frozen=True)
class ReferenceUNetConfig:
    base_channels: int = 32
    depth: int = 3
    dropout_rate: float = 0.1
    embed_dim: int = 128
    in_channels: int = 1
    zero_init_output: bool = False

    def validate(self):
        if self.depth < 1:
            raise ShapeError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1 or self.in_channels < 1 or self.embed_dim < 1:
            raise ShapeError("channel counts and embed_dim must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ShapeError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return asdict(self)


def _groups(ch, preferred=8):
    return gcd(ch, preferred)


class TimeBlock(nn.Module):
    """Residual block: two norm-SiLU-conv layers with the lifted time embedding added in between.

    The shortcut (identity, or a 1x1 conv when the width changes) is never
    normalised, so the absolute level of the input reaches the output head.
    GroupNorm on the main path alone would hide each image's mean offset,
    which the reverse chain then amplifies.
    """

    def __init__(self, cin, cout, embed_dim, dropout):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.lift = nn.Linear(embed_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.drop = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.lift(emb)[:, :, None, None]
        h = self.conv2(self.drop(F.silu(self.norm2(h))))
        return h + self.skip(x)


class ReferenceUNet(nn.Module):
    def __init__(self, cfg: ReferenceUNetConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c = cfg.base_channels
        widths = [c * 2 ** level for level in range(cfg.depth)]
        self.stem = nn.Conv2d(cfg.in_channels, c, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        cin = c
        for w in widths:
            self.down_blocks.append(TimeBlock(cin, w, cfg.embed_dim, cfg.dropout_rate))
            self.downsamplers.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            cin = w
        mid = c * 2 ** cfg.depth
        self.mid = TimeBlock(cin, mid, cfg.embed_dim, cfg.dropout_rate)
        self.upsamplers = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        cin = mid
        for w in reversed(widths):
            self.upsamplers.append(nn.ConvTranspose2d(cin, w, 2, stride=2))
            self.up_blocks.append(TimeBlock(2 * w, w, cfg.embed_dim, cfg.dropout_rate))
            cin = w
        self.head = nn.Conv2d(c, cfg.in_channels, 1)
        if cfg.zero_init_output:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x, emb):
        step = 2 ** self.cfg.depth
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected B x {self.cfg.in_channels} x H x W input, got {tuple(x.shape)}")
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError(f"H and W must be divisible by {step}, got {tuple(x.shape[2:])}")
        if emb.shape != (x.shape[0], self.cfg.embed_dim):
            raise ShapeError(f"embedding batch must be {x.shape[0]} x {self.cfg.embed_dim}, "
                             f"got {tuple(emb.shape)}")
        h = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamplers):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, emb)
        for up, block in zip(self.upsamplers, self.up_blocks):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
        return self.head(h)

    predict = forward


def build_reference_unet(cfg: ReferenceUNetConfig = ReferenceUNetConfig(),
                         seed: int | None = None) -> ReferenceUNet:
    if seed is None:
        return ReferenceUNet(cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ReferenceUNet(cfg)


def count_parameters(model) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# --- AdamW ------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


@torch.no_grad()
def optimizer_step(params, grads, cfg: OptimizerConfig, state: AdamState | None = None) -> AdamState:
    """One AdamW update, in place on ``params``.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    before the bias-corrected moment step is applied.
    """
    params = list(params)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
    state = state or AdamState()
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    state.step += 1
    b1, b2, lr = cfg.beta1, cfg.beta2, cfg.learning_rate
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if cfg.weight_decay:
            p.mul_(1 - lr * cfg.weight_decay)
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(cfg.eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


class AdamW:
    """Thin stateful wrapper so training code can call ``opt.step()``."""

    def __init__(self, params, cfg: OptimizerConfig = OptimizerConfig(), state=None):
        self.params = [p for p in params if p.requires_grad]
        self.cfg = cfg
        self.state = state or AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.state = optimizer_step(self.params, [p.grad for p in self.params], self.cfg, self.state)


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: ReferenceUNet, opt_state: AdamState | None = None,
                    extra: dict | None = None) -> None:
    """Write model weights, AdamW moments and a JSON header to one lpci file."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    step = 0
    if opt_state is not None and opt_state.exp_avg:
        step = opt_state.step
        for name, m, v in zip(names, opt_state.exp_avg, opt_state.exp_avg_sq):
            arrays[f"exp_avg/{name}"] = m.cpu().numpy()
            arrays[f"exp_avg_sq/{name}"] = v.cpu().numpy()
    flat, index = lpci.pack_named(arrays)
    attrs = {"format": "lidardiff-checkpoint", "model": model.cfg.to_dict(),
             "optimizer_step": step, "index": index, **(extra or {})}
    lpci.save(path, flat, attrs)


def load_checkpoint(path):
    """Return ``(model, opt_state, attrs)`` from a checkpoint written by :func:`save_checkpoint`."""
    flat, attrs = lpci.load(path)
    if attrs.get("format") != "lidardiff-checkpoint":
        raise FormatError(f"{path}: not a lidardiff checkpoint")
    arrays = lpci.unpack_named(flat, attrs["index"])
    model = ReferenceUNet(ReferenceUNetConfig(**attrs["model"]))
    sd = {k[len("param/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("param/")}
    model.load_state_dict(sd)
    state = AdamState(step=int(attrs.get("optimizer_step", 0)))
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    if f"exp_avg/{names[0]}" in arrays:
        state.exp_avg = [torch.from_numpy(arrays[f"exp_avg/{n}"]) for n in names]
        state.exp_avg_sq = [torch.from_numpy(arrays[f"exp_avg_sq/{n}"]) for n in names]
    return model, state, attrs
