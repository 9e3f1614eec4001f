"""DDPM forward corruption, noise-prediction loss, ancestral sampling and training."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .denoiser import AdamState, AdamW, OptimizerConfig
from .embedding import EmbeddingSpec, embed_batch
from .errors import EmptyInput, NumericalError, ParamError, ShapeError, StepError
from .schedule import Schedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionConfig:
    schedule: Schedule
    T_sample: int | None = None
    embedding: EmbeddingSpec = EmbeddingSpec()
    rng_seed: int = 0

    def __post_init__(self):
        if self.T_sample is None:
            object.__setattr__(self, "T_sample", self.T_train)
        if not 1 <= self.T_sample <= self.T_train:
            raise ParamError(f"T_sample must be in [1, {self.T_train}], got {self.T_sample}")

    @property
    def T_train(self) -> int:
        return len(self.schedule)


@dataclass
class TrainingBatch:
    """Clean images already in [-1, 1], their 1-based steps and noise."""

    x0: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor


def to_model_range(x):
    return x * 2.0 - 1.0


def to_image_range(x):
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


def _embed_table(spec: EmbeddingSpec, T: int) -> torch.Tensor:
    return torch.from_numpy(embed_batch(np.arange(T + 1), spec)).float()


def forward_sample(x0, t, eps, schedule: Schedule):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` with 1-based step ``t``.

    ``t`` may be a scalar or one step per batch element. Works on numpy arrays
    and torch tensors.
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeError(f"x0 {tuple(x0.shape)} and noise {tuple(eps.shape)} differ in shape")
    t_arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t, dtype=np.int64)
    if np.any(t_arr < 1) or np.any(t_arr > len(schedule)):
        raise StepError(f"step out of range [1, {len(schedule)}]")
    abar = schedule.alpha_bars[t_arr - 1]
    a = np.sqrt(abar)
    b = np.sqrt(1.0 - abar)
    if t_arr.ndim:
        a = a.reshape((-1,) + (1,) * (x0.ndim - 1))
        b = b.reshape(a.shape)
    if isinstance(x0, torch.Tensor):
        a = torch.as_tensor(a, dtype=x0.dtype)
        b = torch.as_tensor(b, dtype=x0.dtype)
    return a * x0 + b * eps


def make_batch(images01: torch.Tensor, schedule: Schedule, generator: torch.Generator) -> TrainingBatch:
    """Rescale images to [-1, 1] and draw uniform steps and Gaussian noise."""
    x0 = to_model_range(images01)
    t = torch.randint(1, len(schedule) + 1, (x0.shape[0],), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return TrainingBatch(x0, t, eps)


def training_loss(model, batch: TrainingBatch, cfg: DiffusionConfig, emb_table=None) -> torch.Tensor:
    """Mean squared error between the injected and the predicted noise."""
    if emb_table is None:
        emb = torch.from_numpy(embed_batch(batch.t.numpy(), cfg.embedding)).to(batch.x0.dtype)
    else:
        emb = emb_table[batch.t].to(batch.x0.dtype)
    xt = forward_sample(batch.x0, batch.t, batch.eps, cfg.schedule)
    pred = model.predict(xt, emb)
    if pred.shape != batch.eps.shape:
        raise ShapeError(f"denoiser returned {tuple(pred.shape)}, expected {tuple(batch.eps.shape)}")
    return torch.mean((batch.eps - pred) ** 2)


# --- sampling -----------------------------------------------------------------

def sampling_steps(T_train: int, T_sample: int) -> np.ndarray:
    """Evenly strided subset of the 1-based training steps, ascending, always with 1 and T."""
    if T_sample == T_train:
        return np.arange(1, T_train + 1)
    if T_sample == 1:
        return np.array([T_train])
    return np.round(np.linspace(1, T_train, T_sample)).astype(np.int64)


@dataclass(frozen=True)
class ReverseCoefs:
    steps: np.ndarray
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray


def reverse_coefs(schedule: Schedule, T_sample: int | None = None) -> ReverseCoefs:
    """Per-step coefficients for the (possibly shortened) reverse chain.

    With fewer steps than training, ``alpha_bar`` is taken at the kept steps
    and the betas are re-derived so the products still match.
    """
    T = len(schedule)
    steps = sampling_steps(T, T_sample or T)
    if len(steps) == T:
        return ReverseCoefs(steps, schedule.betas, schedule.alphas, schedule.alpha_bars)
    abar = schedule.alpha_bars[steps - 1]
    prev = np.concatenate([[1.0], abar[:-1]])
    alphas = abar / prev
    return ReverseCoefs(steps, 1.0 - alphas, alphas, abar)


def posterior_mean(x_t, eps_hat, k: int, coefs: ReverseCoefs):
    """Mean of the reverse step from chain position ``k`` (0-based) given predicted noise."""
    beta, alpha, abar = (float(v) for v in (coefs.betas[k], coefs.alphas[k], coefs.alpha_bars[k]))
    return (x_t - (beta / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(alpha)


@torch.no_grad()
@torch.no_grad()
def sample(model, cfg: DiffusionConfig, shape, generator: torch.Generator | None = None,
           x_T: torch.Tensor | None = None, return_model_range: bool = False):
    """Ancestral sampling from pure noise.

    Runs ``cfg.T_sample`` denoiser evaluations, injects ``sqrt(beta) z`` noise
    after every step except the last and returns images in [0, 1].
    """
    if generator is None:
        generator = torch.Generator().manual_seed(cfg.rng_seed)
    coefs = reverse_coefs(cfg.schedule, cfg.T_sample)
    table = _embed_table(cfg.embedding, cfg.T_train)
    x = torch.randn(tuple(shape), generator=generator) if x_T is None else x_T.clone()
    B = x.shape[0]
    was_training = getattr(model, "training", False)
    model.eval()
    try:
        for k in range(len(coefs.steps) - 1, -1, -1):
            step = int(coefs.steps[k])
            emb = table[step].expand(B, -1).to(x.dtype)
            eps_hat = model.predict(x, emb)
            x = posterior_mean(x, eps_hat, k, coefs)
            if k > 0:
                z = torch.randn(x.shape, generator=generator, dtype=x.dtype)
                x = x + float(np.sqrt(coefs.betas[k])) * z
            if not torch.isfinite(x).all():
                raise NumericalError(f"non-finite values at sampling step {step}", step=step)
    finally:
        model.train(was_training)
    return x if return_model_range else to_image_range(x)


# --- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_state: dict | None = None
    best_val: float = float("inf")
    optimizer_state: AdamState | None = None
    stopped_early: bool = False


def _batches(data: torch.Tensor, batch_size: int, generator: torch.Generator):
    order = torch.randperm(len(data), generator=generator)
    for i in range(0, len(data), batch_size):
        yield data[order[i:i + batch_size]]


@torch.no_grad()
def validation_loss(model, data: torch.Tensor, cfg: DiffusionConfig, batch_size=4, seed=1234,
                    emb_table=None) -> float:
    """Loss on ``data`` with a fixed draw of steps and noise, so epochs compare fairly."""
    gen = torch.Generator().manual_seed(seed)
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        chunk = data[i:i + batch_size]
        batch = make_batch(chunk, cfg.schedule, gen)
        total += float(training_loss(model, batch, cfg, emb_table)) * len(chunk)
        count += len(chunk)
    model.train(was_training)
    return total / count


def train_loop(model, train_images, cfg: DiffusionConfig, epochs: int = 50, batch_size: int = 4,
               val_images=None, patience: int = 5, opt_cfg: OptimizerConfig = OptimizerConfig(),
               opt_state: AdamState | None = None, max_steps: int | None = None,
               on_epoch=None) -> TrainResult:
    """Optimise ``model`` on images in [0, 1] with shape N x C x H x W.

    Early stopping watches the validation loss (training loss when there is no
    validation set); ``patience=0`` disables it. The weights with the best
    monitored loss are kept in ``result.best_state``.
    """
    data = torch.as_tensor(np.asarray(train_images), dtype=torch.float32)
    if len(data) == 0:
        raise EmptyInput("training set is empty")
    val = None
    if val_images is not None and len(val_images):
        val = torch.as_tensor(np.asarray(val_images), dtype=torch.float32)
    gen = torch.Generator().manual_seed(cfg.rng_seed)
    table = _embed_table(cfg.embedding, cfg.T_train)
    opt = AdamW(model.parameters(), opt_cfg, opt_state)
    result = TrainResult()
    stale = 0
    steps = 0
    model.train()
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for chunk in _batches(data, batch_size, gen):
            batch = make_batch(chunk, cfg.schedule, gen)
            loss = training_loss(model, batch, cfg, table)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}", step=steps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        train_loss = total / count
        val_loss = validation_loss(model, val, cfg, batch_size, emb_table=table) if val is not None else None
        result.history.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.5f val %s", epoch, train_loss,
                 "n/a" if val_loss is None else f"{val_loss:.5f}")
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        monitored = val_loss if val_loss is not None else train_loss
        if monitored < result.best_val:
            result.best_val = monitored
            result.best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        if max_steps is not None and steps >= max_steps:
            break
        if patience and stale >= patience:
            result.stopped_early = True
            break
    result.optimizer_state = opt.state
    return result
