"""Deterministic time-step embeddings.

Both kinds share the frequencies ``1 / 10000 ** (2i / d)`` for pair index
``i = 0 .. d/2 - 1``.

* ``sinusoidal``: slot ``2i`` is ``sin(t f_i)``, slot ``2i+1`` is ``cos(t f_i)``.
* ``fourier``: a truncated harmonic series. Slot ``2i`` holds
  ``sum_n (sin(n t f_i) + cos(n t f_i)) / n`` and slot ``2i+1`` its quadrature
  partner ``sum_n (cos(n t f_i) - sin(n t f_i)) / n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParamError

SINUSOIDAL = "sinusoidal"
FOURIER = "fourier"


@dataclass(frozen=True)
class EmbeddingSpec:
    d: int = 128
    N: int = 4
    kind: str = FOURIER

    def __post_init__(self):
        if self.kind not in (SINUSOIDAL, FOURIER):
            raise ParamError(f"unknown embedding kind {self.kind!r}")
        if self.d < 2 or self.d % 2:
            raise ParamError(f"embedding dimension must be even and >= 2, got {self.d}")
        if self.kind == FOURIER and self.N < 1:
            raise ParamError(f"harmonic count must be >= 1, got {self.N}")

    def to_dict(self):
        return {"d": self.d, "N": self.N, "kind": self.kind}


def frequencies(d: int) -> np.ndarray:
    i = np.arange(d // 2)
    return 1.0 / 10000.0 ** (2 * i / d)


def _phases(ts, d):
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0):
        raise ParamError("time-steps must be non-negative")
    return ts[..., None] * frequencies(d)


def _interleave(even, odd):
    out = np.empty(even.shape[:-1] + (2 * even.shape[-1],))
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def sinusoidal_embed(t, spec: EmbeddingSpec = EmbeddingSpec(kind=SINUSOIDAL)) -> np.ndarray:
    if spec.d % 2:
        raise ParamError("embedding dimension must be even")
    x = _phases(t, spec.d)
    return _interleave(np.sin(x), np.cos(x))


def fourier_embed(t, spec: EmbeddingSpec = EmbeddingSpec()) -> np.ndarray:
    if spec.N < 1:
        raise ParamError("harmonic count must be >= 1")
    x = _phases(t, spec.d)
    even = np.zeros_like(x)
    odd = np.zeros_like(x)
    for n in range(1, spec.N + 1):
        s, c = np.sin(n * x), np.cos(n * x)
        even += (s + c) / n
        odd += (c - s) / n
    return _interleave(even, odd)


def embed(t, spec: EmbeddingSpec) -> np.ndarray:
    if spec.kind == SINUSOIDAL:
        return sinusoidal_embed(t, spec)
    return fourier_embed(t, spec)


def embed_batch(ts, spec: EmbeddingSpec) -> np.ndarray:
    """Embed a sequence of steps; returns an array of shape ``(len(ts), d)``."""
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    if ts.size == 0:
        return np.zeros((0, spec.d))
    return embed(ts, spec)


def harmonic_number(N: int) -> float:
    return float(sum(1.0 / n for n in range(1, N + 1)))
