"""Noise schedules for the forward diffusion process.

Eight kinds are available through :func:`make_schedule`: ``constant``,
``linear``, ``quadratic``, ``cosine``, ``sigmoid``, ``hyperbolic``,
``time-dependent`` and ``ramp``. Every kind reduces to a beta sequence; the
signal fractions ``alpha_bar`` are always the running product of
``1 - beta`` so the tables used in training and sampling agree exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParamError, UnknownSchedule

BETA_START = 1e-4
BETA_END = 0.02
BETA_MAX = 0.999

KINDS = ("constant", "linear", "quadratic", "cosine", "sigmoid",
         "hyperbolic", "time-dependent", "ramp")
_ALIASES = {"cosine2": "cosine", "cosine^2": "cosine", "time_dependent": "time-dependent",
            "timedependent": "time-dependent"}


_EXTRA_KEYS = {"cosine": {"s"}, "sigmoid": {"sigmoid_range"}, "ramp": {"n"}}


def extras_for(kind: str, extras: dict) -> dict:
    """The subset of ``extras`` that schedule ``kind`` understands."""
    keys = _EXTRA_KEYS.get(_ALIASES.get(kind, kind), set())
    return {k: v for k, v in extras.items() if k in keys}


def _freeze(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Schedule:
    """Per-step beta, alpha and alpha_bar tables. Index ``t - 1`` is step ``t``."""

    betas: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ParamError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ParamError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", _freeze(betas))
        alphas = 1.0 - betas
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        object.__setattr__(self, "alphas", _freeze(alphas))
        object.__setattr__(self, "alpha_bars", _freeze(alpha_bars))

    def __len__(self):
        return len(self.betas)

    @property
    def T(self) -> int:
        return len(self.betas)

    def snr(self) -> np.ndarray:
        return snr(self)

    def describe(self) -> dict:
        return {"kind": self.kind, "T": self.T, **self.params}

    def to_rows(self):
        s = self.snr()
        for t in range(self.T):
            yield t + 1, self.betas[t], self.alphas[t], self.alpha_bars[t], s[t]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "beta", "alpha", "alpha_bar", "snr"])
            for step, *vals in self.to_rows():
                writer.writerow([step] + [repr(float(v)) for v in vals])


def _check_bounds(T, beta_start, beta_end):
    if int(T) != T or T < 2:
        raise ParamError(f"T must be an integer >= 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParamError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")


def linear_betas(T, beta_start=BETA_START, beta_end=BETA_END):
    return beta_start + (beta_end - beta_start) / (T - 1) * np.arange(T)


def time_dependent_betas(T, beta_start=BETA_START, beta_end=BETA_END) -> np.ndarray:
    """Geometric interpolation ``beta_start * (beta_end / beta_start) ** (t / (T-1))``."""
    if not 0 < beta_start < beta_end < 1:
        raise ParamError(
            f"time-dependent schedule needs 0 < beta_start < beta_end < 1, "
            f"got {beta_start}, {beta_end}")
    if T < 2:
        raise ParamError(f"T must be >= 2, got {T}")
    timing = np.arange(T) / (T - 1)
    betas = beta_start * (beta_end / beta_start) ** timing
    betas[0], betas[-1] = beta_start, beta_end
    return betas


def ramp_betas(T, beta_start=BETA_START, beta_end=BETA_END, n=10) -> np.ndarray:
    """Hold-then-ramp tiling of the linear base trajectory.

    The output is cut into ``T / (2n)`` shapes of length ``2n``. Shape ``k``
    starts at base index ``s = 2nk``: it holds ``base[s]`` for ``n`` steps and
    then walks ``base[s], ..., base[s + n - 1]``.
    """
    if n < 1 or T % (2 * n):
        raise ParamError(f"T={T} is not divisible by 2n={2 * n}")
    base = linear_betas(T, beta_start, beta_end)
    out = np.empty(T)
    for k in range(T // (2 * n)):
        s = 2 * n * k
        out[s:s + n] = base[s]
        out[s + n:s + 2 * n] = base[s:s + n]
    return out


def cosine_betas(T, s=0.008):
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
    abar = f / f[0]
    return np.clip(1 - abar[1:] / abar[:-1], 1e-12, BETA_MAX)


def sigmoid_betas(T, beta_start=BETA_START, beta_end=BETA_END, lo=-6.0, hi=6.0):
    # rescaled so both endpoints are attained exactly
    sig = 1 / (1 + np.exp(-np.linspace(lo, hi, T)))
    sig = (sig - sig[0]) / (sig[-1] - sig[0])
    return beta_start + (beta_end - beta_start) * sig


def hyperbolic_betas(T):
    abar = 1 - np.arange(T + 1) / T
    with np.errstate(divide="ignore", invalid="ignore"):
        betas = 1 - abar[1:] / abar[:-1]
    return np.clip(betas, 1e-12, BETA_MAX)


def make_schedule(kind: str = "linear", T: int = 1000, beta_start: float = BETA_START,
                  beta_end: float = BETA_END, **extras) -> Schedule:
    """Build a :class:`Schedule` by name.

    Extras: ``s`` (cosine offset, 0.008), ``sigmoid_range`` ((-6, 6)) and
    ``n`` (ramp segment length, 10).
    """
    key = _ALIASES.get(kind, kind)
    if key not in KINDS:
        raise UnknownSchedule(f"unknown schedule kind {kind!r}; choose from {', '.join(KINDS)}")
    _check_bounds(T, beta_start, beta_end)
    T = int(T)
    params = {"beta_start": beta_start, "beta_end": beta_end}

    if key == "constant":
        betas = np.full(T, float(beta_end))
    elif key == "linear":
        betas = linear_betas(T, beta_start, beta_end)
    elif key == "quadratic":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T) ** 2
    elif key == "cosine":
        params["s"] = s = float(extras.pop("s", 0.008))
        betas = cosine_betas(T, s)
    elif key == "sigmoid":
        lo, hi = extras.pop("sigmoid_range", (-6.0, 6.0))
        if not lo < hi:
            raise ParamError("sigmoid_range must be increasing")
        params["sigmoid_range"] = [float(lo), float(hi)]
        betas = sigmoid_betas(T, beta_start, beta_end, lo, hi)
    elif key == "hyperbolic":
        betas = hyperbolic_betas(T)
    elif key == "time-dependent":
        betas = time_dependent_betas(T, beta_start, beta_end)
    else:
        params["n"] = n = int(extras.pop("n", 10))
        betas = ramp_betas(T, beta_start, beta_end, n)
    if extras:
        raise ParamError(f"unused schedule parameters for {key}: {sorted(extras)}")
    return Schedule(betas, key, params)


def snr(schedule: Schedule) -> np.ndarray:
    """Signal-to-noise ratio ``alpha_bar / (1 - alpha_bar)`` per step."""
    ab = schedule.alpha_bars
    return ab / (1.0 - ab)


def snr_crossing_step(curve, threshold: float) -> int:
    """First index whose SNR falls below ``threshold``; ``len(curve)`` if none does."""
    if threshold <= 0:
        raise ParamError("threshold must be positive")
    curve = np.asarray(curve)
    below = np.flatnonzero(curve < threshold)
    return int(below[0]) if below.size else len(curve)
