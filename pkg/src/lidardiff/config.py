"""The JSON run configuration shared by every CLI command."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .denoiser import OptimizerConfig, ReferenceUNetConfig
from .embedding import EmbeddingSpec
from .errors import ParamError
from .metrics import MetricConfig
from .projection import DEFAULT_THETA_MAX, DEFAULT_THETA_MIN, ProjectionMeta
from .schedule import extras_for, make_schedule


@dataclass
class ProjectionSection:
    d_max: float = 80.0
    theta_min: float = DEFAULT_THETA_MIN
    theta_max: float = DEFAULT_THETA_MAX
    bev_extent: float = 120.0
    equirect_resolution: list = field(default_factory=lambda: [64, 1024])
    bev_resolution: list = field(default_factory=lambda: [1024, 1024])

    def meta(self, kind="equirect") -> ProjectionMeta:
        res = self.equirect_resolution if kind == "equirect" else self.bev_resolution
        return ProjectionMeta(self.d_max, self.theta_min, self.theta_max, self.bev_extent, tuple(res))


@dataclass
class SmoothingSection:
    enabled: bool = False
    k: int = 10
    sigma_scale: float = 1.0
    radius_scale: float = 3.0


@dataclass
class ScheduleSection:
    kind: str = "ramp"
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    extras: dict = field(default_factory=dict)

    def build(self):
        return make_schedule(self.kind, self.steps, self.beta_start, self.beta_end,
                             **extras_for(self.kind, self.extras))


@dataclass
class EmbeddingSection:
    kind: str = "fourier"
    d: int = 128
    N: int = 4

    def spec(self) -> EmbeddingSpec:
        return EmbeddingSpec(self.d, self.N, self.kind)


@dataclass
class DenoiserSection:
    base_channels: int = 32
    depth: int = 3
    dropout_rate: float = 0.1
    in_channels: int = 1

    def unet_config(self, embed_dim) -> ReferenceUNetConfig:
        return ReferenceUNetConfig(self.base_channels, self.depth, self.dropout_rate,
                                   embed_dim, self.in_channels)


@dataclass
class TrainingSection:
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    patience: int = 5
    max_steps: int | None = None

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.learning_rate, self.weight_decay)


@dataclass
class SamplingSection:
    steps: int | None = None
    batch_size: int = 8


@dataclass
class MetricsSection:
    bins: int = 256
    pool: list = field(default_factory=lambda: [64, 64])
    bandwidth: float | None = None

    def metric_config(self) -> MetricConfig:
        return MetricConfig(self.bins, tuple(self.pool), self.bandwidth)


@dataclass
class RunConfig:
    projection: ProjectionSection = field(default_factory=ProjectionSection)
    smoothing: SmoothingSection = field(default_factory=SmoothingSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParamError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, assignments) -> "RunConfig":
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in assignments or ():
            if "=" not in item:
                raise ParamError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                if not isinstance(node.get(p), dict):
                    raise ParamError(f"unknown config key {key!r}")
                node = node[p]
            if leaf not in node:
                raise ParamError(f"unknown config key {key!r}")
            node[leaf] = value
        return RunConfig.from_dict(data)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ParamError(f"config section {prefix or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ParamError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)
