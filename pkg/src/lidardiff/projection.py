"""Point cloud <-> image projections.

Equirectangular images store normalised range per (inclination, azimuth)
cell; BEV images store the strongest reflectance seen from above. Zero is the
"no return" value in both.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import lpci
from .errors import DegeneratePoint, EmptyInput, FormatError, KindMismatch, ParamError
from .pointcloud import PointCloud

EQUIRECT = "equirect"
BEV = "bev"

DEFAULT_THETA_MIN = math.pi / 2 - math.radians(2.0)
DEFAULT_THETA_MAX = math.pi / 2 + math.radians(24.8)


@dataclass(frozen=True)
class ProjectionMeta:
    d_max: float = 80.0
    theta_min: float = DEFAULT_THETA_MIN
    theta_max: float = DEFAULT_THETA_MAX
    bev_extent: float = 120.0
    resolution: tuple = (64, 1024)

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if self.d_max <= 0:
            raise ParamError("d_max must be positive")
        if not self.theta_min < self.theta_max:
            raise ParamError("theta_min must be below theta_max")
        if self.bev_extent <= 0:
            raise ParamError("bev_extent must be positive")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise ParamError(f"bad resolution {self.resolution}")

    @classmethod
    def for_bev(cls, **kw):
        kw.setdefault("resolution", (1024, 1024))
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class RangeImage:
    data: np.ndarray
    kind: str
    meta: ProjectionMeta = field(default_factory=ProjectionMeta)

    def __post_init__(self):
        if self.kind not in (EQUIRECT, BEV):
            raise KindMismatch(f"unknown image kind {self.kind!r}")
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 2:
            raise FormatError(f"range image must be 2-D, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def save(self, path):
        lpci.save(path, self.data, {"kind": self.kind, "meta": self.meta.to_dict()})

    @classmethod
    def load(cls, path):
        data, attrs = lpci.load(path)
        if "kind" not in attrs or "meta" not in attrs:
            raise FormatError(f"{path}: missing range-image kind/meta in header")
        return cls(data, attrs["kind"], ProjectionMeta.from_dict(attrs["meta"]))


def cartesian_to_spherical(xyz) -> np.ndarray:
    """(..., 3) Cartesian points to (..., 3) stacks of (theta, phi, d).

    theta is the inclination from +z in [0, pi], phi = atan2(y, x).
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    d = np.linalg.norm(xyz, axis=-1)
    if np.any(d == 0):
        raise DegeneratePoint("cannot take spherical coordinates of the origin")
    # arccos(z / d) loses the horizontal component near the poles
    theta = np.arctan2(np.hypot(xyz[..., 0], xyz[..., 1]), xyz[..., 2])
    phi = np.arctan2(xyz[..., 1], xyz[..., 0])
    return np.stack([theta, phi, d], axis=-1)


def spherical_to_cartesian(tpd) -> np.ndarray:
    tpd = np.asarray(tpd, dtype=np.float64)
    theta, phi, d = tpd[..., 0], tpd[..., 1], tpd[..., 2]
    if np.any(d <= 0):
        raise DegeneratePoint("range must be positive")
    st = np.sin(theta)
    return np.stack([d * st * np.cos(phi), d * st * np.sin(phi), d * np.cos(theta)], axis=-1)


def equirect_bins(theta, phi, meta: ProjectionMeta):
    h, w = meta.resolution
    span = meta.theta_max - meta.theta_min
    row = np.floor((theta - meta.theta_min) / span * h).astype(np.int64)
    col = np.floor((phi + np.pi) / (2 * np.pi) * w).astype(np.int64)
    return np.clip(row, 0, h - 1), np.clip(col, 0, w - 1)


def project_equirect(cloud: PointCloud, meta: ProjectionMeta | None = None) -> RangeImage:
    """Rasterise ``cloud`` into a range image, keeping the nearest return per cell."""
    meta = meta or ProjectionMeta()
    if len(cloud) == 0:
        raise EmptyInput("cannot project an empty cloud")
    xyz = cloud.xyz[np.any(cloud.xyz != 0, axis=1)]
    h, w = meta.resolution
    nearest = np.full(h * w, np.inf)
    if len(xyz):
        theta, phi, d = cartesian_to_spherical(xyz).T
        row, col = equirect_bins(theta, phi, meta)
        np.minimum.at(nearest, row * w + col, d)
    img = np.zeros(h * w)
    hit = np.isfinite(nearest)
    img[hit] = np.minimum(nearest[hit] / meta.d_max, 1.0)
    return RangeImage(img.reshape(h, w), EQUIRECT, meta)


def backproject_equirect(img: RangeImage) -> PointCloud:
    """Lift every nonzero pixel to a 3D point at its cell centre."""
    if img.kind != EQUIRECT:
        raise KindMismatch(f"back-projection needs an equirect image, got {img.kind}")
    meta = img.meta
    h, w = img.shape
    rows, cols = np.nonzero(img.data)
    if len(rows) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros(0), frame_id="backprojected")
    theta = meta.theta_min + (rows + 0.5) / h * (meta.theta_max - meta.theta_min)
    phi = -np.pi + (cols + 0.5) / w * 2 * np.pi
    d = img.data[rows, cols].astype(np.float64) * meta.d_max
    xyz = spherical_to_cartesian(np.column_stack([theta, phi, d]))
    return PointCloud(xyz, np.ones(len(xyz)), frame_id="backprojected")


def project_bev(cloud: PointCloud, meta: ProjectionMeta | None = None) -> RangeImage:
    """Top-down orthographic raster of intensity; the brightest point wins a cell.

    Only points strictly inside the square ``|x|, |y| < bev_extent`` are kept.
    """
    meta = meta or ProjectionMeta.for_bev()
    if len(cloud) == 0:
        raise EmptyInput("cannot project an empty cloud")
    h, w = meta.resolution
    ext = meta.bev_extent
    x, y = cloud.xyz[:, 0], cloud.xyz[:, 1]
    keep = (np.abs(x) < ext) & (np.abs(y) < ext)
    row = np.floor((x[keep] + ext) / (2 * ext) * h).astype(np.int64)
    col = np.floor((y[keep] + ext) / (2 * ext) * w).astype(np.int64)
    row, col = np.clip(row, 0, h - 1), np.clip(col, 0, w - 1)
    img = np.zeros(h * w)
    np.maximum.at(img, row * w + col, cloud.intensity[keep])
    return RangeImage(img.reshape(h, w), BEV, meta)
