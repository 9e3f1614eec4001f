"""Raw LiDAR scans: loading, kNN density and density-adaptive depth smoothing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import lpci
from .errors import FormatError, InsufficientPoints, IoError, ShapeError

KITTI_RECORD = np.dtype("<f4")
RECORD_BYTES = 16


def _frozen(arr, dtype=np.float64):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Sensor-centric points with per-point reflectance.

    ``xyz`` is an (N, 3) array in meters and ``intensity`` an (N,) array in
    [0, 1]. Arrays are copied and made read-only on construction.
    """

    xyz: np.ndarray
    intensity: np.ndarray = None
    frame_id: str = ""

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if self.intensity is None:
            inten = np.ones(len(xyz))
        else:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(inten) != len(xyz):
            raise ShapeError(f"{len(xyz)} points but {len(inten)} intensities")
        if not np.all(np.isfinite(xyz)):
            raise FormatError("point coordinates must be finite")
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "intensity", _frozen(np.clip(inten, 0.0, 1.0)))

    def __len__(self):
        return len(self.xyz)

    @property
    def depth(self) -> np.ndarray:
        return np.linalg.norm(self.xyz, axis=1)

    def as_array(self) -> np.ndarray:
        """(N, 4) float32 matrix of x, y, z, intensity."""
        return np.column_stack([self.xyz, self.intensity]).astype(np.float32)

    def with_xyz(self, xyz) -> "PointCloud":
        return PointCloud(xyz, self.intensity, self.frame_id)


@dataclass(frozen=True)
class DensityEstimate:
    """Mean distance from each point to its ``k`` nearest other points."""

    values: np.ndarray
    k: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self):
        return len(self.values)


def _guess_format(path: Path) -> str:
    return "lpci" if path.suffix.lower() == ".lpci" else "kitti-bin"


def load_scan(path, format: str | None = None) -> PointCloud:
    """Read a scan file into a :class:`PointCloud`.

    ``format`` is ``"kitti-bin"`` (headerless little-endian float32 x, y, z,
    intensity records) or ``"lpci"`` (an N x 4 tensor). Guessed from the
    suffix when omitted.
    """
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "lpci":
        data, _ = lpci.load(path)
        if data.ndim != 2 or data.shape[1] != 4:
            raise FormatError(f"{path}: expected an N x 4 point tensor, got {data.shape}")
        if len(data) == 0:
            raise FormatError(f"{path}: empty scan")
    elif fmt == "kitti-bin":
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
        if len(blob) == 0:
            raise FormatError(f"{path}: empty scan")
        if len(blob) % RECORD_BYTES:
            raise FormatError(
                f"{path}: truncated record ({len(blob)} bytes is not a multiple of {RECORD_BYTES})")
        data = np.frombuffer(blob, dtype=KITTI_RECORD).reshape(-1, 4)
    else:
        raise FormatError(f"unknown scan format {fmt!r}")
    return PointCloud(data[:, :3], data[:, 3], frame_id=path.stem)


def save_scan(cloud: PointCloud, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    arr = cloud.as_array()
    if fmt == "lpci":
        lpci.save(path, arr, {"frame_id": cloud.frame_id})
    elif fmt == "kitti-bin":
        try:
            path.write_bytes(arr.astype(KITTI_RECORD).tobytes())
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
    else:
        raise FormatError(f"unknown scan format {fmt!r}")


def knn_density(cloud: PointCloud, k: int = 10) -> DensityEstimate:
    """Mean Euclidean distance from every point to its ``k`` nearest neighbours.

    Uses an exact kd-tree query; the point itself is excluded.
    """
    if k < 1:
        raise InsufficientPoints(f"k must be >= 1, got {k}")
    n = len(cloud)
    if n <= k:
        raise InsufficientPoints(f"need more than k={k} points, cloud has {n}")
    tree = cKDTree(cloud.xyz)
    dist, _ = tree.query(cloud.xyz, k=k + 1)
    # column 0 is a zero-distance hit (the point itself or an exact duplicate)
    return DensityEstimate(dist[:, 1:].mean(axis=1), k)


def smooth_depths(cloud: PointCloud, density: DensityEstimate,
                  sigma_scale: float = 1.0, radius_scale: float = 3.0) -> PointCloud:
    """Gaussian-average each point's range over a density-sized neighbourhood.

    Point ``i`` averages the ranges of all points within
    ``radius_scale * density_i`` (itself included) with weights
    ``exp(-|p - q|^2 / (2 sigma_i^2))``, ``sigma_i = sigma_scale * density_i``.
    Only the range changes: each point is rescaled along its own ray.
    """
    if len(density) != len(cloud):
        raise ShapeError(f"density has {len(density)} entries for {len(cloud)} points")
    if len(cloud) == 0:
        return cloud
    xyz = cloud.xyz
    depth = cloud.depth
    sigma = sigma_scale * density.values
    radius = radius_scale * density.values

    tree = cKDTree(xyz)
    neigh = tree.query_ball_point(xyz, r=radius)
    counts = np.fromiter((len(nb) for nb in neigh), dtype=np.int64, count=len(neigh))
    centre = np.repeat(np.arange(len(xyz)), counts)
    other = np.fromiter((j for nb in neigh for j in nb), dtype=np.int64, count=counts.sum())

    d2 = np.sum((xyz[centre] - xyz[other]) ** 2, axis=1)
    s2 = sigma[centre] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(s2 > 0, np.exp(-d2 / (2.0 * s2)), (d2 == 0).astype(float))
    num = np.bincount(centre, weights=w * depth[other], minlength=len(xyz))
    den = np.bincount(centre, weights=w, minlength=len(xyz))

    new_depth = depth.copy()
    ok = (den > 0) & (depth > 0)
    new_depth[ok] = num[ok] / den[ok]
    scale = np.ones_like(depth)
    scale[ok] = new_depth[ok] / depth[ok]
    return cloud.with_xyz(xyz * scale[:, None])
