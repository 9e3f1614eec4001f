"""Procedural LiDAR scenes: a flat ground plane with random boxes, ray cast per beam."""
from __future__ import annotations

import numpy as np

from .pointcloud import PointCloud
from .projection import ProjectionMeta, RangeImage, project_equirect

TOY_META = ProjectionMeta(resolution=(32, 128))


def _ray_box_hits(origin_free_dirs, lo, hi):
    """Entry distance of each ray (from the origin) into each axis-aligned box; inf if missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / origin_free_dirs                        # (R, 3)
        t1 = lo[None, :, :] * inv[:, None, :]               # (R, B, 3)
        t2 = hi[None, :, :] * inv[:, None, :]
    tnear = np.nanmax(np.minimum(t1, t2), axis=2)
    tfar = np.nanmin(np.maximum(t1, t2), axis=2)
    hit = (tnear <= tfar) & (tfar > 0)
    tnear = np.where(hit, np.maximum(tnear, 0.0), np.inf)
    return tnear.min(axis=1), tnear.argmin(axis=1)


def toy_scene(rng: np.random.Generator, meta: ProjectionMeta = TOY_META,
              n_boxes=(2, 7), jitter=True) -> PointCloud:
    h, w = meta.resolution
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    fr = rows.ravel() + (rng.uniform(0.05, 0.95, rows.size) if jitter else 0.5)
    fc = cols.ravel() + (rng.uniform(0.05, 0.95, cols.size) if jitter else 0.5)
    theta = meta.theta_min + fr / h * (meta.theta_max - meta.theta_min)
    phi = -np.pi + fc / w * 2 * np.pi
    dirs = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])

    height = rng.uniform(1.6, 1.9)
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, -height / dirs[:, 2], np.inf)
    best = t_ground
    inten = np.full(len(dirs), 0.25)

    k = rng.integers(n_boxes[0], n_boxes[1] + 1)
    if k:
        dist = rng.uniform(5.0, 35.0, k)
        ang = rng.uniform(-np.pi, np.pi, k)
        centre = np.column_stack([dist * np.cos(ang), dist * np.sin(ang)])
        half = rng.uniform(0.8, 3.0, (k, 2))
        top = rng.uniform(1.0, 3.5, k)
        lo = np.column_stack([centre - half, np.full(k, -height)])
        hi = np.column_stack([centre + half, top - height])
        t_box, which = _ray_box_hits(dirs, lo, hi)
        refl = rng.uniform(0.4, 1.0, k)
        closer = t_box < best
        best = np.where(closer, t_box, best)
        inten = np.where(closer, refl[which], inten)

    keep = np.isfinite(best) & (best < meta.d_max)
    return PointCloud(dirs[keep] * best[keep, None], inten[keep], frame_id="toy")


def toy_range_images(n: int, seed: int = 0, meta: ProjectionMeta = TOY_META) -> np.ndarray:
    """``n`` toy equirectangular images as an (n, 1, H, W) float32 array in [0, 1]."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, 1) + tuple(meta.resolution), dtype=np.float32)
    for i in range(n):
        out[i, 0] = project_equirect(toy_scene(rng, meta), meta).data
    return out


def as_range_images(arr, meta: ProjectionMeta = TOY_META, kind="equirect"):
    arr = np.asarray(arr)
    return [RangeImage(a.reshape(a.shape[-2:]), kind, meta) for a in arr]
