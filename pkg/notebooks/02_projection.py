"""
From points to range images and back
====================================

Ray-casts a synthetic street scene, rasterises it into an equirectangular
range image and a bird's-eye view, and lifts the range image back to 3D.
"""

import numpy as np

from lidardiff.pointcloud import knn_density, smooth_depths
from lidardiff.projection import ProjectionMeta, backproject_equirect, project_bev, project_equirect
from lidardiff.toydata import toy_scene

meta = ProjectionMeta()
cloud = toy_scene(np.random.default_rng(0), meta)
print(f"scene: {len(cloud)} points, depth {cloud.depth.min():.1f}..{cloud.depth.max():.1f} m")

# %%
# Density-adaptive smoothing averages depths along each point's own ray,
# with a neighbourhood that widens where points are sparse.
density = knn_density(cloud, k=10)
smooth = smooth_depths(cloud, density)
print("mean depth change after smoothing:", np.abs(smooth.depth - cloud.depth).mean())

# %%
# Equirectangular image: nearest return per pixel, depth scaled by d_max.
eq = project_equirect(smooth, meta)
print("equirect", eq.data.shape, "filled fraction", np.count_nonzero(eq.data) / eq.data.size)

bev = project_bev(smooth, ProjectionMeta.for_bev(resolution=(256, 256)))
print("bev", bev.data.shape, "occupied cells", np.count_nonzero(bev.data))

# %%
# Back-projection places one point at every filled pixel centre.
back = backproject_equirect(eq)
print("back-projected points:", len(back))
