"""Image-based LiDAR generation with denoising diffusion.

Submodules: ``pointcloud`` (scan I/O, kNN density, smoothing), ``projection``
(range/BEV images), ``schedule``, ``embedding``, ``denoiser``, ``diffusion``,
``metrics``, ``lpci`` (tensor files), ``toydata`` and ``cli``.
"""
from .embedding import EmbeddingSpec, embed_batch, fourier_embed, sinusoidal_embed
from .errors import LidarDiffError
from .pointcloud import PointCloud, knn_density, load_scan, save_scan, smooth_depths
from .projection import (ProjectionMeta, RangeImage, backproject_equirect, cartesian_to_spherical,
                         project_bev, project_equirect, spherical_to_cartesian)
from .schedule import KINDS, Schedule, make_schedule, ramp_betas, snr, snr_crossing_step, time_dependent_betas

__version__ = "0.1.0"
