"""Non-watertight surface reconstruction from point clouds.

A spectral Poisson solver turns an oriented point cloud into an indicator
grid; a surface mask (ground truth, Laplacian baseline, or a small 3D U-Net)
restricts marching cubes to the region where the surface actually lies.
"""

__version__ = "0.1.0"
