"""Point-interaction (Foldy-Lax) electromagnetic scattering by clusters of small particles."""
from .farfield import FarFieldPattern, foldy_far_field, pattern_distance, sphere_grid, volume_far_field
from .foldy import FoldyProblem, FoldySolution, assemble, solution_norm_check, solve
from .geometry import Ball, Cluster, Ellipsoid, MeshShape, VoxelShape, build_grid_cluster, metrics, random_cluster
from .kernels import PlaneWave, WaveNumber, dyadic_pi, grad_phi, phi
from .oracle import ls_solve, sphere_series_far_field, voxel_tensor_set
from .tensors import Material, TensorSet, aniso_tensor_numeric, pec_tensors_numeric, tensor_set_for_cluster

__version__ = "0.1.0"

__all__ = [
    "Ball", "Cluster", "Ellipsoid", "MeshShape", "VoxelShape", "build_grid_cluster", "metrics", "random_cluster",
    "PlaneWave", "WaveNumber", "phi", "grad_phi", "dyadic_pi",
    "Material", "TensorSet", "aniso_tensor_numeric", "pec_tensors_numeric", "tensor_set_for_cluster",
    "FoldyProblem", "FoldySolution", "assemble", "solve", "solution_norm_check",
    "FarFieldPattern", "foldy_far_field", "volume_far_field", "pattern_distance", "sphere_grid",
    "ls_solve", "sphere_series_far_field", "voxel_tensor_set",
]
