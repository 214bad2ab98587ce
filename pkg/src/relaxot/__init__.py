"""
Relaxed and regularized discrete optimal transport between point clouds,
with color transfer and color normalization pipelines built on top.
"""

from .geometry import (GradientOperator, NeighborGraph, as_cloud, build_cost_matrix,
                       knn_graph, read_cloud_csv, write_cloud_csv)
from .polytope import (Feasibility, LinearOracle, RelaxationBounds, check_feasible,
                       coupling_violation, linear_oracle, project_asymmetric,
                       project_capped_rows, project_simplex)
from .regularized import (RegularizerSpec, SolveReport, SolverError, TransferMap,
                          energy_asymmetric, energy_sobolev, energy_tv, extract_map,
                          frank_wolfe_solve, grad_sobolev, primal_dual_asymmetric,
                          tv_lp_solve)
from .barycenter import (BarycenterProblem, BarycenterState, asymmetric_distance,
                         barycenter_energy, bcd_barycenter)
from .color import (ImageRaster, NormalizeParams, Palette, TransferParams, channel_distance,
                    color_normalize, color_transfer, kmeans_palette, load_image, save_image,
                    upsample_map)

__version__ = "0.1.0"
