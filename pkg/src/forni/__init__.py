"""Fiber orientation estimation using neighborhood information.

Sparse reconstruction of fiber orientations over a fixed prolate-tensor
dictionary, with weighted l1 penalties derived from neighboring voxels and
a block coordinate descent over the volume.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    EstimationConfig,
    FOField,
    aggregate_similarity,
    basis_neighbor_similarity,
    build_weights,
    cfari,
    estimate,
    extract_likely_fos,
    joint_objective,
)
from .dti import fa_md, fit_tensor, fit_tensors, log_euclidean_distance, voxel_similarity  # noqa: E402
from .geometry import (  # noqa: E402
    GradientScheme,
    TensorBasis,
    build_basis,
    build_dictionary,
    default_basis,
    tessellate_octahedron,
)
from .metrics import aggregate, e_fo  # noqa: E402
from .phantom import PhantomSpec, add_rician, default_spec, make_phantom, rasterize, synthesize  # noqa: E402
from .solver import extract_fos, normalize, solve_weighted_l1  # noqa: E402
