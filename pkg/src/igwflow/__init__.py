"""Inner-product Gromov-Wasserstein geometry on point clouds.

Distances and their dual solver, the mobility operator, IGW gradient flows,
the IGW metric tensor and action, and flow matching between shapes.
"""

__version__ = "0.1.0"

from .cloud import (  # noqa: E402
    Coupling,
    PointCloud,
    apply_linear,
    covariance,
    cross_covariance,
    generate_shape,
    second_moment,
)
from .errors import (  # noqa: E402
    CouplingError,
    FlowDegenerateError,
    IGWError,
    InnerSolverDivergence,
    MapDoesNotExistError,
    NonFiniteError,
    ParseError,
    SingularityError,
    SizeGuardError,
    UnsupportedMarginalsError,
)
from .functionals import Functional  # noqa: E402
from .igw import IGWResult, igw_alternating, igw_bruteforce, igw_objective, psd_rotation  # noqa: E402
from .ot import solve_assignment, w2_distance  # noqa: E402

__all__ = [
    "Coupling",
    "CouplingError",
    "FlowDegenerateError",
    "Functional",
    "IGWError",
    "IGWResult",
    "InnerSolverDivergence",
    "MapDoesNotExistError",
    "NonFiniteError",
    "ParseError",
    "PointCloud",
    "SingularityError",
    "SizeGuardError",
    "UnsupportedMarginalsError",
    "apply_linear",
    "covariance",
    "cross_covariance",
    "generate_shape",
    "igw_alternating",
    "igw_bruteforce",
    "igw_objective",
    "psd_rotation",
    "second_moment",
    "solve_assignment",
    "w2_distance",
]
