"""Two-stage calibration of multi-dimensional ODE systems from noisy data.

Stage 1 denoises the observed trajectories and extracts derivatives with
boundary-corrected Gasser-Muller kernel estimators; Stage 2 regresses the
highest-order derivative on the lower-order states with a sparsity-constrained
ReLU feedforward network.
"""

from .kernels import (
    BoundaryKernel,
    KernelFamily,
    InvalidOrder,
    SingularMomentSystem,
    build_kernel,
    eval_kernel,
    kernel_moment,
)
from .smoother import (
    BandwidthTooLarge,
    EmptyCandidateSet,
    GasserMullerSmoother,
    SmootherConfig,
    TimeSeriesPanel,
    TrajectoryEstimate,
    default_bandwidth_grid,
    gm_estimate,
    partition_points,
    select_bandwidth,
    smooth_panel,
)
from .odesim import (
    DenseTrajectory,
    InvalidDim,
    NoiseSpec,
    NonFiniteState,
    OdeProblem,
    integrate,
    make_design1,
    make_design2,
    philox_stream,
    sample_panel,
)
from .network import (
    ClassSpec,
    Diverged,
    ReluNetwork,
    ShapeMismatch,
    SparseReluRegressor,
    TrainConfig,
    check_architecture,
    forward,
    grad,
    init_network,
    load_checkpoint,
    loss,
    project,
    save_checkpoint,
    train,
)
from .evaluation import (
    CompositionalSpec,
    GridMismatch,
    MetricReport,
    intrinsic,
    metrics,
    rate_bound,
)
from .pipeline import OdeCalibrator

__version__ = "0.1.0"

__all__ = [
    "BoundaryKernel",
    "KernelFamily",
    "InvalidOrder",
    "SingularMomentSystem",
    "build_kernel",
    "eval_kernel",
    "kernel_moment",
    "BandwidthTooLarge",
    "EmptyCandidateSet",
    "GasserMullerSmoother",
    "SmootherConfig",
    "TimeSeriesPanel",
    "TrajectoryEstimate",
    "default_bandwidth_grid",
    "gm_estimate",
    "partition_points",
    "select_bandwidth",
    "smooth_panel",
    "DenseTrajectory",
    "InvalidDim",
    "NoiseSpec",
    "NonFiniteState",
    "OdeProblem",
    "integrate",
    "make_design1",
    "make_design2",
    "philox_stream",
    "sample_panel",
    "ClassSpec",
    "Diverged",
    "ReluNetwork",
    "ShapeMismatch",
    "SparseReluRegressor",
    "TrainConfig",
    "check_architecture",
    "forward",
    "grad",
    "init_network",
    "load_checkpoint",
    "loss",
    "project",
    "save_checkpoint",
    "train",
    "CompositionalSpec",
    "GridMismatch",
    "MetricReport",
    "intrinsic",
    "metrics",
    "rate_bound",
    "OdeCalibrator",
    "__version__",
]
