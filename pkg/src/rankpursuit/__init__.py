"""Trace-norm regularized matrix recovery on the bounded-rank variety:
proximal Riemannian gradient solvers with a rank-pursuit outer loop."""

from .clustering import clustering_accuracy, lrr_affinity_cluster
from .datasets import Dataset, gen_synthetic, load_triplets, rmse, sample_count, split, write_triplets
from .kernels import (
    ComplexityError,
    LinearMap,
    LowRankMap,
    MatrixMap,
    SumMap,
    SvdStats,
    TruncatedSvdError,
    svd_small,
    thin_qr,
    track_svd_sizes,
    truncated_svd,
)
from .problems import CompletionProblem, LRRProblem, Observations
from .prox import ShrinkKind, prox_step, shrink
from .solvers import (
    LineSearchError,
    OptimalityReport,
    Solution,
    SolveStatus,
    SolverConfig,
    SolverTrace,
    armijo,
    heuristics,
    homotopy_level,
    optimality_check,
    prg_solve,
    rprg_solve,
    sp_solve,
)
from .variety import (
    ConeVector,
    FixedRankMatrix,
    TangentVector,
    cone_direction,
    inner,
    project_to_tangent,
    retract,
    tangent_as_lowrank,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
