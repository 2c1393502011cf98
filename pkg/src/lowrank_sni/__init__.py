"""Low-rank approximation and completion by splitting numerical integration."""

from .baselines import power_iteration, randomized_svd
from .completion import (
    EmptyTestSet,
    ObservationSet,
    PredictionScore,
    evaluate_rmse,
    objective_f1,
    sni_complete,
    sparse_residual,
)
from .datasets import (
    FormatError,
    RatingsFileSpec,
    SyntheticSpec,
    load_ratings,
    make_synthetic,
    read_observations,
    split,
    write_observations,
)
from .integrators import (
    ConvergenceTrace,
    Mode,
    SolverConfig,
    SvdResult,
    dense_residual,
    dlra_run,
    dlra_step,
    run_with_trace,
    sni_run,
    sni_step,
)
from .manifold import (
    LowRankFactors,
    TangentComponents,
    assemble,
    random_factors,
    riemannian_gradient_components,
    tangent_project,
)
from .matcore import RankDeficient, SingularCore, fro_norm, sigma_min, small_svd, thin_qr

__version__ = "0.1.0"
