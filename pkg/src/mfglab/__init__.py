"""Pseudo-spectral laboratory for a mean field game system, its
linearization, and the associated master equation on the flat torus."""

from .errors import (
    AuditDomainError,
    BlowUpError,
    ConfigError,
    CorruptCacheError,
    DensityDomainError,
    InputShapeError,
    MfgLabError,
    NonConvergenceError,
    NonlinearityDomainError,
    OutsideRadiusError,
    PartialKernelError,
    UnsupportedGridError,
)
from .spectral import (
    DiracAt,
    DiracGradientAt,
    SpectralField,
    TorusGrid,
    ZeroMeanField,
    analyze,
    gradient,
    lambda_apply,
    mollify,
    pointwise_apply,
    project_zero_mean,
    sobolev_norm,
    synthesize,
    synthesize_datum,
    torus_grid,
    uniform_density,
)
from .model import (
    HamiltonianSpec,
    PayoffSpec,
    audit_assumptions,
    builtin_hamiltonian,
    builtin_payoff,
    dg_dm_apply,
    g_eval,
    h_fields,
)
from .mfg import (
    PathPair,
    PicardParams,
    ProblemSetup,
    SolveDiagnostics,
    TimeGrid,
    fp_forward_sweep,
    heat_propagate,
    hjb_backward_sweep,
    solve_mfg,
)
from .linearized import (
    FrozenCoefficients,
    LinearizedPair,
    freeze_coefficients,
    negative_norm_trace,
    solve_linearized,
)
from .master import (
    Kernel,
    MasterEvaluation,
    evaluate_master,
    extract_kernel,
    master_residual,
    uniqueness_consistency,
    wasserstein_gradient,
)
from .experiments import (
    TaylorTriple,
    default_direction,
    hminus_bound_study,
    kernel_regularity_study,
    stability_study,
    taylor_rate_study,
)
from .report import StudyReport

__version__ = "0.1.0"
