"""Constructive control design on implicit target relations.

The toolkit splits a fibered state space along the connection induced by a
target relation, synthesizes the fiber input that makes the relation
exponentially attractive, simulates the closed loops deterministically, and
certifies estimator excitation.  See the study runner in ``pni.cli`` for the
bundled experiments.
"""
from .geometry import (
    ImplicitManifold,
    IntegrabilityResult,
    ResidualSign,
    SingularBlockError,
    SplitMetric,
    TangentSplit,
    build_metric,
    check_integrability,
    connection_from_metric,
    orthogonality_defect,
    split_tangent,
    split_tangent_3d,
)
from .synthesis import (
    ClosedLoopField,
    ConditionedLinear,
    ControlAffinePlant,
    KrasovskiiResult,
    PniLaw,
    close_loop,
    conditioned_field,
    krasovskii_check,
    pni_control,
    residual,
    residual_decay_defect,
    storage,
    target_field,
)
from .sim import (
    BlowUpError,
    ConvergenceReport,
    InsufficientSamplesError,
    NonFiniteFieldError,
    SimConfig,
    Trajectory,
    central_derivative,
    fit_exponential_rate,
    integrate,
    linear_analytic_oracle,
    matrix_exponential,
    rate_split,
    transient_metrics,
)
from .systems import (
    AffineField,
    BuckLoop,
    BuckOpenLoop,
    BuckParams,
    BuckState,
    SynthesizedSystem,
    buck_dual_pi,
    buck_open_loop,
    buck_pni,
    eigenvalues,
    linearize,
    make_a1,
    make_a2,
    make_a3,
)
from .estimation import (
    EstimationResult,
    EstimatorState,
    ExcitationKind,
    ExcitationVerdict,
    RegressorSignal,
    cge_field,
    cge_matrix,
    excitation_check,
    ge_field,
    ie_test_signal,
    mre_step,
    pe_test_signal,
    run_estimation,
)

__version__ = "0.1.0"
