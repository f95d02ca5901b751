"""Moment-inequality testing with generalized and constrained moment selection.

The package tests whether finitely many moment inequalities hold at a fixed
parameter value. It evaluates the sum-of-violations and quadratic-form
statistics, simulates selection-based critical values (asymptotic normal or
bootstrap), and includes an empirical-likelihood tilting step that sharpens
the selection. A two-step rectangle-based procedure and a table-driven
refined-selection hook serve as benchmarks, and a Monte Carlo harness
reproduces size and local-power experiments.
"""

from .critical import (
    BootstrapDraws,
    CriticalValueReport,
    RmsTables,
    TestDecision,
    cms_critical_value,
    gms_asymptotic,
    gms_bootstrap,
    rms_hook,
    rsw_test,
    run_test,
    upper_quantile,
)
from .errors import (
    CmselectError,
    CsvFormatError,
    DegenerateColumn,
    DimensionCap,
    DomainError,
    MissingBaseline,
    MissingTable,
    NoConvergence,
    NotPositiveDefinite,
    QPNoConvergence,
    SingularCovariance,
    TooManyDegenerate,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    corrections_from,
    emit,
    mnrp_correction,
    null_patterns,
    run_mnrp,
    run_power,
    simulate_sample,
)
from .moments import (
    CorrelationFamily,
    MomentSample,
    MomentSummary,
    load_csv,
    make_toeplitz,
    studentized_scaled_mean,
    summarize,
)
from .selection import (
    KappaSchedule,
    SelectionVector,
    kappa,
    phi1,
    phi2,
    phi3,
    phi4,
    phi5,
    phi_k,
)
from .statistics import (
    AqlrResult,
    ShiftedInput,
    StatisticKind,
    adjust_covariance,
    aqlr,
    evaluate,
    mmm,
)
from .tilt import TiltResult, feasible, tilt, tilted_selection

__version__ = "0.1.0"
