"""Numerical laboratory for 1-D parabolic equations with an interior
degeneracy and an interior inverse singularity.

The operator u_t - (a u_x)_x - lambda u / b with a(x0) = 0 and b(x0) = 0 at
an interior point x0 is discretized with P1 finite elements on graded
meshes; the package computes discrete Hardy-Poincare constants and
coercivity, time-steps the forward and adjoint problems with exact discrete
duality, evaluates weighted (Carleman) and Caccioppoli inequalities on
manufactured solutions, synthesizes null controls by penalized HUM, and
estimates observability constants.
"""

from .carleman import (
    CarlemanReport,
    CarlemanWeight,
    NondegWeight,
    WeightError,
    caccioppoli,
    evaluate,
    make_nondeg_weight,
    make_weight,
    manufactured_solution,
    s_scan,
)
from .coefficients import (
    CoefficientError,
    CoefficientPair,
    DegeneracyClass,
    HypothesisAudit,
    PowerPrototype,
    Tabulated,
    admissible_lambda,
    audit,
    classify,
    load_tabulated_csv,
)
from .control import (
    ControlResult,
    ControlSetupError,
    HUMProblem,
    ObservabilityReport,
    SweepReport,
    hum_control,
    observability_constant,
    observability_sweep,
    verify_cost_bound,
)
from .evolution import (
    ControlPattern,
    InadmissibleLambdaError,
    InstabilityError,
    ThetaStepper,
    TimeGrid,
    Trajectory,
    control_pairing,
    energy,
    omega_mass,
    solve_adjoint,
    solve_forward,
)
from .fem import (
    AssemblyError,
    BandedSPD,
    DiscreteOperator,
    Mesh,
    MeshError,
    NotSPDError,
    assemble,
    build_mesh,
    default_grading,
)
from .hardy import (
    CoercivityReport,
    EigenConvergenceError,
    HardyReport,
    analytic_hardy_bound,
    best_constant,
    best_constant_for,
    coercivity,
    verify_hp_weight,
)

__version__ = "0.1.0"
