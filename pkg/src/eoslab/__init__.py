"""Numerical laboratory for gradient descent on factored scalar losses.

The package studies L(x, y) = l(x * y) for convex-at-the-minimum scalar
losses l: which learning rates leave the minimizer stable, where the
period-two orbits that replace it live, how trajectories drift along
the orbit manifold, and how the same stability functional extends to
multivariate models via Hessian probes.

Modules:

* ``losses``: scalar loss families and the product-stability functional.
* ``dynamics``: factored gradient descent, trajectories, phase labels.
* ``bifurcation``: period-two fixed points, orbit learning rates, the
  drift correction, and limiting-sharpness predictions.
* ``probe``: derivative probes for multivariate models (TinyMLP and
  analytic test models) culminating in a multivariate stability value.
* ``svg``: a dependency-free line-chart renderer for the CSV outputs.
* ``presets``: named, reproducible experiment bundles.
* ``cli``: the ``eoslab`` command line entry point.
"""

from .bifurcation import (
    BifurcationDiagram,
    OrbitRateTable,
    TwoStepTaylor,
    diagram,
    drift_correction,
    find_fixed_points,
    orbit_learning_rate,
    orbit_rate_derivatives,
    predict_final_sharpness,
    taylor_coefficients,
    two_step_converge,
    two_step_residual,
)
from .dynamics import (
    FactoredState,
    Phase,
    RunConfig,
    Trajectory,
    TrajectoryRecord,
    classify_phase,
    gd_step,
    init_from_zs,
    label_phases,
    run,
    scalar_gd_step,
    sharpness,
    two_step_deltas,
)
from .errors import (
    BelowThresholdError,
    BracketingError,
    ChartDataError,
    DivergenceError,
    EosLabError,
    InfeasibleInitError,
    NoFiniteMinimumError,
    NonConvergenceError,
    OutOfRangeError,
    PowerIterationError,
    ZeroAlphaError,
)
from .losses import (
    FAMILIES,
    BinaryCrossEntropy,
    DegRegLoss,
    DerivativeCheck,
    DerivativeValidation,
    MultilayerSquared,
    QuadraticLoss,
    ScalarLoss,
    StabilityValue,
    minimum,
    parse_loss,
    product_stability,
    sigmoid,
    softplus,
    validate_derivatives,
)
from .presets import (
    ExperimentPreset,
    PRESET_NAMES,
    build_preset,
    run_preset,
)
from .probe import (
    AnalyticPolynomial,
    Dataset,
    DifferentiableModel,
    FactoredScalarModel,
    ProbeConfig,
    ProbeReport,
    ProbeSeries,
    ScalarLossModel,
    TinyMLP,
    check_gradient,
    fourth_directional,
    hvp,
    load_dataset_csv,
    make_blob_dataset,
    multivariate_stability,
    pinv_solve,
    save_dataset_csv,
    third_directional,
    top_eigenpair,
    train_and_probe,
)
from .svg import render_svg

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # losses
    "ScalarLoss",
    "BinaryCrossEntropy",
    "MultilayerSquared",
    "DegRegLoss",
    "QuadraticLoss",
    "StabilityValue",
    "DerivativeCheck",
    "DerivativeValidation",
    "FAMILIES",
    "parse_loss",
    "product_stability",
    "minimum",
    "validate_derivatives",
    "sigmoid",
    "softplus",
    # dynamics
    "Phase",
    "FactoredState",
    "RunConfig",
    "TrajectoryRecord",
    "Trajectory",
    "init_from_zs",
    "gd_step",
    "scalar_gd_step",
    "two_step_deltas",
    "sharpness",
    "run",
    "classify_phase",
    "label_phases",
    # bifurcation
    "TwoStepTaylor",
    "BifurcationDiagram",
    "OrbitRateTable",
    "two_step_residual",
    "taylor_coefficients",
    "find_fixed_points",
    "diagram",
    "orbit_learning_rate",
    "orbit_rate_derivatives",
    "drift_correction",
    "predict_final_sharpness",
    "two_step_converge",
    # probe
    "DifferentiableModel",
    "TinyMLP",
    "AnalyticPolynomial",
    "FactoredScalarModel",
    "ScalarLossModel",
    "Dataset",
    "make_blob_dataset",
    "save_dataset_csv",
    "load_dataset_csv",
    "ProbeConfig",
    "ProbeReport",
    "ProbeSeries",
    "hvp",
    "top_eigenpair",
    "third_directional",
    "fourth_directional",
    "pinv_solve",
    "multivariate_stability",
    "check_gradient",
    "train_and_probe",
    # presets and rendering
    "ExperimentPreset",
    "PRESET_NAMES",
    "build_preset",
    "run_preset",
    "render_svg",
    # errors
    "EosLabError",
    "NoFiniteMinimumError",
    "InfeasibleInitError",
    "DivergenceError",
    "BelowThresholdError",
    "BracketingError",
    "OutOfRangeError",
    "ZeroAlphaError",
    "NonConvergenceError",
    "PowerIterationError",
    "ChartDataError",
]
