"""Optimal experimental design toolkit."""

from .criteria import (
    Certificate,
    Criterion,
    criterion_value,
    equivalence_certificate,
    info_matrix,
    variance_function,
    variance_function_many,
)
from .design import BoxBounds, DesignMeasure, ExactDesign, FiniteCandidateSet, merge_support, new_measure, round_to_exact
from .errors import *  # noqa: F403
from .input_design import InputModel, RationalTF, Spectrum, freq_info_matrix, optimal_spectrum, synthesize_multisine
from .kriging import (
    Kernel,
    KrigingModel,
    ego_optimize,
    expected_improvement,
    fit,
    krige_predict,
    latin_hypercube,
    profile_lengthscale,
    space_fill,
)
from .models import (
    CompartmentModel,
    ExponentialModel,
    LinearModel,
    PolynomialModel,
    RegressionModel,
    WeighingModel,
    eval_sensitivity,
    hadamard_design,
    hadamard_matrix,
    simulate_compartment,
)
from .simulate import (
    ScalarPlant,
    SimTrace,
    discriminate_sequential,
    dispersion,
    ef_estimate,
    gauss_newton,
    sequential_design,
    simulate_lai_wei,
    simulate_nfc,
    simulate_sto_aw,
)
from .solvers import (
    RobustSpec,
    SolverOptions,
    SolverResult,
    exchange_exact,
    fedorov_step,
    fedorov_wynn,
    multiplicative_solve,
    multiplicative_update,
    robust_solve,
)

__version__ = "0.1.0"
