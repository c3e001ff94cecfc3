"""Monte Carlo and analytic toolkit for third-order quadrature correlations
of the damped nondegenerate parametric oscillator under two rival theories:
quantum mechanics in the positive-P phase-space representation, and
stochastic electrodynamics (classical fields plus vacuum noise).

The quantum moments are cubic in the dimensionless nonlinear coupling g,
the semiclassical ones linear, so the two theories make measurably
different predictions; this package simulates both, evaluates the
closed-form leading-order results, computes external homodyne moments and
their signal-to-noise for finite samples, and reproduces the reference
figures and tables through the command-line runner.
"""

from .core import (
    DegenerateEnsemble,
    GridMismatch,
    HomodyneParams,
    InvalidParam,
    NonFiniteError,
    PhaseAngles,
    PositivePPoint,
    SedPoint,
    SystemParams,
    TimeGrid,
    UnequalDamping,
    ValidationReport,
    WindowOutOfRange,
    validate_params,
)
from .engine import (
    IntegratorConfig,
    NoiseBlock,
    Trajectory,
    gen_pp_noise,
    gen_sed_noise,
    integrate_path,
    step_euler,
    step_semi_implicit,
)
from .models import PositivePModel, SedModel, model_for
from .analytic import (
    AnalyticPrediction,
    CrystalSpec,
    crystal_to_coupling,
    qm_external,
    qm_external_time_exact,
    qm_moment_M,
    qm_triple_intracavity,
    sed_external,
    sed_moment_M,
    sed_triple_intracavity,
    signal_to_noise,
    snr_unity_sample_size,
)
from .estimators import (
    EnsembleResult,
    MomentEstimate,
    external_moment_estimate,
    integrated_quadrature,
    quadrature,
    run_external_experiment,
    run_intracavity_experiment,
    sample_states_at,
    triple_central_moment,
)

__version__ = "0.1.0"
