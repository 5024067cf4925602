"""Adaptive estimation and inference in L_p for the Gaussian white noise model.

Everything operates on wavelet coefficients: a function is a
:class:`CoeffField` and an observation is that field plus independent
``N(0, 1/n)`` noise.
"""

__version__ = "0.1.0"

from .adversarial import (
    AdversarialSpec,
    likelihood_ratio_Z,
    lower_bound_errors,
    sample_deterministic_I,
    sample_prior,
    verify_Z_moment,
)
from .confidence import (
    ConfidenceSet,
    confset_contains,
    confset_diameter,
    confset_low_smoothness,
    confset_segment,
    confset_two_point,
)
from .estimation import LepskiConfig, adaptive_estimate, fit_risk_constant, lepski_select, oracle_jstar
from .harness import ExperimentRecord, ExperimentSpec, rate_slope, run_experiment, summarize
from .moments import (
    LevelStatistic,
    MomentTable,
    even_floor,
    fhat_even,
    fhat_p,
    fhat_split_product,
    gaussian_abs_moment,
    infimum_statistic,
    level_statistic,
    real_binomial,
)
from .sequence_model import (
    BesovBall,
    CoeffField,
    InvalidModelError,
    ObservationModel,
    ball_contains,
    ball_distance,
    besov_seq_norm,
    extract_level,
    make_truth,
    project_levels,
    seq_norm,
    simulate_batch,
    simulate_observation,
)
from .testing import (
    CalibrationError,
    TestConfig,
    TestOutcome,
    calibrate_constants,
    estimate_rhat,
    run_test,
    test_family_at,
    thresholds,
)
