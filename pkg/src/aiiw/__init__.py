"""Sensitivity analysis for trials with outcome-informative assessment times.

Estimates spline mean curves from irregular longitudinal assessments by
augmented inverse-intensity weighting, indexed by an exponential-tilting
sensitivity parameter that is anchored at assessment-at-random.
"""
import os as _os

# Keep BLAS single threaded: the bootstrap forks worker processes, and
# letting each inherit a full thread pool oversubscribes the cores.
_os.environ.setdefault("OMP_NUM_THREADS", "1")
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from .errors import (AiiwError, ConfigError, DataError, EnvelopeViolationError,
                     InferenceError, MonotoneLikelihoodError, NumericError,
                     TiltOverflowError)
from .estimator import (EstimatorWorkspace, InfluenceContribution,
                        SensitivityResult, TargetSummary, TreatmentEffect,
                        bootstrap_t_ci, contrast_grid, estimate_beta,
                        fit_nuisances, influence_contribution, m_matrix,
                        mu_at, plausible_alpha_range, run_sensitivity,
                        treatment_effect, variance_beta)
from .intensity import (IntensityFit, PartialLikelihoodFit, SmoothedRate,
                        StepFunction, breslow_cumulative, build_risk_sets,
                        fit_intensity, fit_partial_likelihood, lambda_hat,
                        score_fd_gap, smooth_baseline)
from .outcome import (OutcomeFit, TiltTable, fit_outcome_model,
                      outcome_design, rho_hat, tilted_mean, tilted_moments,
                      tilted_moments_vec)
from .config import (ArmConfig, RunConfig, StudyConfig, build_config,
                     load_config)
from .io import export_subjects, ingest, provenance_line, write_csv, write_json
from .records import ARMS, ObservedPastFeatures, SubjectRecord, features_at
from .simulate import (DgmSpec, PiecewiseConstant, StudyResult, TruthResult,
                       batch_to_records, capped_tilt_mean, compute_truth,
                       compute_truth_multi, default_truth_seed,
                       ogata_next_time, run_study, simulate_batch,
                       simulate_subject, simulate_trial, subject_rng,
                       with_targets)
from .splines import SplineSpec, basis_matrix, curve_value, evaluate_basis, gram_matrix

__version__ = "0.1.0"
