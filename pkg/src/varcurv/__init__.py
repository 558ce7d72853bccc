"""Curvature-aware analysis of evolution-strategies fine-tuning on synthetic landscapes.

Quadratic and double-well landscapes, a seeded ES core, closed-form
Ornstein-Uhlenbeck predictions, Lyapunov solvers, slope spectroscopy,
stochastic Lanczos quadrature, metastability statistics and best-of-N
accessibility probes, tied together by a config-driven CLI.
"""

from .errors import ConvergenceError, NumericError, ParameterError, StabilityError
from .stochastics import StreamKey, derive_stream, sample_gaussian_vector, sample_rademacher
from .landscape import (CallableObjective, DoubleWellLandscape, ObjectiveFunction, QuadraticLandscape, Spectrum,
                        TwoBlockSpec, evaluate_double_well, evaluate_quadratic, make_two_block)
from .es import ESConfig, EnsembleResult, Trajectory, es_gradient_estimate, run_ensemble, run_es, smoothed_reward
from .ou import (OUPrediction, StabilityReport, amplitudes, effective_dimension, interior_maxima, ou_trajectory,
                 peak_time_general, peak_time_two_mode, plateau_slope_curve, stability_report, stationary_variance,
                 terminal_plateau)
from .lyapunov import (LinearizedSystem, is_psd, iterate_covariance, solve_continuous_lyapunov,
                       solve_discrete_lyapunov, stationary_gap)
from .clss import CLSSConfig, PlateauResult, SlopeFit, clss_run, fit_slope, probe_plateau
from .slq import (MatVecOperator, SpectralMetrics, density_metrics, hvp_from_objective, lanczos, ritz_pairs,
                  slq_quadrature, slq_trace, spectral_metrics)
from .metastability import (DoubleWellRun, HopRecord, KramersPrediction, KramersSetup, classify_regime,
                            first_passage_times, hop_probability, kramers_escape_iters, simulate_double_well)
from .probes import (BestOfNEstimate, PerturbationBatch, best_of_n, best_of_n_exact, best_of_n_mc, bootstrap_se,
                     estimate_p_improve, generate_batch, saturation_population, summarize_best_of_n,
                     tail_statistics)

__version__ = "0.1.0"
