"""
Sparse log-ratio regression for compositional data.

The log-ratio lasso is fit through its equivalent sum-zero constrained
lasso, pruned to a few ratios by forward stepwise selection, and checked
with classical and post-selective tests of the sum-zero hypothesis.
"""

__version__ = "0.1.0"

from .data import (Dataset, LogDesign, augment_ones, design_from_logs, expand_ratios,
                   load_csv, log_design, pair_index, write_csv)
from .exceptions import (ConvergenceError, DegenerateColumnError, DomainError,
                         InfeasibleTruncationError, LogRatioError, NoTestError,
                         NotAContrastError, ParseError, RankDeficientError,
                         SelectionConsistencyError, UnstableTruncationError)
from .solver import (LassoProblem, LassoSolution, constrained_lasso, gamma_max, kkt_check,
                     lambda_path, solve_lasso)
from .logratio import (ContrastCoefficients, FitReport, PairCoefficients, contrast_to_pairs,
                       fit_single_stage, fit_two_stage, pairs_to_contrast, predict)
from .stepwise import StepwiseTrace, approx_forward_stepwise, exact_forward_stepwise
from .inference import (PivotResult, SelectionEvent, f_test_sum_zero, lasso_selection_event,
                        selective_sum_zero_test, truncated_gaussian_cdf)
from .cv import CvCurve, FoldPlan, cv_constrained_lasso, cv_two_stage, make_folds
