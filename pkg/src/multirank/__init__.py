"""Generalized multivariate linear rank statistics for two-sample and K-sample testing.

Typical use::

    from multirank import SampleSet, rank_test
    sample = SampleSet.from_groups(x, y)
    outcome = rank_test(sample, weights="van_der_waerden")
    outcome.p_value
"""

from .errors import (BudgetExceededError, DegenerateSampleError, DegenerateSpectrumError,
                     DomainError, EvaluationError, InvalidArgumentError, MultirankError,
                     PrecisionWarning, RankDeficiencyError)
from .exact import (LaplaceParams, NullDistribution, SnakeCurve, SpacingStatistic,
                    exact_null_distribution, laplace_transform, permutation_pvalue, snake_curve,
                    spacing_stat)
from .models import (ModelFamily, ModelParams, adaptive_weight, get_family, glr_statistic,
                     pooled_mle)
from .pipeline import rank_test
from .rank_map import RankAssignment, RankGrid, SampleSet, assign_ranks, build_grid, runtime_profile
from .special import gaussian_quantile
from .teststat import (KSampleTransform, TestOutcome, asymptotic_pvalue, k_sample_T,
                       null_covariance, quadratic_stat, two_sample_T)
from .weights import (CenteredWeights, WeightFn, builtin, center_on_grid, gram, project_nuisance,
                      resolve_weights, stack)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
