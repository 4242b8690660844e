"""M-estimation with empirical sandwich variance."""
__version__ = "0.1.0"

from mestim.errors import (ConfigError, DataError, DegenerateWeights,  # noqa: E402
                           DimensionMismatch, DomainError, MEstimationError,
                           NoConvergence, NonFiniteEvaluation,
                           RankDeficientDesign, SingularBread,
                           SingularJacobian)
from mestim.numdiff import StepRule, jacobian_central  # noqa: E402
from mestim.rootfind import (SolveReport, SolverConfig, broyden_solve,  # noqa: E402
                             newton_solve)
from mestim.estimator import (EstimatingFunction, MEstimationResult,  # noqa: E402
                              compute_bread, compute_filling, estimate,
                              sandwich, wald_ci)
from mestim.equations import (BlockLayout, ColumnBinding, ee_effective_concentration,  # noqa: E402
                              ee_linear_regression, ee_logistic_regression,
                              ee_loglogistic, ee_mean, ee_robust_location,
                              ee_robust_regression, ee_weighted_means,
                              huber_g, inverse_odds_weight, loglogistic_mean,
                              stack)
