"""Monte Carlo solver for reflected path-dependent FBSDEs with time-delayed generators."""
from .analysis import (GradientEstimate, UEvaluator, estimate_directional_gradient, evaluate_u,
                       generator_check, mild_residual, penalization_sweep, penalized_generator,
                       semigroup_apply)
from .backward import PicardConfig, basis, solve_backward
from .errors import (ConfigError, InvalidArgumentError, NumericalError, PreconditionError,
                     ProjectionError, RegressionError, RFBSDEError, StiffnessError,
                     UndefinedConditionError)
from .estimate import FunctionalEstimate
from .forward import simulate_forward, simulate_penalized
from .geometry import PenaltyField, ball, from_id, interval, project
from .paths import InitialCondition, SamplePath, TimeGrid
from .problem import AssumptionParams, ProblemSpec, c_bound, check_h1_h2

__version__ = "0.1.0"
