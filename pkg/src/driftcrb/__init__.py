"""Cramer-Rao bounds for polynomial signals observed by drifting sensors."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DomainError,
    DriftCrbError,
    InfiniteCrb,
    MixedRegime,
    NegativeVariance,
    SingularCovariance,
    SingularFim,
)
from .model import (  # noqa: E402
    INFINITY,
    DesignMatrix,
    DriftParams,
    NetworkSpec,
    ParamBox,
    SignalSpec,
    build_design_matrix,
    eval_signal,
    validate_drift_params,
)
from .covariance import (  # noqa: E402
    drift_covariance,
    drift_precision_closed,
    quantization_adjusted_params,
    total_covariance,
)
from .approximation import approx_precision, build_M, drift_constants, residual_diagnostics  # noqa: E402
from .fisher import exact_crb, exact_crb_for, exact_fim, network_fim  # noqa: E402
from .closed_form import (  # noqa: E402
    approx_fim,
    approximation_region,
    closed_form_crb,
    effective_xi,
    max_relative_error,
    n_epsilon,
    xi_constants,
)
from .simulate import (  # noqa: E402
    MonteCarloConfig,
    QuantizerSpec,
    gen_drift_path,
    gen_observations,
    ml_estimate,
    monte_carlo_variance,
    uniform_quantize,
)
