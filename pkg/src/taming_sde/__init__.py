"""Strong approximation of SDEs with superlinear drift via tamed schemes.

Explicit Euler and Milstein steppers together with their tamed variants,
a coupled-path Monte Carlo harness for root-mean-square strong error,
convergence-order fitting, and step-count efficiency comparisons.  Hot
loops run in a compiled extension when it is available, with a pure
Python fallback that produces the same results up to floating-point
association.
"""

from ._backend import HAVE_COMPILED, default_backend, set_default_backend
from .brownian import (
    MAX_STEPS,
    BrownianGrid,
    coarsen,
    derive_path_seed,
    generate_increments,
    pair_products,
    sample_path,
)
from .errors import (
    Error,
    NonCommutativeError,
    PathExplosionError,
    ReferenceBlowUpError,
    UsageError,
    ValidationError,
)
from .harness import (
    ConvergenceReport,
    EfficiencyReport,
    EfficiencyRow,
    ErrorRow,
    ErrorTable,
    MomentRow,
    efficiency_benchmark,
    fit_order,
    moment_probe,
    reference_endpoint,
    strong_error_table,
    strong_error_tables,
)
from .model import (
    AssumptionReport,
    CommutativityCheck,
    SdeModel,
    builtin_models,
    check_commutativity,
    gbm_exact_endpoint,
    get_model,
    l_operator,
    probe_assumptions,
)
from .schemes import (
    BLOW_LIMIT,
    SchemeKind,
    Trajectory,
    integrate_path,
    step,
    tame,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "BLOW_LIMIT",
    "BrownianGrid",
    "CommutativityCheck",
    "ConvergenceReport",
    "EfficiencyReport",
    "EfficiencyRow",
    "Error",
    "ErrorRow",
    "ErrorTable",
    "HAVE_COMPILED",
    "MAX_STEPS",
    "MomentRow",
    "NonCommutativeError",
    "PathExplosionError",
    "ReferenceBlowUpError",
    "SchemeKind",
    "SdeModel",
    "Trajectory",
    "UsageError",
    "ValidationError",
    "builtin_models",
    "check_commutativity",
    "coarsen",
    "default_backend",
    "derive_path_seed",
    "efficiency_benchmark",
    "fit_order",
    "gbm_exact_endpoint",
    "generate_increments",
    "get_model",
    "integrate_path",
    "l_operator",
    "moment_probe",
    "pair_products",
    "probe_assumptions",
    "reference_endpoint",
    "sample_path",
    "set_default_backend",
    "step",
    "strong_error_table",
    "strong_error_tables",
    "tame",
    "__version__",
]
