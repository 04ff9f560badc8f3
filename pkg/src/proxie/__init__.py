"""Proximal causal inference: simulators, bridge-function estimators and proxy diagnostics."""

from .bridges import OutcomeBridgeSpec, TreatmentBridgeSpec, eval_h, eval_q
from .datamodel import ColumnRoles, Dataset, read_csv, write_csv
from .dgm import (
    BinaryDgm,
    CompletenessFailureDgm,
    LinearGaussianDgm,
    TruthRecord,
    sample,
    true_ate,
)
from .diagnostics import dimensionality_screen, proxy_checks, weight_diagnostics
from .estimators import (
    BootstrapConfig,
    EstimateResult,
    bootstrap,
    naive_ipw,
    naive_or,
    proximal_dr,
    proximal_g,
    proximal_ipw,
    saturated_binary,
    two_stage_linear,
)
from .moments import GmmConfig, MomentSystem, check_jacobian, solve_gmm

__version__ = "0.1.0"
