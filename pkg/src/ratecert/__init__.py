"""Convergence-rate certification for time-varying first-order methods.

Models first-order optimization algorithms with per-step re-tuned
coefficients as discrete-time parameter-varying plants in feedback with
time-varying gradients and set-normal maps, certifies geometric tracking
rates by solving small semidefinite programs over a gridded admissible
parameter set, and validates every certificate against simulated
time-varying problems.
"""

from .algorithms import (
    ALGORITHM_IDS,
    SectorSchedule,
    make_accelerated_ogd,
    make_algorithm,
    make_gd,
    make_multistep_gd,
    make_nesterov,
    make_triple_momentum,
)
from .certify import (
    CellSpec,
    Certificate,
    CertificationError,
    assemble_pointwise,
    assemble_variational,
    bisect_rate,
    certificate_from_json,
    certificate_to_json,
    certify_cell,
    evaluate_bound_constants,
    lyap_basis_of_degree,
    recheck_certificate,
    sweep,
    sweep_rows_to_csv,
)
from .iqc import (
    augment_pointwise,
    augment_variational,
    make_passivity_iqc,
    make_sector_iqc,
    make_variational_iqc,
)
from .lpv import (
    ConsistentGrid,
    LpvSystem,
    MatrixFn,
    ParamDomain,
    build_consistent_grid,
    check_causality,
    check_fixed_point,
)
from .simulate import (
    BoxSet,
    TvProblem,
    asymptotic_radius,
    check_bound_pointwise,
    check_bound_variational,
    make_varying_quadratic,
    simulate,
    simulate_batch,
    trajectory_to_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHM_IDS",
    "BoxSet",
    "CellSpec",
    "Certificate",
    "CertificationError",
    "ConsistentGrid",
    "LpvSystem",
    "MatrixFn",
    "ParamDomain",
    "SectorSchedule",
    "TvProblem",
    "assemble_pointwise",
    "assemble_variational",
    "asymptotic_radius",
    "augment_pointwise",
    "augment_variational",
    "bisect_rate",
    "build_consistent_grid",
    "certificate_from_json",
    "certificate_to_json",
    "certify_cell",
    "check_bound_pointwise",
    "check_bound_variational",
    "check_causality",
    "check_fixed_point",
    "evaluate_bound_constants",
    "lyap_basis_of_degree",
    "make_accelerated_ogd",
    "make_algorithm",
    "make_gd",
    "make_multistep_gd",
    "make_nesterov",
    "make_passivity_iqc",
    "make_sector_iqc",
    "make_triple_momentum",
    "make_variational_iqc",
    "make_varying_quadratic",
    "recheck_certificate",
    "simulate",
    "simulate_batch",
    "sweep",
    "sweep_rows_to_csv",
    "trajectory_to_csv",
    "__version__",
]
