"""Solver and verification harness for quasi-stationary compressible Stokes
flow with anisotropic viscosity on the periodic box."""

from anisostokes.config import (
    ForcingSpec,
    InitialSpec,
    ParseError,
    RunConfig,
    UnknownKey,
    UnresolvedWavelength,
    make_forcing,
    make_initial,
    parse_config,
)
from anisostokes.diagnostics import (
    DefectParams,
    DiagnosticsRow,
    commutator_audit,
    defect_inequality_audit,
    defect_proxy,
    effective_flux,
    energy_audit,
    energy_violation,
    pressure_l2_audit,
    rows_for_trajectory,
    viscous_work,
    write_rows_csv,
)
from anisostokes.fields import (
    GridSpec,
    MollifierKernel,
    ScalarField,
    VectorField,
    commutator_residual,
    div,
    grad,
    laplacian,
    mollify,
    read_snapshot,
    sym_grad,
    write_snapshot,
)
from anisostokes.marching import (
    NoContraction,
    Slab,
    SlabCollapse,
    Trajectory,
    apply_B,
    direct_march,
    march,
    picard_solve,
)
from anisostokes.stokes import (
    KrylovNoConvergence,
    NotCoercive,
    SingularSymbol,
    StokesOperator,
    residual,
    solve,
    solve_rhs,
)
from anisostokes.transport import (
    MassLedger,
    NegativeInput,
    NewtonFail,
    SolverParams,
    cfl_dt,
    continuity_step,
    pressure_field,
)
from anisostokes.viscosity import (
    ConstantFull,
    DiagNu,
    VaryingFull,
    apply_tau,
    audit_hypotheses,
    coercivity_estimate,
    isotropic_strain_tensor,
)

__all__ = [
    "ConstantFull",
    "DefectParams",
    "DiagNu",
    "DiagnosticsRow",
    "ForcingSpec",
    "GridSpec",
    "InitialSpec",
    "KrylovNoConvergence",
    "MassLedger",
    "MollifierKernel",
    "NegativeInput",
    "NewtonFail",
    "NoContraction",
    "NotCoercive",
    "ParseError",
    "RunConfig",
    "ScalarField",
    "SingularSymbol",
    "Slab",
    "SlabCollapse",
    "SolverParams",
    "StokesOperator",
    "Trajectory",
    "UnknownKey",
    "UnresolvedWavelength",
    "VaryingFull",
    "VectorField",
    "apply_B",
    "apply_tau",
    "audit_hypotheses",
    "cfl_dt",
    "coercivity_estimate",
    "commutator_audit",
    "commutator_residual",
    "continuity_step",
    "defect_inequality_audit",
    "defect_proxy",
    "direct_march",
    "div",
    "effective_flux",
    "energy_audit",
    "energy_violation",
    "grad",
    "isotropic_strain_tensor",
    "laplacian",
    "make_forcing",
    "make_initial",
    "march",
    "mollify",
    "parse_config",
    "picard_solve",
    "pressure_field",
    "pressure_l2_audit",
    "read_snapshot",
    "residual",
    "rows_for_trajectory",
    "solve",
    "solve_rhs",
    "sym_grad",
    "viscous_work",
    "write_rows_csv",
    "write_snapshot",
]

__version__ = "0.1.0"
