"""Coupled bulk-surface parabolic solver with dynamic boundary conditions.

Forward theta-method solves, the backward adjoint problem (weak and exact
discrete-transpose modes) with dual-space right-hand sides, a spectral
Galerkin reduction with Gronwall energy certificates, and the verification
suites that exercise the form inequalities, duality identities and
manufactured-solution convergence behind them.
"""

from .adjoint import (DualityResult, duality_residual, solve_backward_transpose,
                      solve_backward_weak)
from .assembly import (AssemblyError, BlockOperator, CoupledDofMap, DualSource,
                       LoadAssembler, OperatorSet, ProductField, RieszSolver,
                       apply_form, assemble_diffusion, assemble_drift_reaction,
                       assemble_dual_load, assemble_h1_gram, assemble_load,
                       assemble_mass, assemble_mass_parts, assemble_operators,
                       build_dofmap, dual_norm, matrix_to_text, write_matrix)
from .coefficients import CoefficientSet, ConstantLedger, SourceTerm, derive_constants
from .expressions import ExprError, Expression, parse_expression
from .forward import (MassSplit, SolveError, ThetaStepper, TimeGrid, Trajectory,
                      energy_identity_residual, mass_functional, solve_forward)
from .geometry import (BoundaryMesh, Mesh2D, MeshError, TraceMap, disk_mesh,
                       extract_boundary, mesh_to_text, read_mesh, refine_mesh,
                       square_mesh, tangential_derivative_stencil, text_to_mesh,
                       write_mesh)
from .spectral import (CertificateRecord, ReducedTrajectory, SpectralBasis,
                       compute_eigenbasis, energy_certificate, integrate_reduced,
                       integrate_reduced_exact, project, reconstruct, reduce_system)
from .verification import (DualityReport, FormCheckReport, ManufacturedDisk,
                           RateTable, backward_energy_ratio, convergence_study,
                           random_fields, run_duality_suite, run_form_checks,
                           spatial_convergence, spectral_vs_fem,
                           temporal_convergence)

__version__ = "0.1.0"
