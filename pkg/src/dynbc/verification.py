"""Invariant suites and convergence studies.

Everything here is deterministic given (seed, configuration) and runs at
desk scale.  The three families of checks:

* pointwise form inequalities (boundedness of the drift-reaction form and
  shifted coercivity) on seeded random coupled fields, with the constants
  taken from the ledger;
* the forward/backward duality identity with the exact-transpose adjoint,
  plus the backward energy ratio that discretizes the a-priori estimate;
* manufactured-solution convergence in space and time, and the agreement
  of the spectral reduction with the full solve on nested mode counts.

The manufactured problem lives on the unit disk:

    y(t, x) = exp(-t) (x1^2 + x2^2)

with bulk source f = exp(-t) (-r^2 - 4 d + 2 B.x + c r^2) and, on the unit
circle where y is the constant exp(-t), surface source
g = exp(-t) (-1 + 2 d + ell); the surface gradient terms vanish there, and
the outward flux of y through the circle is the constant 2 exp(-t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import duality_residual, solve_backward_transpose, solve_backward_weak
from .assembly import (BlockOperator, CoupledDofMap, LoadAssembler, OperatorSet,
                       RieszSolver, assemble_operators, build_dofmap)
from .coefficients import CoefficientSet, ConstantLedger, derive_constants
from .forward import TimeGrid, solve_forward
from .geometry import BoundaryMesh, Mesh2D, disk_mesh, extract_boundary
from .spectral import compute_eigenbasis, integrate_reduced, project, reconstruct, reduce_system

FORM_MARGIN_TOL = 1e-10
DUALITY_TOL = 1e-10


def random_fields(n_dofs: int, n_samples: int, seed: int) -> np.ndarray:
    """Seeded sample fields with entries uniform in [-1, 1]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n_samples, n_dofs))


# --- form inequality checks ---------------------------------------------------

@dataclass(frozen=True)
class FormCheckReport:
    n_samples: int
    seed: int
    bound_margins: np.ndarray        # relative margins of the boundedness split
    coercivity_margins: np.ndarray   # relative margins of shifted coercivity
    tol: float
    ledger: ConstantLedger

    @property
    def passed(self) -> bool:
        return bool(self.bound_margins.min() >= -self.tol
                    and self.coercivity_margins.min() >= -self.tol)


def run_form_checks(ops: OperatorSet, ledger: ConstantLedger, n_samples: int,
                    seed: int, tol: float = FORM_MARGIN_TOL) -> FormCheckReport:
    """Check both ledger inequalities on seeded random coupled fields.

    Boundedness:  |<N U, U>| <= alpha <K U, U> + beta <M U, U>   (K = H1 Gram)
    Coercivity:   <(Q + N) U, U> + omega <M U, U> >= lambda <K U, U>

    Margins are normalized by the dominant quadratic term of each side, so a
    pass means "inequality holds up to tol relative slack".
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    samples = random_fields(ops.mass.shape[0], n_samples, seed)

    drift_quad = np.einsum("sd,sd->s", samples, (ops.drift.matrix @ samples.T).T)
    gram_quad = np.einsum("sd,sd->s", samples, (ops.h1_gram.matrix @ samples.T).T)
    mass_quad = np.einsum("sd,sd->s", samples, (ops.mass.matrix @ samples.T).T)
    spatial_quad = np.einsum("sd,sd->s", samples, (ops.spatial.matrix @ samples.T).T)

    bound_rhs = ledger.alpha * gram_quad + ledger.beta * mass_quad
    bound_scale = np.maximum(np.maximum(np.abs(drift_quad), bound_rhs), 1e-300)
    bound_margins = (bound_rhs - np.abs(drift_quad)) / bound_scale

    coer_lhs = spatial_quad + ledger.omega * mass_quad
    coer_rhs = ledger.lam * gram_quad
    coer_scale = np.maximum(np.maximum(np.abs(coer_lhs), coer_rhs), 1e-300)
    coercivity_margins = (coer_lhs - coer_rhs) / coer_scale

    return FormCheckReport(n_samples, seed, bound_margins, coercivity_margins,
                           tol, ledger)


# --- duality suite --------------------------------------------------------------

@dataclass(frozen=True)
class DualityReport:
    n_trials: int
    seed: int
    relative_residuals: np.ndarray
    tol: float

    @property
    def max_relative(self) -> float:
        return float(self.relative_residuals.max())

    @property
    def passed(self) -> bool:
        return self.max_relative <= self.tol


def run_duality_suite(ops: OperatorSet, dofmap: CoupledDofMap, grid: TimeGrid,
                      n_trials: int, seed: int,
                      tol: float = DUALITY_TOL) -> DualityReport:
    """Random-data duality trials with the exact-transpose backward solve.

    Each trial draws sources Q, F and final data Psi_T, runs the theta = 1
    forward solve from zero and the transposed backward solve, and records
    the relative defect of the pairing identity.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    n = ops.mass.shape[0]
    rel = np.empty(n_trials)
    for k in range(n_trials):
        q_loads = rng.uniform(-1.0, 1.0, size=(grid.n_steps + 1, n))
        f_loads = rng.uniform(-1.0, 1.0, size=(grid.n_steps + 1, n))
        psi_T = rng.uniform(-1.0, 1.0, size=n)
        fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, q_loads,
                            np.zeros(n), grid, theta=1.0, dofmap=dofmap)
        bwd = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift,
                                       f_loads, psi_T, grid, dofmap=dofmap)
        rel[k] = duality_residual(ops.mass, fwd, q_loads, bwd, f_loads, psi_T).relative
    return DualityReport(n_trials, seed, rel, tol)


def backward_energy_ratio(ops: OperatorSet, dofmap: CoupledDofMap,
                          grid: TimeGrid, loads, psi_T,
                          riesz: RieszSolver | None = None,
                          theta: float = 1.0) -> float:
    """Discrete energy ratio of one weak backward solve.

    ratio = [ max_n |Psi^n|_M^2 + int |Psi|_H1^2 + int |Psi'|_dual^2 ]
            / [ int |F|_dual^2 + |Psi_T|_M^2 ]

    with the time derivative realized as the functional G^T Psi + L and all
    dual norms through the Riesz solve.  The estimate behind it says this
    stays bounded under mesh and time refinement for fixed data.
    """
    riesz = riesz or RieszSolver(ops.h1_gram)
    traj = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, loads,
                               psi_T, grid, theta=theta, dofmap=dofmap)
    loads_arr = np.zeros_like(traj.states) if loads is None else np.asarray(loads, dtype=float)
    tau = grid.tau

    m_sq = np.einsum("nd,nd->n", traj.states, (ops.mass.matrix @ traj.states.T).T)
    h1_sq = np.einsum("nd,nd->n", traj.states, (ops.h1_gram.matrix @ traj.states.T).T)
    transposed = ops.spatial.T
    deriv = (transposed.matrix @ traj.states.T).T + loads_arr
    deriv_sq = np.array([riesz.norm_sq(deriv[n]) for n in range(len(deriv))])

    trap = np.full(grid.n_steps + 1, 1.0)
    trap[0] = trap[-1] = 0.5
    numerator = float(m_sq.max()) + tau * float(trap @ h1_sq) + tau * float(trap @ deriv_sq)

    psi_vec = np.asarray(psi_T, dtype=float)
    data_sq = np.array([riesz.norm_sq(loads_arr[n]) for n in range(1, grid.n_steps + 1)])
    denominator = tau * float(data_sq.sum()) + float(psi_vec @ ops.mass.dot(psi_vec))
    if denominator == 0.0:
        return 0.0
    return numerator / denominator


# --- manufactured disk problem ---------------------------------------------------

@dataclass(frozen=True)
class ManufacturedDisk:
    """Closed-form data of the quadratic decaying solution on the unit disk.

    Only constant coefficients enter the formulas; the surface drift b is
    carried along because it multiplies a vanishing surface gradient.
    """

    d: float = 1.0
    delta: float = 1.0
    B: tuple[float, float] = (0.4, -0.3)
    b: tuple[float, float] = (0.1, 0.2)
    c: float = 0.5
    ell: float = 0.25

    def coefficient_set(self, mesh: Mesh2D, bmesh: BoundaryMesh) -> CoefficientSet:
        return CoefficientSet.constant(mesh, bmesh, d=self.d, delta=self.delta,
                                       B=self.B, b=self.b, c=self.c, ell=self.ell)

    def solution(self, t: float, xy: np.ndarray) -> np.ndarray:
        return math.exp(-t) * (xy[:, 0] ** 2 + xy[:, 1] ** 2)

    def bulk_source(self, t: float, xy: np.ndarray) -> np.ndarray:
        r_sq = xy[:, 0] ** 2 + xy[:, 1] ** 2
        b_dot_x = self.B[0] * xy[:, 0] + self.B[1] * xy[:, 1]
        return math.exp(-t) * (-r_sq - 4.0 * self.d + 2.0 * b_dot_x + self.c * r_sq)

    def surface_source(self, t: float, xy: np.ndarray) -> np.ndarray:
        return math.exp(-t) * (-1.0 + 2.0 * self.d + self.ell) * np.ones(len(xy))

    def node_loads(self, mesh: Mesh2D, bmesh: BoundaryMesh,
                   dofmap: CoupledDofMap, grid: TimeGrid) -> np.ndarray:
        surface_xy = mesh.nodes[dofmap.node_ids]
        assembler = LoadAssembler(mesh, bmesh, dofmap)
        loads = np.empty((grid.n_steps + 1, dofmap.n_total))
        for k, t in enumerate(grid.times):
            loads[k] = assembler.nodal(f=self.bulk_source(t, mesh.nodes),
                                       g=self.surface_source(t, surface_xy))
        return loads

    def exact_states(self, mesh: Mesh2D, grid: TimeGrid) -> np.ndarray:
        return np.array([self.solution(t, mesh.nodes) for t in grid.times])


def max_mass_norm_error(states_a: np.ndarray, states_b: np.ndarray,
                        mass: BlockOperator) -> float:
    diff = states_a - states_b
    vals = np.einsum("nd,nd->n", diff, (mass.matrix @ diff.T).T)
    return float(np.sqrt(np.maximum(vals, 0.0).max()))


# --- convergence studies -----------------------------------------------------------

@dataclass(frozen=True)
class RateTable:
    """Errors and observed orders along one refinement axis."""

    axis: str                   # "h" or "tau"
    parameters: np.ndarray      # h or tau per level
    errors: np.ndarray
    rows: list = field(default_factory=list)

    @property
    def rates(self) -> np.ndarray:
        p, e = self.parameters, self.errors
        return np.array([math.log(e[k - 1] / e[k]) / math.log(p[k - 1] / p[k])
                         for k in range(1, len(e))])

    @property
    def non_monotone(self) -> bool:
        return bool(np.any(np.diff(self.errors) >= 0.0))


def _disk_instance(problem: ManufacturedDisk, n_segments: int, refinement: int):
    mesh = disk_mesh(1.0, n_segments, refinement)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    coeffs = problem.coefficient_set(mesh, bmesh)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    return mesh, bmesh, dofmap, ops


def spatial_convergence(problem: ManufacturedDisk | None = None,
                        refinements: tuple[int, ...] = (1, 2, 3),
                        n_segments: int = 16, T: float = 0.5,
                        n_steps_base: int = 8, theta: float = 1.0) -> RateTable:
    """Mesh refinement with tau proportional to h^2 (steps x4 per level).

    Error per level: max over time nodes of the mass-norm distance to the
    interpolated manufactured solution.
    """
    if len(refinements) < 3:
        raise ValueError("need at least 3 spatial levels")
    problem = problem or ManufacturedDisk()
    hs, errs = [], []
    for pos, level in enumerate(refinements):
        mesh, bmesh, dofmap, ops = _disk_instance(problem, n_segments, level)
        grid = TimeGrid(T, n_steps_base * 4 ** pos)
        loads = problem.node_loads(mesh, bmesh, dofmap, grid)
        y0 = problem.solution(0.0, mesh.nodes)
        traj = solve_forward(ops.mass, ops.diffusion, ops.drift, loads, y0,
                             grid, theta=theta, dofmap=dofmap)
        errs.append(max_mass_norm_error(traj.states,
                                        problem.exact_states(mesh, grid), ops.mass))
        hs.append(mesh.max_edge_length())
    return RateTable("h", np.asarray(hs), np.asarray(errs))


def temporal_convergence(problem: ManufacturedDisk | None = None,
                         theta: float = 1.0,
                         n_steps_list: tuple[int, ...] = (8, 16, 32),
                         n_segments: int = 16, refinement: int = 2,
                         T: float = 1.0, decay: float = 1.0) -> RateTable:
    """Time refinement on a fixed mesh against a semidiscrete exact solution.

    The target trajectory is Y*(t) = exp(-decay*t) V with V the interpolated
    manufactured profile, driven by the load L(t) = exp(-decay*t)(G - decay*M)V
    that makes Y* solve the semidiscrete system exactly.  Every mode shares
    the one smooth time profile, so there is no stiff initial layer and the
    measured error is pure time-integration error (the midpoint scheme's
    weak damping of such layers would otherwise hide its second order in the
    max-over-nodes norm).
    """
    if len(n_steps_list) < 3:
        raise ValueError("need at least 3 temporal levels")
    problem = problem or ManufacturedDisk()
    mesh, bmesh, dofmap, ops = _disk_instance(problem, n_segments, refinement)
    profile = problem.solution(0.0, mesh.nodes)
    drive = (ops.spatial.matrix - decay * ops.mass.matrix).dot(profile)

    taus, errs = [], []
    for n_steps in n_steps_list:
        grid = TimeGrid(T, n_steps)
        weights = np.exp(-decay * grid.times)
        loads = weights[:, None] * drive[None, :]
        traj = solve_forward(ops.mass, ops.diffusion, ops.drift, loads, profile,
                             grid, theta=theta, dofmap=dofmap)
        exact = weights[:, None] * profile[None, :]
        errs.append(max_mass_norm_error(traj.states, exact, ops.mass))
        taus.append(grid.tau)
    return RateTable("tau", np.asarray(taus), np.asarray(errs))


def convergence_study(problem: ManufacturedDisk | None = None) -> dict[str, RateTable]:
    """The full battery: spatial (theta=1) plus temporal at theta 1 and 1/2."""
    problem = problem or ManufacturedDisk()
    return {
        "space_theta1": spatial_convergence(problem, theta=1.0),
        "time_theta1": temporal_convergence(problem, theta=1.0),
        "time_theta05": temporal_convergence(problem, theta=0.5),
    }


# --- spectral vs full solve ----------------------------------------------------------

def spectral_vs_fem(ops: OperatorSet, dofmap: CoupledDofMap, grid: TimeGrid,
                    y0: np.ndarray, loads, n_sweep: tuple[int, ...],
                    theta: float = 1.0) -> list[tuple[int, float]]:
    """Reconstruction error of the reduced solve against the full solve.

    The eigenbasis is computed once at the largest requested mode count and
    sliced, so the sweep is genuinely nested.  Errors are max-over-time
    mass norms.
    """
    n_sweep = tuple(sorted(n_sweep))
    fem = solve_forward(ops.mass, ops.diffusion, ops.drift, loads, y0, grid,
                        theta=theta, dofmap=dofmap)
    full_basis = compute_eigenbasis(ops.h1_gram, ops.mass, n_sweep[-1])
    out = []
    for n in n_sweep:
        basis = full_basis if n == full_basis.n_modes else \
            type(full_basis)(full_basis.eigenvalues[:n], full_basis.modes[:, :n])
        E, f_red = reduce_system(basis, ops.spatial, loads)
        d0 = project(basis, ops.mass, np.asarray(y0, dtype=float))
        reduced = integrate_reduced(E, f_red, d0, grid, theta=theta)
        rec = reconstruct(basis, reduced, dofmap)
        out.append((n, max_mass_norm_error(rec.states, fem.states, ops.mass)))
    return out


# --- canonical desk-scale instances ----------------------------------------------------

def coarse_disk_instance(coeffs_kwargs: dict | None = None,
                         n_segments: int = 16, refinement: int = 2):
    """The ~160-dof disk used by the fast invariant checks."""
    mesh = disk_mesh(1.0, n_segments, refinement)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    kwargs = {"d": 1.0, "delta": 1.0, "B": (1.0, 0.0), "b": (0.0, 0.5),
              "c": 0.3, "ell": -0.2}
    if coeffs_kwargs:
        kwargs.update(coeffs_kwargs)
    coeffs = CoefficientSet.constant(mesh, bmesh, **kwargs)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    ledger = derive_constants(coeffs)
    return mesh, bmesh, dofmap, coeffs, ops, ledger
