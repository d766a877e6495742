"""Spectral Galerkin mode: eigenbasis reduction and energy certificates.

The reduction basis diagonalizes the generalized symmetric eigenproblem of
the H1 Gram matrix against the mass, giving modes that are orthonormal in
the coupled L2 product and orthogonal in H1, with eigenvalues >= 1 and the
normalized constant as ground mode.  Projecting the evolution onto the
first n modes yields the dense linear ODE system

    d'(t) + E d(t) = F_red(t),      E[k, l] = W_k^T G W_l,

integrated by the same theta scheme as the full solver (so reduction error
and scheme error separate cleanly); an exact matrix-exponential path exists
for small systems as a test reference.

`energy_certificate` evaluates the three energy terms of the reduced
trajectory, the data norm, their ratio, and the pointwise Gronwall bound

    |d(t)|^2 <= exp(C1 t) (|d(0)|^2 + C2 int_0^t |F|_dual^2)

with C1 = 2*omega and C2 = 1/(2*lambda) from the constant ledger, flagging
any node where the bound fails.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import BlockOperator, CoupledDofMap, RieszSolver
from .coefficients import ConstantLedger
from .forward import TimeGrid, Trajectory, _check_theta, _node_loads

ORTHONORMALITY_TOL = 1e-10
EXACT_PATH_MAX_DIM = 50


@dataclass(frozen=True)
class SpectralBasis:
    """Generalized eigenpairs of (H1 Gram, mass), ascending.

    modes[:, k] is the k-th mode, orthonormal in the mass inner product and
    orthogonal in the H1 product; eigenvalues[k] >= 1.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)


def compute_eigenbasis(h1_gram: BlockOperator, mass: BlockOperator,
                       n_modes: int) -> SpectralBasis:
    """First n_modes eigenpairs of the H1 Gram relative to the mass.

    Dense symmetric-definite solve; raises if the result misses the
    orthonormality tolerances (an eigensolver breakdown).
    """
    dim = h1_gram.shape[0]
    if not 1 <= n_modes <= dim:
        raise ValueError(f"n_modes must lie in [1, {dim}]")
    vals, vecs = sla.eigh(h1_gram.matrix.toarray(), mass.matrix.toarray(),
                          subset_by_index=[0, n_modes - 1])
    # eigh leaves the sign free; pin it for run-to-run determinism
    for k in range(vecs.shape[1]):
        lead = np.argmax(np.abs(vecs[:, k]))
        if vecs[lead, k] < 0.0:
            vecs[:, k] = -vecs[:, k]

    gram = vecs.T @ mass.matrix.dot(vecs)
    if np.abs(gram - np.eye(n_modes)).max() > ORTHONORMALITY_TOL:
        raise RuntimeError("eigenbasis lost mass-orthonormality")
    proj = vecs.T @ h1_gram.matrix.dot(vecs)
    if np.abs(proj - np.diag(vals)).max() > ORTHONORMALITY_TOL * max(vals.max(), 1.0):
        raise RuntimeError("eigenbasis lost H1 orthogonality")
    if vals[0] < 1.0 - ORTHONORMALITY_TOL:
        raise RuntimeError(f"ground eigenvalue {vals[0]} below 1")
    return SpectralBasis(vals, vecs)


@dataclass(frozen=True)
class ReducedTrajectory:
    """Mode coefficients at every time node."""

    coeffs: np.ndarray          # (n_steps + 1, n_modes)
    grid: TimeGrid
    theta: float | None = None


def project(basis: SpectralBasis, mass: BlockOperator, vec: np.ndarray) -> np.ndarray:
    """Mode coefficients of the mass-orthogonal projection of a field."""
    return basis.modes.T @ mass.dot(np.asarray(vec, dtype=float))


def reduce_system(basis: SpectralBasis, spatial: BlockOperator,
                  loads) -> tuple[np.ndarray, np.ndarray]:
    """Reduced operator E[k, l] = W_k^T G W_l and loads F_red[t, k] = W_k . L^t."""
    if spatial.shape[0] != basis.modes.shape[0]:
        raise ValueError("basis and operator dimensions disagree")
    E = basis.modes.T @ spatial.matrix.dot(basis.modes)
    if loads is None:
        return E, None
    return E, np.asarray(loads, dtype=float) @ basis.modes


def integrate_reduced(E: np.ndarray, f_red, d0: np.ndarray, grid: TimeGrid,
                      theta: float = 1.0) -> ReducedTrajectory:
    """Theta scheme for the dense reduced system d' + E d = F_red(t)."""
    theta = _check_theta(theta)
    n = len(d0)
    f_red = _node_loads(f_red, grid, n)
    tau = grid.tau
    implicit = np.eye(n) + theta * tau * E
    explicit = np.eye(n) - (1.0 - theta) * tau * E
    lu, piv = sla.lu_factor(implicit)

    coeffs = np.empty((grid.n_steps + 1, n))
    coeffs[0] = d0
    for k in range(grid.n_steps):
        f_theta = (1.0 - theta) * f_red[k] + theta * f_red[k + 1]
        coeffs[k + 1] = sla.lu_solve((lu, piv), explicit @ coeffs[k] + tau * f_theta)
    return ReducedTrajectory(coeffs, grid, theta)


def integrate_reduced_exact(E: np.ndarray, f_red, d0: np.ndarray,
                            grid: TimeGrid) -> ReducedTrajectory:
    """Matrix-exponential reference path, exact for loads linear in t
    between the grid nodes.  Restricted to small systems; exists so tests
    can separate scheme error from reduction error."""
    n = len(d0)
    if n > EXACT_PATH_MAX_DIM:
        raise ValueError(f"exact path limited to {EXACT_PATH_MAX_DIM} modes")
    f_red = _node_loads(f_red, grid, n)
    tau = grid.tau

    coeffs = np.empty((grid.n_steps + 1, n))
    coeffs[0] = np.asarray(d0, dtype=float)
    # augmented system [d; p; q]' = [[-E, F_n, dF], [0, 0, 0], [0, 1/tau, 0]]
    # with p = 1 and q = (t - t_n)/tau reproduces a linear-in-t load exactly
    aug = np.zeros((n + 2, n + 2))
    aug[:n, :n] = -E
    aug[n + 1, n] = 1.0 / tau
    for k in range(grid.n_steps):
        aug[:n, n] = f_red[k]
        aug[:n, n + 1] = f_red[k + 1] - f_red[k]
        phi = sla.expm(aug * tau)
        state = np.concatenate([coeffs[k], [1.0, 0.0]])
        coeffs[k + 1] = (phi @ state)[:n]
    return ReducedTrajectory(coeffs, grid, None)


def reconstruct(basis: SpectralBasis, reduced: ReducedTrajectory,
                dofmap: CoupledDofMap) -> Trajectory:
    """Expand mode coefficients back to nodal fields on every time node."""
    states = reduced.coeffs @ basis.modes.T
    theta = reduced.theta if reduced.theta is not None else 1.0
    return Trajectory(states, reduced.grid, dofmap, theta,
                      {"scheme": "spectral", "n_modes": basis.n_modes})


@dataclass(frozen=True)
class CertificateRecord:
    """Energy accounting of one reduced run against the Gronwall bound."""

    n_modes: int
    max_M_norm_sq: float
    l2_h1_sq: float
    l2_hm1_sq: float
    data_norm_sq: float
    ratio: float
    gronwall_bound: float        # bound evaluated at the final time
    violated: bool
    worst_margin: float          # min over nodes of (bound - |d|^2)
    bounds: np.ndarray = field(repr=False, default=None)


def energy_certificate(basis: SpectralBasis, reduced: ReducedTrajectory,
                       E: np.ndarray, loads, u_T: np.ndarray,
                       ledger: ConstantLedger, riesz: RieszSolver,
                       mass: BlockOperator) -> CertificateRecord:
    """Evaluate the reduced-run energy terms and the Gronwall certificate.

    Parameters
    ----------
    E : the reduced operator from `reduce_system` (for the time-derivative
        functional d' = F_red - E d).
    loads : full-space load vectors at the time nodes (None = zero); dual
        norms go through the Riesz solve.
    u_T : the full-space data field whose projection initialized the run.

    The bound uses C1 = 2*omega and C2 = 1/(2*lambda) from the ledger, the
    squared projected initial state, and right-endpoint partial sums of the
    squared dual data norm.
    """
    grid = reduced.grid
    tau = grid.tau
    n_nodes = grid.n_steps + 1
    loads = _node_loads(loads, grid, mass.shape[0])
    f_red = loads @ basis.modes

    d = reduced.coeffs
    norm_m_sq = np.einsum("nk,nk->n", d, d)           # modes are M-orthonormal
    h1_sq = np.einsum("nk,k,nk->n", d, basis.eigenvalues, d)

    load_hm1_sq = np.array([riesz.norm_sq(loads[k]) for k in range(n_nodes)])

    # time-derivative functional of the reduced ODE at every node
    dprime = f_red - d @ E.T
    deriv_vecs = mass.matrix.dot((dprime @ basis.modes.T).T).T
    deriv_hm1_sq = np.array([riesz.norm_sq(deriv_vecs[k]) for k in range(n_nodes)])

    trap = np.full(n_nodes, 1.0)
    trap[0] = trap[-1] = 0.5
    l2_h1_sq = float(np.dot(trap, h1_sq) * tau)
    l2_hm1_sq = float(np.dot(trap, deriv_hm1_sq) * tau)

    c1, c2 = 2.0 * ledger.omega, 1.0 / (2.0 * ledger.lam)
    prefix = np.concatenate([[0.0], np.cumsum(tau * load_hm1_sq[1:])])
    bounds = np.exp(c1 * grid.times) * (norm_m_sq[0] + c2 * prefix)
    margins = bounds - norm_m_sq
    violated = bool(np.any(norm_m_sq > bounds * (1.0 + 1e-10) + 1e-14))

    u_T = np.asarray(u_T, dtype=float)
    data_norm_sq = float(tau * load_hm1_sq[1:].sum()) + float(u_T @ mass.dot(u_T))
    numerator = float(norm_m_sq.max()) + l2_h1_sq + l2_hm1_sq
    ratio = 0.0 if data_norm_sq == 0.0 else numerator / data_norm_sq
    return CertificateRecord(
        n_modes=basis.n_modes,
        max_M_norm_sq=float(norm_m_sq.max()),
        l2_h1_sq=l2_h1_sq,
        l2_hm1_sq=l2_hm1_sq,
        data_norm_sq=data_norm_sq,
        ratio=ratio,
        gronwall_bound=float(bounds[-1]),
        violated=violated,
        worst_margin=float(margins.min()),
        bounds=bounds,
    )
