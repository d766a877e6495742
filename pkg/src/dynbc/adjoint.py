"""Backward-in-time solves for the transposed evolution, and discrete duality.

The backward problem runs the transposed spatial operator from a final
state: M dPsi/dt = G^T Psi + L(t) on [0, T] with Psi(T) given.  Under the
time reversal s = T - t it becomes a forward theta march for G^T with the
negated, time-reflected load, which is how `solve_backward_weak` computes it.

`solve_backward_transpose` instead takes the algebraic adjoint of the
implicit-Euler forward one-step map.  Writing A = M + tau*G^T, its slots are

    slot[n_steps] = Psi_T,
    slot[n]       = A^{ -1} (M slot[n+1] - tau L^{n+1}),   n = n_steps-1 .. 0,

i.e. the same recursion as the weak theta = 1 scheme with the load sampled
one node later.  Slot n holds the adjoint multiplier of forward step n + 1;
with this pairing the bilinear identity

    sum_n tau <Q^n, Psi^n>  -  <Y^N, Psi_T>_M  +  sum_n tau <F^n, Y^n>  =  0

holds exactly (to solver precision) for every forward trajectory started
from zero with sources Q, which is the discrete form of the distributional
characterization of weak backward solutions.  The weak scheme satisfies the
same identity only up to O(tau).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import BlockOperator, CoupledDofMap, ProductField
from .forward import SolveError, ThetaStepper, TimeGrid, Trajectory, _check_theta, _node_loads


def _final_state(psi_T, dofmap: CoupledDofMap | None):
    if dofmap is None and isinstance(psi_T, ProductField):
        dofmap = psi_T.dofmap
    if dofmap is None:
        raise ValueError("pass a dofmap or a ProductField final state")
    vec = np.array(psi_T.values if isinstance(psi_T, ProductField) else psi_T,
                   dtype=float)
    if vec.shape != (dofmap.n_total,):
        raise ValueError("final state length disagrees with the dof map")
    return vec, dofmap


def solve_backward_weak(mass: BlockOperator, diffusion: BlockOperator,
                        drift: BlockOperator, loads, psi_T, grid: TimeGrid,
                        theta: float = 1.0,
                        dofmap: CoupledDofMap | None = None) -> Trajectory:
    """Theta scheme for the transposed evolution, marched backward from T.

    loads are dual load vectors sampled at the time nodes (from
    `assemble_load` or `assemble_dual_load`); None means homogeneous.  The
    returned trajectory is indexed forward in t with states[-1] = psi_T.
    """
    theta = _check_theta(theta)
    psi, dofmap = _final_state(psi_T, dofmap)
    transposed = diffusion + drift.T
    loads = _node_loads(loads, grid, dofmap.n_total)
    stepper = ThetaStepper(mass, transposed, grid.tau, theta)

    states = np.empty((grid.n_steps + 1, dofmap.n_total))
    states[grid.n_steps] = psi
    for n in range(grid.n_steps - 1, -1, -1):
        # reversed-time theta average: destination node n gets weight theta
        load_theta = -(theta * loads[n] + (1.0 - theta) * loads[n + 1])
        psi = stepper.step(psi, load_theta, n)
        states[n] = psi
    return Trajectory(states, grid, dofmap, theta,
                      {"scheme": "theta", "tau": grid.tau, "mode": "backward-weak"})


def solve_backward_transpose(mass: BlockOperator, diffusion: BlockOperator,
                             drift: BlockOperator, loads, psi_T,
                             grid: TimeGrid,
                             dofmap: CoupledDofMap | None = None) -> Trajectory:
    """Exact algebraic adjoint of the implicit-Euler forward stepper.

    Slot n of the result is the adjoint multiplier of forward step n + 1;
    slot n_steps is the given final state.  Coincides with the weak theta=1
    backward solve whenever the loads vanish, and makes `duality_residual`
    an exact identity in all cases.
    """
    psi, dofmap = _final_state(psi_T, dofmap)
    transposed = diffusion + drift.T
    loads = _node_loads(loads, grid, dofmap.n_total)

    implicit = (mass.matrix + grid.tau * transposed.matrix).tocsc()
    try:
        lu = spla.splu(implicit)
    except RuntimeError as exc:
        raise SolveError(f"factorization of the adjoint matrix failed: {exc}") from exc

    states = np.empty((grid.n_steps + 1, dofmap.n_total))
    states[grid.n_steps] = psi
    for n in range(grid.n_steps - 1, -1, -1):
        rhs = mass.dot(states[n + 1]) - grid.tau * loads[n + 1]
        psi = lu.solve(rhs)
        if not np.all(np.isfinite(psi)):
            raise SolveError(f"non-finite adjoint state at slot {n}", n)
        residual = np.linalg.norm(implicit.dot(psi) - rhs)
        if residual > 1e-12 * max(np.linalg.norm(rhs), 1e-300):
            raise SolveError(f"adjoint slot {n}: solve residual {residual:.3e}", n)
        states[n] = psi
    return Trajectory(states, grid, dofmap, 1.0,
                      {"scheme": "theta", "tau": grid.tau, "mode": "backward-transpose"})


class DualityResult(NamedTuple):
    residual: float
    relative: float
    term_forward_sources: float
    term_final: float
    term_backward_sources: float


def duality_residual(mass: BlockOperator, forward_traj: Trajectory,
                     forward_loads, backward_traj: Trajectory,
                     backward_loads, psi_T) -> DualityResult:
    """Defect of the forward/backward pairing identity.

    Requires forward_traj to start from zero.  The three terms are

        sum_{n=1..N} tau <Q^n, Psi_slot[n-1]>,   <Y^N, Psi_T>_M,
        sum_{n=1..N} tau <F^n, Y^n>,

    and the residual is term1 - term2 + term3.  With the exact-transpose
    backward solve this vanishes to solver precision; with the weak scheme
    it is O(tau).
    """
    if forward_traj.grid != backward_traj.grid:
        raise ValueError("forward and backward trajectories use different grids")
    if forward_traj.dofmap.n_total != backward_traj.dofmap.n_total:
        raise ValueError("forward and backward trajectories use different dof maps")
    if np.linalg.norm(forward_traj.states[0]) != 0.0:
        raise ValueError("duality identity requires a zero forward initial state")
    grid = forward_traj.grid
    n_dofs = forward_traj.dofmap.n_total
    q = _node_loads(forward_loads, grid, n_dofs)
    f = _node_loads(backward_loads, grid, n_dofs)
    psi_vec = psi_T.values if isinstance(psi_T, ProductField) else np.asarray(psi_T, dtype=float)

    tau = grid.tau
    term_q = tau * float(np.einsum("nd,nd->", q[1:], backward_traj.states[:-1]))
    term_t = float(forward_traj.final @ mass.dot(psi_vec))
    term_f = tau * float(np.einsum("nd,nd->", f[1:], forward_traj.states[1:]))
    residual = term_q - term_t + term_f
    scale = max(abs(term_q), abs(term_t), abs(term_f), 1e-300)
    return DualityResult(residual, abs(residual) / scale, term_q, term_t, term_f)
