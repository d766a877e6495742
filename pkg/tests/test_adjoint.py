import numpy as np
import pytest

from dynbc import (CoefficientSet, TimeGrid, assemble_load, assemble_operators,
                   derive_constants, duality_residual, solve_backward_transpose,
                   solve_backward_weak, solve_forward)
from oracles import observed_order, rk4_backward


def smooth_loads(mesh, bmesh, dofmap, grid):
    """Loads from a smooth separable space-time profile."""
    bulk_vec = assemble_load(mesh, bmesh, dofmap,
                             f=1.0 + mesh.nodes[:, 0] * mesh.nodes[:, 1])
    surf_vec = assemble_load(mesh, bmesh, dofmap,
                             g=0.5 + mesh.nodes[dofmap.node_ids, 1])

    def load_at(t):
        return np.exp(-0.7 * t) * bulk_vec + np.cos(t) * surf_vec

    return np.array([load_at(t) for t in grid.times]), load_at


def test_constants_steady_backward(coarse_disk):
    mesh, bmesh, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(1.0, 8)
    traj = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, None,
                               np.ones(dofmap.n_total), grid, theta=1.0,
                               dofmap=dofmap)
    assert np.abs(traj.states - 1.0).max() <= 1e-12


def test_symmetric_backward_equals_reversed_forward(coarse_disk):
    mesh, bmesh, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=2.0)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(1.0, 8)
    rng = np.random.default_rng(21)
    psi_T = rng.uniform(-1, 1, dofmap.n_total)
    back = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, None,
                               psi_T, grid, theta=1.0, dofmap=dofmap)
    fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, None, psi_T,
                        grid, theta=1.0, dofmap=dofmap)
    assert np.abs(back.states - fwd.states[::-1]).max() <= 1e-12


def test_transpose_matches_weak_in_symmetric_homogeneous_case(coarse_disk):
    mesh, bmesh, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=2.0)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(1.0, 6)
    rng = np.random.default_rng(8)
    psi_T = rng.uniform(-1, 1, dofmap.n_total)
    weak = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, None,
                               psi_T, grid, theta=1.0, dofmap=dofmap)
    transpose = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift,
                                         None, psi_T, grid, dofmap=dofmap)
    assert np.abs(weak.states - transpose.states).max() <= 1e-12


def test_zero_data_gives_zero_trajectory(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    grid = TimeGrid(1.0, 4)
    traj = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift, None,
                                    np.zeros(dofmap.n_total), grid, dofmap=dofmap)
    assert np.abs(traj.states).max() == 0.0


def test_duality_exact_on_small_instance(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    grid = TimeGrid(1.0, 4)
    rng = np.random.default_rng(17)
    n = dofmap.n_total
    q = rng.uniform(-1, 1, (grid.n_steps + 1, n))
    f = rng.uniform(-1, 1, (grid.n_steps + 1, n))
    psi_T = rng.uniform(-1, 1, n)
    fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, q, np.zeros(n),
                        grid, theta=1.0, dofmap=dofmap)
    bwd = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift, f,
                                   psi_T, grid, dofmap=dofmap)
    res = duality_residual(ops.mass, fwd, q, bwd, f, psi_T)
    assert res.relative <= 1e-12


def test_weak_duality_residual_first_order(coarse_disk):
    mesh, bmesh, dofmap, _, ops, _ = coarse_disk

    def weak_relative(n_steps):
        grid = TimeGrid(1.0, n_steps)
        q_loads, _ = smooth_loads(mesh, bmesh, dofmap, grid)
        f_loads = 0.5 * q_loads[::-1]
        psi_T = 1.0 + mesh.nodes[:, 0]
        fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, q_loads,
                            np.zeros(dofmap.n_total), grid, theta=1.0,
                            dofmap=dofmap)
        bwd = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, f_loads,
                                  psi_T, grid, theta=1.0, dofmap=dofmap)
        return duality_residual(ops.mass, fwd, q_loads, bwd, f_loads, psi_T).relative

    ratio = weak_relative(32) / weak_relative(16)
    assert 0.35 <= ratio <= 0.65


def test_weak_backward_matches_dense_oracle_first_order(tiny_disk):
    mesh, bmesh, dofmap, _, ops = tiny_disk
    T = 1.0
    psi_T = 1.0 + 0.5 * mesh.nodes[:, 1]
    _, load_at = smooth_loads(mesh, bmesh, dofmap, TimeGrid(T, 2))
    _, oracle = rk4_backward(ops.mass.matrix.toarray(), ops.spatial.matrix.toarray(),
                             load_at, psi_T, T, 2048)

    errors, taus = [], []
    for n_steps in (8, 16, 32):
        grid = TimeGrid(T, n_steps)
        loads = np.array([load_at(t) for t in grid.times])
        traj = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, loads,
                                   psi_T, grid, theta=1.0, dofmap=dofmap)
        stride = 2048 // n_steps
        errors.append(np.abs(traj.states - oracle[::stride]).max())
        taus.append(grid.tau)
    assert 0.8 <= observed_order(taus, errors) <= 1.2


def test_backward_determinism_bitwise(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    grid = TimeGrid(1.0, 8)
    rng = np.random.default_rng(2)
    psi_T = rng.uniform(-1, 1, dofmap.n_total)
    loads = rng.uniform(-1, 1, (grid.n_steps + 1, dofmap.n_total))
    a = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, loads, psi_T,
                            grid, theta=1.0, dofmap=dofmap)
    b = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, loads, psi_T,
                            grid, theta=1.0, dofmap=dofmap)
    assert np.array_equal(a.states, b.states)


def test_final_data_stability_uniform_in_tau(tiny_disk):
    # perturbing the final data moves the solution by at most C * |eta|_M
    # with C independent of the step count
    mesh, _, dofmap, coeffs, ops = tiny_disk
    ledger = derive_constants(coeffs)
    T = 1.0
    bound = np.exp(ledger.omega * T) * 1.2
    rng = np.random.default_rng(12)
    psi_T = rng.uniform(-1, 1, dofmap.n_total)
    eta = 1e-3 * rng.uniform(-1, 1, dofmap.n_total)

    def sensitivity(n_steps):
        grid = TimeGrid(T, n_steps)
        base = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, None,
                                   psi_T, grid, theta=1.0, dofmap=dofmap)
        pert = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, None,
                                   psi_T + eta, grid, theta=1.0, dofmap=dofmap)
        diff = pert.states - base.states
        norms = np.einsum("nd,nd->n", diff, (ops.mass.matrix @ diff.T).T)
        return float(np.sqrt(norms.max()))

    eta_norm = float(np.sqrt(eta @ ops.mass.dot(eta)))
    for n_steps in (8, 16, 32):
        assert sensitivity(n_steps) <= bound * eta_norm


def test_duality_all_terms_vanish_on_zero_data(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    grid = TimeGrid(1.0, 4)
    n = dofmap.n_total
    rng = np.random.default_rng(33)
    psi_T = rng.uniform(-1, 1, n)
    fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, None, np.zeros(n),
                        grid, theta=1.0, dofmap=dofmap)
    bwd = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift, None,
                                   psi_T, grid, dofmap=dofmap)
    res = duality_residual(ops.mass, fwd, None, bwd, None, psi_T)
    assert res.term_forward_sources == 0.0
    assert res.term_final == 0.0
    assert res.term_backward_sources == 0.0
    assert res.residual == 0.0


def test_duality_requires_zero_initial_state(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    grid = TimeGrid(1.0, 4)
    n = dofmap.n_total
    fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, None, np.ones(n),
                        grid, theta=1.0, dofmap=dofmap)
    bwd = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift, None,
                                   np.ones(n), grid, dofmap=dofmap)
    with pytest.raises(ValueError):
        duality_residual(ops.mass, fwd, None, bwd, None, np.ones(n))


def test_duality_requires_matching_grids(tiny_disk):
    _, _, dofmap, _, ops = tiny_disk
    n = dofmap.n_total
    fwd = solve_forward(ops.mass, ops.diffusion, ops.drift, None, np.zeros(n),
                        TimeGrid(1.0, 4), theta=1.0, dofmap=dofmap)
    bwd = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift, None,
                                   np.ones(n), TimeGrid(1.0, 8), dofmap=dofmap)
    with pytest.raises(ValueError):
        duality_residual(ops.mass, fwd, None, bwd, None, np.ones(n))
