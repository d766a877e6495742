import numpy as np
import pytest

from dynbc import (CoefficientSet, SolveError, TimeGrid, assemble_operators,
                   energy_identity_residual, mass_functional, solve_forward)
from oracles import rk4_forward


def drift_free_ops(instance):
    mesh, bmesh, dofmap = instance[0], instance[1], instance[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0)
    return dofmap, assemble_operators(mesh, bmesh, dofmap, coeffs)


def test_constants_are_steady_states(coarse_disk):
    dofmap, ops = drift_free_ops(coarse_disk)
    grid = TimeGrid(1.0, 8)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None,
                         np.ones(dofmap.n_total), grid, theta=1.0, dofmap=dofmap)
    assert np.abs(traj.states - 1.0).max() <= 1e-12


def test_constant_mode_decay_recurrence(coarse_disk):
    # c = ell = 1 couples the constant mode only to itself: the implicit
    # Euler iterates are exactly (1 + tau)^(-n)
    mesh, bmesh, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0, c=1.0, ell=1.0)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(1.0, 10)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None,
                         np.ones(dofmap.n_total), grid, theta=1.0, dofmap=dofmap)
    expected = (1.0 + grid.tau) ** -np.arange(grid.n_steps + 1)
    assert np.abs(traj.states - expected[:, None]).max() <= 1e-12


def test_mass_functional_of_ones(coarse_disk):
    mesh, _, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    _, ops = drift_free_ops(coarse_disk)
    split = mass_functional(ops.mass_bulk, ops.mass_surface, np.ones(dofmap.n_total))
    assert split.bulk == pytest.approx(mesh.total_area, abs=1e-12)
    assert split.surface == pytest.approx(mesh.perimeter, abs=1e-12)
    assert split.total == pytest.approx(split.bulk + split.surface, abs=1e-12)


def test_conservation_per_step(coarse_disk):
    mesh, _, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    _, ops = drift_free_ops(coarse_disk)
    grid = TimeGrid(1.0, 16)
    y0 = mesh.nodes[:, 0] ** 2 + mesh.nodes[:, 1]
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None, y0, grid,
                         theta=1.0, dofmap=dofmap)
    masses = [mass_functional(ops.mass_bulk, ops.mass_surface, s).total
              for s in traj.states]
    drift = np.abs(np.array(masses) - masses[0]).max()
    assert drift <= 1e-12 * abs(masses[0])


def test_mass_decreasing_with_reaction_matches_oracle(tiny_disk):
    mesh, bmesh, dofmap, _, _ = tiny_disk
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0, c=0.8, ell=0.5)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(1.0, 32)
    y0 = np.ones(dofmap.n_total)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None, y0, grid,
                         theta=1.0, dofmap=dofmap)
    masses = np.array([mass_functional(ops.mass_bulk, ops.mass_surface, s).total
                       for s in traj.states])
    assert np.all(np.diff(masses) < 0.0)

    _, oracle_states = rk4_forward(ops.mass.matrix.toarray(),
                                   ops.spatial.matrix.toarray(),
                                   lambda t: np.zeros(dofmap.n_total),
                                   y0, 1.0, 2048)
    oracle_mass = mass_functional(ops.mass_bulk, ops.mass_surface,
                                  oracle_states[-1]).total
    assert masses[-1] == pytest.approx(oracle_mass, rel=0.05)


def test_unconditional_decay_implicit_euler(coarse_disk):
    # homogeneous run, nonnegative reactions, no drift: the M-norm of the
    # implicit Euler iterates never grows, at any step size
    mesh, bmesh, dofmap = coarse_disk[0], coarse_disk[1], coarse_disk[2]
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0,
                                     c=0.6, ell=0.2)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    rng = np.random.default_rng(7)
    y0 = rng.uniform(-1, 1, dofmap.n_total)
    for n_steps in (2, 8, 64):
        traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None, y0,
                             TimeGrid(1.0, n_steps), theta=1.0, dofmap=dofmap)
        norms = np.einsum("nd,nd->n", traj.states,
                          (ops.mass.matrix @ traj.states.T).T)
        assert np.all(np.diff(norms) <= 1e-12 * norms[0])


def test_energy_identity_constant_trajectory(coarse_disk):
    dofmap, ops = drift_free_ops(coarse_disk)
    grid = TimeGrid(1.0, 8)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None,
                         np.ones(dofmap.n_total), grid, theta=1.0, dofmap=dofmap)
    res = energy_identity_residual(traj, ops.mass, ops.spatial, None)
    assert np.abs(res).max() <= 1e-10


def test_energy_identity_midpoint_exact(coarse_disk):
    mesh, _, dofmap, _, ops, _ = coarse_disk
    grid = TimeGrid(1.0, 16)
    y0 = 1.0 + mesh.nodes[:, 0]
    rng = np.random.default_rng(4)
    loads = np.sin(np.linspace(0, 3, grid.n_steps + 1))[:, None] \
        * rng.uniform(-1, 1, dofmap.n_total)[None, :]
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, loads, y0, grid,
                         theta=0.5, dofmap=dofmap)
    res = energy_identity_residual(traj, ops.mass, ops.spatial, loads)
    scale = max(1.0, float(y0 @ ops.mass.dot(y0)))
    assert np.abs(res).max() <= 1e-10 * scale


def test_energy_identity_first_order_halving(coarse_disk):
    mesh, _, dofmap, _, ops, _ = coarse_disk
    y0 = 1.0 + mesh.nodes[:, 0]

    def max_residual(n_steps):
        grid = TimeGrid(1.0, n_steps)
        traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None, y0,
                             grid, theta=1.0, dofmap=dofmap)
        return np.abs(energy_identity_residual(traj, ops.mass, ops.spatial,
                                               None)).max()

    ratio = max_residual(32) / max_residual(16)
    assert 0.4 <= ratio <= 0.6


def test_theta_outside_stable_range_rejected(coarse_disk):
    dofmap, ops = drift_free_ops(coarse_disk)
    with pytest.raises(ValueError):
        solve_forward(ops.mass, ops.diffusion, ops.drift, None,
                      np.ones(dofmap.n_total), TimeGrid(1.0, 4), theta=0.2,
                      dofmap=dofmap)


def test_overflow_data_raises_with_step_index(coarse_disk):
    dofmap, ops = drift_free_ops(coarse_disk)
    grid = TimeGrid(1.0, 4)
    huge = np.full((grid.n_steps + 1, dofmap.n_total), 1e308)
    with pytest.raises(SolveError) as err:
        solve_forward(ops.mass, ops.diffusion, ops.drift, huge,
                      np.full(dofmap.n_total, 1e308), grid, theta=1.0,
                      dofmap=dofmap)
    assert err.value.step is not None


def test_trajectory_field_access(coarse_disk):
    dofmap, ops = drift_free_ops(coarse_disk)
    grid = TimeGrid(1.0, 4)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, None,
                         np.ones(dofmap.n_total), grid, theta=1.0, dofmap=dofmap)
    field = traj.field_at(2)
    assert np.array_equal(field.surface, field.values[dofmap.node_ids])
    assert len(traj) == 5
    assert traj.grid.tau == pytest.approx(0.25)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
