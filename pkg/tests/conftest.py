import numpy as np
import pytest

from dynbc import (CoefficientSet, assemble_operators, build_dofmap,
                   derive_constants, disk_mesh, extract_boundary, square_mesh)


@pytest.fixture(scope="session")
def unit_square():
    mesh = square_mesh(1.0, 0)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    return mesh, bmesh, tmap, dofmap


@pytest.fixture(scope="session")
def square_ref2():
    mesh = square_mesh(1.0, 2)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    return mesh, bmesh, tmap, dofmap


@pytest.fixture(scope="session")
def coarse_disk():
    """~160-dof disk with a nontrivial drift/reaction coefficient set."""
    mesh = disk_mesh(1.0, 16, 2)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=1.0,
                                     B=(1.0, 0.0), b=(0.0, 0.5),
                                     c=0.3, ell=-0.2)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    ledger = derive_constants(coeffs)
    return mesh, bmesh, dofmap, coeffs, ops, ledger


@pytest.fixture(scope="session")
def tiny_disk():
    """25-dof disk for dense-oracle comparisons."""
    mesh = disk_mesh(1.0, 8, 1)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    coeffs = CoefficientSet.constant(mesh, bmesh, d=1.0, delta=2.0,
                                     B=(0.6, -0.2), b=(0.3, 0.1),
                                     c=0.4, ell=0.15)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    return mesh, bmesh, dofmap, coeffs, ops


def mass_norm(vec: np.ndarray, mass) -> float:
    return float(np.sqrt(max(vec @ mass.dot(vec), 0.0)))
