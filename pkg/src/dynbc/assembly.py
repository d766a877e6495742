"""Assembly of the coupled bulk-surface forms on shared degrees of freedom.

There is one unknown per mesh node.  A boundary node carries both the bulk
value and the surface value, so the trace constraint between the two fields
holds identically at the discrete level and no multipliers are needed.

Operators assembled here (all exact for P1 elements with piecewise-constant
coefficients):

    mass            <U, V>      bulk P1 mass plus boundary polyline mass
    diffusion       d * (grad u, grad v) + delta * (arclength derivatives)
    drift/reaction  (B.grad u, v) + (b.tau u', v) + (c u, v) + (ell u, v)
    H1 Gram         unit-coefficient diffusion + mass; this single matrix is
                    both the discrete H1 inner product and the symmetric
                    positive form whose eigenbasis drives the spectral mode

Loads come in two flavors: plain square-integrable data (nodal or piecewise
constant samples), and dual-space data given by the representation
(f0, F1, g0, G1) acting as

    <Theta, V> = (f0, v) + (F1, grad v) + (g0, v_s) + (G1.tau, v_s')

which realizes divergence-form right-hand sides weakly.  Dual norms are
computed through the Riesz solve against the H1 Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientSet
from .geometry import BoundaryMesh, Mesh2D, TraceMap, tangential_derivative_stencil

SYMMETRY_TOL = 1e-12


class AssemblyError(Exception):
    """Inconsistent geometry or data passed to an assembly routine."""


@dataclass(frozen=True)
class CoupledDofMap:
    """One degree of freedom per bulk node; boundary nodes are flagged."""

    n_total: int
    boundary_flags: np.ndarray   # bool, True on boundary nodes
    node_ids: np.ndarray         # surface ordering: bulk index per surface dof

    def __post_init__(self):
        if int(self.boundary_flags.sum()) != len(self.node_ids):
            raise AssemblyError("boundary flag count disagrees with surface dofs")

    @property
    def n_surface(self) -> int:
        return len(self.node_ids)


def build_dofmap(mesh: Mesh2D, bmesh: BoundaryMesh, tmap: TraceMap) -> CoupledDofMap:
    flags = np.zeros(mesh.n_nodes, dtype=bool)
    flags[tmap.surface_to_bulk] = True
    flags.setflags(write=False)
    return CoupledDofMap(mesh.n_nodes, flags, bmesh.node_ids)


@dataclass(frozen=True)
class ProductField:
    """A coupled field: bulk values everywhere, surface values by trace."""

    values: np.ndarray
    dofmap: CoupledDofMap

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.shape != (self.dofmap.n_total,):
            raise AssemblyError("field length disagrees with the dof map")
        if not np.all(np.isfinite(values)):
            raise AssemblyError("field has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def bulk(self) -> np.ndarray:
        return self.values

    @property
    def surface(self) -> np.ndarray:
        return self.values[self.dofmap.node_ids]


@dataclass(frozen=True)
class BlockOperator:
    """Sparse operator on the coupled dofs with a verified symmetry flag."""

    matrix: sp.csr_matrix
    symmetric: bool

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix)
        if self.symmetric:
            gap = abs(mat - mat.T)
            scale = abs(mat).max() if mat.nnz else 0.0
            if gap.nnz and gap.max() > SYMMETRY_TOL * max(scale, 1e-300):
                raise AssemblyError("operator marked symmetric is not")
        object.__setattr__(self, "matrix", mat)

    @property
    def shape(self):
        return self.matrix.shape

    def dot(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix.dot(vec)

    @property
    def T(self) -> "BlockOperator":
        return BlockOperator(self.matrix.T.tocsr(), self.symmetric)

    def __add__(self, other: "BlockOperator") -> "BlockOperator":
        return BlockOperator((self.matrix + other.matrix).tocsr(),
                             self.symmetric and other.symmetric)


def apply_form(op: BlockOperator, U, V) -> float:
    """Evaluate the bilinear form V^T A U (first argument = trial field)."""
    u = U.values if isinstance(U, ProductField) else np.asarray(U, dtype=float)
    v = V.values if isinstance(V, ProductField) else np.asarray(V, dtype=float)
    if u.shape != (op.shape[1],) or v.shape != (op.shape[0],):
        raise AssemblyError("field/operator dimension mismatch")
    return float(v @ op.dot(u))


def _triangle_geometry(mesh: Mesh2D):
    """Areas and P1 gradients per triangle: grads[t, i] = grad phi_i."""
    p = mesh.nodes[mesh.triangles]            # (n_tri, 3, 2)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    areas = 0.5 * (e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0]))
    grads = np.empty((len(p), 3, 2))
    for i, e in enumerate((e0, e1, e2)):
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2.0 * areas)[:, None, None]
    return areas, grads


def _accumulate(rows, cols, vals, n) -> sp.csr_matrix:
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n))
    return mat.tocsr()


_TRI_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def _bulk_matrix(mesh: Mesh2D, local: np.ndarray) -> sp.csr_matrix:
    """Scatter per-triangle 3x3 local matrices into the global operator."""
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return _accumulate([rows], [cols], [local.reshape(len(tris), 9).ravel()],
                       mesh.n_nodes)


def _surface_matrix(mesh: Mesh2D, bmesh: BoundaryMesh, local: np.ndarray) -> sp.csr_matrix:
    edges = bmesh.edges
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return _accumulate([rows], [cols], [local.reshape(len(edges), 4).ravel()],
                       mesh.n_nodes)


def assemble_mass_parts(mesh: Mesh2D, bmesh: BoundaryMesh,
                        dofmap: CoupledDofMap) -> tuple[BlockOperator, BlockOperator]:
    """Bulk and surface mass matrices as separate operators (no lumping)."""
    areas, _ = _triangle_geometry(mesh)
    bulk = _bulk_matrix(mesh, areas[:, None, None] * _TRI_MASS)
    surf = _surface_matrix(mesh, bmesh,
                           bmesh.edge_lengths[:, None, None] * _EDGE_MASS)
    return BlockOperator(bulk, True), BlockOperator(surf, True)


def assemble_mass(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap) -> BlockOperator:
    """Coupled mass operator: bulk P1 mass plus boundary polyline mass."""
    m_bulk, m_surf = assemble_mass_parts(mesh, bmesh, dofmap)
    return m_bulk + m_surf


def assemble_diffusion(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap,
                       d: float, delta: float) -> BlockOperator:
    """Weighted stiffness: d * bulk gradients + delta * arclength derivatives.

    Symmetric positive semidefinite; the kernel is the constant field.
    """
    if d <= 0.0 or delta <= 0.0:
        raise ValueError("diffusion coefficients d and delta must be positive")
    areas, grads = _triangle_geometry(mesh)
    local_bulk = d * areas[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    bulk = _bulk_matrix(mesh, local_bulk)

    stencil = tangential_derivative_stencil(bmesh)      # (n_edge, 2)
    local_surf = (delta * bmesh.edge_lengths)[:, None, None] \
        * np.einsum("ei,ej->eij", stencil, stencil)
    surf = _surface_matrix(mesh, bmesh, local_surf)
    return BlockOperator(bulk + surf, True)


def assemble_h1_gram(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap) -> BlockOperator:
    """Discrete H1 inner product: unit-coefficient diffusion plus mass.

    Symmetric positive definite.  Its generalized eigenvalues against the
    mass are >= 1 with the constant field as ground mode, and it doubles as
    the Gram matrix of every Riesz/dual-norm computation.
    """
    kq = assemble_diffusion(mesh, bmesh, dofmap, 1.0, 1.0)
    m = assemble_mass(mesh, bmesh, dofmap)
    return kq + m


def assemble_drift_reaction(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap,
                            coeffs: CoefficientSet) -> BlockOperator:
    """Nonsymmetric perturbation: advection by B / b plus reactions c / ell.

    Entry (i, j) pairs the j-th trial hat with the i-th test hat; only the
    tangential component of the surface drift enters.
    """
    n_tri = len(mesh.triangles)
    n_edge = len(bmesh.edges)
    if coeffs.B.shape[0] != n_tri or coeffs.c.shape[0] != n_tri:
        raise AssemblyError("bulk coefficient arrays do not match the mesh")
    if coeffs.b.shape[0] != n_edge or coeffs.ell.shape[0] != n_edge:
        raise AssemblyError("surface coefficient arrays do not match the boundary")

    areas, grads = _triangle_geometry(mesh)
    # int phi_i (B . grad phi_j) = (area/3) * B . grad phi_j, same for each i
    b_dot_grad = np.einsum("td,tjd->tj", coeffs.B, grads)       # (n_tri, 3)
    local_bulk = (areas / 3.0)[:, None, None] * b_dot_grad[:, None, :]
    local_bulk = local_bulk + coeffs.c[:, None, None] * (areas[:, None, None] * _TRI_MASS)
    bulk = _bulk_matrix(mesh, local_bulk)

    stencil = tangential_derivative_stencil(bmesh)
    b_tau = np.einsum("ed,ed->e", coeffs.b, bmesh.tangents)     # (n_edge,)
    # int phi_i (b.tau) dphi_j/ds = (L/2) * (b.tau) * slope_j, same for each i
    local_surf = (0.5 * bmesh.edge_lengths * b_tau)[:, None, None] \
        * stencil[:, None, :]
    local_surf = local_surf + coeffs.ell[:, None, None] \
        * (bmesh.edge_lengths[:, None, None] * _EDGE_MASS)
    surf = _surface_matrix(mesh, bmesh, local_surf)
    return BlockOperator(bulk + surf, False)


def assemble_operators(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap,
                       coeffs: CoefficientSet) -> "OperatorSet":
    """Assemble the full operator family for one coefficient set."""
    m_bulk, m_surf = assemble_mass_parts(mesh, bmesh, dofmap)
    mass = m_bulk + m_surf
    diffusion = assemble_diffusion(mesh, bmesh, dofmap, coeffs.d, coeffs.delta)
    drift = assemble_drift_reaction(mesh, bmesh, dofmap, coeffs)
    gram = assemble_h1_gram(mesh, bmesh, dofmap)
    return OperatorSet(mass=mass, mass_bulk=m_bulk, mass_surface=m_surf,
                       diffusion=diffusion, drift=drift, h1_gram=gram,
                       spatial=diffusion + drift)


@dataclass(frozen=True)
class OperatorSet:
    """The assembled operator family of one problem instance.

    `spatial` is diffusion + drift, the full operator of the evolution.
    """

    mass: BlockOperator
    mass_bulk: BlockOperator
    mass_surface: BlockOperator
    diffusion: BlockOperator
    drift: BlockOperator
    h1_gram: BlockOperator
    spatial: BlockOperator


# --- loads -------------------------------------------------------------------

class LoadAssembler:
    """Precomputed element data for repeated load assembly on one geometry.

    Time-dependent runs assemble a load vector per time node; this caches
    the mass blocks and geometry so each vector costs one sparse matvec.
    """

    def __init__(self, mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap):
        self.mesh = mesh
        self.bmesh = bmesh
        self.dofmap = dofmap
        self.mass_bulk, self.mass_surface = assemble_mass_parts(mesh, bmesh, dofmap)
        self._areas, self._grads = _triangle_geometry(mesh)

    def nodal(self, f=None, g=None, f_layout: str = "node",
              g_layout: str = "node") -> np.ndarray:
        dofmap = self.dofmap
        load = np.zeros(dofmap.n_total)
        if f is not None:
            f = np.asarray(f, dtype=float)
            if f_layout == "node":
                if f.shape != (dofmap.n_total,):
                    raise AssemblyError("nodal bulk data must have one value per node")
                load += self.mass_bulk.dot(f)
            elif f_layout == "cell":
                if f.shape != (len(self.mesh.triangles),):
                    raise AssemblyError("cell bulk data must have one value per triangle")
                np.add.at(load, self.mesh.triangles.ravel(),
                          np.repeat(f * self._areas / 3.0, 3))
            else:
                raise ValueError(f"unknown bulk layout {f_layout!r}")
        if g is not None:
            g = np.asarray(g, dtype=float)
            if g_layout == "node":
                if g.shape != (dofmap.n_surface,):
                    raise AssemblyError("nodal surface data must match the surface dofs")
                g_bulk = np.zeros(dofmap.n_total)
                g_bulk[dofmap.node_ids] = g
                load += self.mass_surface.dot(g_bulk)
            elif g_layout == "edge":
                if g.shape != (len(self.bmesh.edges),):
                    raise AssemblyError("edge surface data must have one value per edge")
                np.add.at(load, self.bmesh.edges.ravel(),
                          np.repeat(g * self.bmesh.edge_lengths / 2.0, 2))
            else:
                raise ValueError(f"unknown surface layout {g_layout!r}")
        return load

    def dual(self, source: "DualSource") -> np.ndarray:
        load = self.nodal(f=source.f0, g=source.g0)
        if source.F1 is not None:
            F1 = np.asarray(source.F1, dtype=float)
            if F1.shape != (len(self.mesh.triangles), 2):
                raise AssemblyError("F1 must be one 2-vector per triangle")
            contrib = self._areas[:, None] * np.einsum("td,tjd->tj", F1, self._grads)
            np.add.at(load, self.mesh.triangles.ravel(), contrib.ravel())
        if source.G1 is not None:
            G1 = np.asarray(source.G1, dtype=float)
            if G1.shape != (len(self.bmesh.edges), 2):
                raise AssemblyError("G1 must be one 2-vector per boundary edge")
            g_tau = np.einsum("ed,ed->e", G1, self.bmesh.tangents)
            stencil = tangential_derivative_stencil(self.bmesh)
            contrib = (self.bmesh.edge_lengths * g_tau)[:, None] * stencil
            np.add.at(load, self.bmesh.edges.ravel(), contrib.ravel())
        return load


def assemble_load(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap,
                  f=None, g=None, f_layout: str = "node",
                  g_layout: str = "node") -> np.ndarray:
    """Load vector of square-integrable data: L_i = (f, phi_i) + (g, phi_i).

    Parameters
    ----------
    f : bulk data; nodal array of length n_nodes (layout "node") or one value
        per triangle (layout "cell").  None means zero.
    g : surface data; nodal array over the surface dofs in cycle order
        (layout "node") or one value per boundary edge (layout "edge").

    For many loads on one geometry, build a LoadAssembler once instead.
    """
    return LoadAssembler(mesh, bmesh, dofmap).nodal(f, g, f_layout, g_layout)


@dataclass(frozen=True)
class DualSource:
    """Representation (f0, F1, g0, G1) of a dual-space right-hand side.

    f0 : nodal bulk field (length n_nodes) or None
    F1 : (n_tri, 2) bulk vector field, piecewise constant, or None
    g0 : nodal surface field (length n_surface) or None
    G1 : (n_bedge, 2) surface vector field, piecewise constant, or None
    """

    f0: np.ndarray | None = None
    F1: np.ndarray | None = None
    g0: np.ndarray | None = None
    G1: np.ndarray | None = None

    def __post_init__(self):
        for name in ("f0", "F1", "g0", "G1"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise AssemblyError(f"dual source component {name} is not finite")
            object.__setattr__(self, name, arr)


def assemble_dual_load(mesh: Mesh2D, bmesh: BoundaryMesh, dofmap: CoupledDofMap,
                       source: DualSource) -> np.ndarray:
    """Load vector of a dual-space functional.

    L_i = (f0, phi_i) + (F1, grad phi_i) + (g0, phi_i) + (G1.tau, phi_i');
    the gradient pairings realize divergence-form data weakly.  With
    F1 = G1 = None this reduces bit-for-bit to `assemble_load(f0, g0)`.
    """
    return LoadAssembler(mesh, bmesh, dofmap).dual(source)


class RieszSolver:
    """Cached factorization of the H1 Gram matrix for dual-norm evaluations."""

    def __init__(self, h1_gram: BlockOperator):
        self.gram = h1_gram
        self._lu = spla.splu(h1_gram.matrix.tocsc())

    def representer(self, load: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(load, dtype=float))

    def norm_sq(self, load: np.ndarray) -> float:
        val = float(np.dot(load, self.representer(load)))
        return max(val, 0.0)

    def norm(self, load: np.ndarray) -> float:
        return float(np.sqrt(self.norm_sq(load)))


def dual_norm(load: np.ndarray, h1_gram: BlockOperator) -> float:
    """Discrete dual norm sqrt(L^T K^-1 L): the supremum of <Theta, U> over
    the discrete unit ball of the H1 inner product."""
    return RieszSolver(h1_gram).norm(load)


# --- coordinate text export ---------------------------------------------------

def matrix_to_text(op: BlockOperator) -> str:
    """Coordinate format "i j value", 0-based, 17 significant digits."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}" for k in order]
    return "\n".join(lines) + ("\n" if lines else "")


def write_matrix(op: BlockOperator, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(matrix_to_text(op))
