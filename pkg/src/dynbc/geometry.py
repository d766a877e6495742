"""Triangulated 2D domains with an extracted boundary polyline.

The bulk domain is a triangle mesh; its boundary is treated as a closed
1D manifold mesh (a polygon) carrying its own arclength calculus, so that
surface differential operators reduce to derivatives along the polyline.
Boundary nodes are shared between the two meshes through a trace map.

Built-in generators cover the unit-square family and a structured disk fan.
Disk refinement snaps the new boundary midpoints back onto the circle, so
the polygonal boundary converges to the circle together with the mesh size;
`refine_mesh` on arbitrary meshes performs plain quadrisection and preserves
area and perimeter exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DUPLICATE_NODE_TOL = 1e-12
UNIT_VECTOR_TOL = 1e-12


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


def _boundary_cycle(n_nodes: int, triangles: np.ndarray) -> np.ndarray:
    """Directed boundary edges of a triangle mesh, chained into one cycle.

    Each triangle contributes its three directed edges; an edge lying on the
    boundary appears exactly once (interior edges appear twice, in opposite
    directions).  For counterclockwise triangles the surviving direction runs
    counterclockwise around the domain.  Raises MeshError if the boundary is
    empty, disconnected, or non-manifold.
    """
    edge_count: dict[tuple[int, int], int] = {}
    directed: dict[tuple[int, int], tuple[int, int]] = {}
    for a, b, c in triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (min(i, j), max(i, j))
            edge_count[key] = edge_count.get(key, 0) + 1
            if edge_count[key] == 1:
                directed[key] = (i, j)
            elif edge_count[key] > 2:
                raise MeshError(f"edge {key} shared by more than two triangles")

    boundary = [directed[k] for k, cnt in edge_count.items() if cnt == 1]
    if not boundary:
        raise MeshError("mesh has no boundary edges")

    succ: dict[int, int] = {}
    for i, j in boundary:
        if i in succ:
            raise MeshError(f"non-manifold boundary at node {i}")
        succ[i] = j

    start = min(succ)
    cycle = [start]
    node = succ[start]
    while node != start:
        cycle.append(node)
        if node not in succ:
            raise MeshError(f"boundary chain breaks at node {node}")
        node = succ[node]
        if len(cycle) > len(boundary):
            raise MeshError("boundary is not a single cycle")
    if len(cycle) != len(boundary):
        raise MeshError("boundary has more than one connected component")

    ids = np.asarray(cycle, dtype=np.int64)
    return np.column_stack([ids, np.roll(ids, -1)])


@dataclass(frozen=True)
class Mesh2D:
    """Immutable triangle mesh with a counterclockwise boundary cycle.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    triangles : (n_tri, 3) int array, positively oriented
    boundary_edges : (n_bedges, 2) int array, one closed CCW cycle
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        bedges = np.ascontiguousarray(np.asarray(self.boundary_edges, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (n, 2) array")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must be an (n, 3) array")
        if tris.min(initial=0) < 0 or tris.max(initial=-1) >= len(nodes):
            raise MeshError("triangle indices out of range")
        if np.any(_signed_areas(nodes, tris) <= 0.0):
            raise MeshError("every triangle must have positive signed area")
        if len(nodes) > 1:
            pairs = cKDTree(nodes).query_pairs(DUPLICATE_NODE_TOL)
            if pairs:
                raise MeshError(f"duplicate nodes within tolerance: {sorted(pairs)[0]}")
        expected = _boundary_cycle(len(nodes), tris)
        if bedges.shape != expected.shape or not np.array_equal(
                np.sort(bedges, axis=None), np.sort(expected, axis=None)):
            raise MeshError("boundary_edges do not match the triangulation boundary")
        poly = nodes[expected[:, 0]]
        if _polygon_area(poly) <= 0.0:
            raise MeshError("boundary cycle is not counterclockwise")
        for arr in (nodes, tris, bedges):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", bedges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def perimeter(self) -> float:
        seg = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return float(np.hypot(seg[:, 0], seg[:, 1]).sum())

    def max_edge_length(self) -> float:
        """Longest triangle edge; the mesh-size parameter of convergence studies."""
        h = 0.0
        for i, j in ((0, 1), (1, 2), (2, 0)):
            seg = self.nodes[self.triangles[:, j]] - self.nodes[self.triangles[:, i]]
            h = max(h, float(np.hypot(seg[:, 0], seg[:, 1]).max()))
        return h


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _make_mesh(nodes: np.ndarray, triangles: np.ndarray) -> Mesh2D:
    return Mesh2D(nodes, triangles, _boundary_cycle(len(nodes), triangles))


@dataclass(frozen=True)
class BoundaryMesh:
    """Boundary polyline in cycle order with per-edge arclength data."""

    node_ids: np.ndarray      # bulk indices of the boundary nodes, cycle order
    edges: np.ndarray         # (n_edges, 2) bulk index pairs along the cycle
    edge_lengths: np.ndarray
    tangents: np.ndarray      # unit tangent per edge
    normals: np.ndarray       # outward unit normal per edge

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def total_length(self) -> float:
        return float(self.edge_lengths.sum())


@dataclass(frozen=True)
class TraceMap:
    """Identification of surface degrees of freedom with bulk boundary nodes."""

    surface_to_bulk: np.ndarray

    def bulk_to_surface(self, n_bulk: int) -> np.ndarray:
        """Inverse lookup; -1 for interior bulk nodes."""
        inv = np.full(n_bulk, -1, dtype=np.int64)
        inv[self.surface_to_bulk] = np.arange(len(self.surface_to_bulk))
        return inv


def extract_boundary(mesh: Mesh2D) -> tuple[BoundaryMesh, TraceMap]:
    """Extract the boundary polyline and the surface-to-bulk trace map.

    The cycle starts at the smallest bulk node index on the boundary so the
    surface ordering is deterministic.  Tangents follow the CCW cycle and
    normals point outward (tangent rotated by -90 degrees).
    """
    edges = mesh.boundary_edges
    node_ids = edges[:, 0].copy()
    seg = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths <= 0.0):
        raise MeshError("degenerate zero-length boundary edge")
    tangents = seg / lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    bmesh = BoundaryMesh(node_ids, edges.copy(), lengths, tangents, normals)
    for arr in (bmesh.node_ids, bmesh.edges, bmesh.edge_lengths,
                bmesh.tangents, bmesh.normals):
        arr.setflags(write=False)
    return bmesh, TraceMap(node_ids)


def tangential_derivative_stencil(bmesh: BoundaryMesh) -> np.ndarray:
    """Per-edge arclength derivatives of the two boundary hat functions.

    Row e holds (-1/L_e, +1/L_e): the constant slope of the hat supported at
    the edge tail and head.  This is the whole tangential-gradient calculus of
    a polyline: a P1 surface field u has d(u)/ds = (u_head - u_tail)/L_e on
    edge e.
    """
    if np.any(bmesh.edge_lengths <= 0.0):
        raise MeshError("degenerate zero-length boundary edge")
    inv = 1.0 / bmesh.edge_lengths
    return np.column_stack([-inv, inv])


def square_mesh(side: float = 1.0, refinement: int = 0) -> Mesh2D:
    """Uniformly refined two-triangle split of the square (0, side)^2."""
    if side <= 0.0:
        raise ValueError("square side must be positive")
    _check_refinement(refinement)
    s = float(side)
    nodes = np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    for _ in range(refinement):
        nodes, triangles = _quadrisect(nodes, triangles, snap=None)
    return _make_mesh(nodes, triangles)


def disk_mesh(radius: float = 1.0, n_segments: int = 16, refinement: int = 0) -> Mesh2D:
    """Structured fan triangulation of a disk, refined toward the circle.

    The base mesh joins the center to a regular n_segments-gon inscribed in
    the circle of the given radius.  Each refinement level quadrisects all
    triangles and projects the new boundary-edge midpoints onto the circle,
    so every boundary node sits exactly on the circle and the polygonal
    boundary has n_segments * 2**refinement edges.
    """
    if radius <= 0.0:
        raise ValueError("disk radius must be positive")
    if n_segments < 8:
        raise ValueError("disk needs at least 8 segments")
    _check_refinement(refinement)
    angles = 2.0 * math.pi * np.arange(n_segments) / n_segments
    nodes = np.vstack([[0.0, 0.0],
                       np.column_stack([radius * np.cos(angles),
                                        radius * np.sin(angles)])])
    ring = 1 + np.arange(n_segments)
    triangles = np.column_stack([np.zeros(n_segments, dtype=np.int64),
                                 ring, np.roll(ring, -1)])

    def snap(p: np.ndarray) -> np.ndarray:
        return p * (radius / np.hypot(p[:, 0], p[:, 1]))[:, None]

    for _ in range(refinement):
        nodes, triangles = _quadrisect(nodes, triangles, snap=snap)
    return _make_mesh(nodes, triangles)


def refine_mesh(mesh: Mesh2D) -> Mesh2D:
    """One level of plain quadrisection; preserves area and perimeter exactly."""
    nodes, triangles = _quadrisect(mesh.nodes, mesh.triangles, snap=None)
    return _make_mesh(nodes, triangles)


def _check_refinement(refinement: int) -> None:
    if not isinstance(refinement, (int, np.integer)) or refinement < 0:
        raise ValueError("refinement must be a nonnegative integer")


def _quadrisect(nodes, triangles, snap):
    """Split each triangle into four via edge midpoints.

    `snap`, when given, is applied to midpoints of boundary edges only
    (interior midpoints stay put so the bulk mesh remains valid).
    """
    edge_count: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (min(i, j), max(i, j))
            edge_count[key] = edge_count.get(key, 0) + 1

    edge_keys = sorted(edge_count)
    midpoint_id = {key: len(nodes) + k for k, key in enumerate(edge_keys)}
    mids = 0.5 * (nodes[[k[0] for k in edge_keys]] + nodes[[k[1] for k in edge_keys]])
    if snap is not None:
        on_boundary = np.array([edge_count[k] == 1 for k in edge_keys])
        if on_boundary.any():
            mids[on_boundary] = snap(mids[on_boundary])

    new_nodes = np.vstack([nodes, mids])
    new_tris = np.empty((4 * len(triangles), 3), dtype=np.int64)
    for t, (a, b, c) in enumerate(triangles):
        mab = midpoint_id[(min(a, b), max(a, b))]
        mbc = midpoint_id[(min(b, c), max(b, c))]
        mca = midpoint_id[(min(c, a), max(c, a))]
        new_tris[4 * t:4 * t + 4] = [[a, mab, mca],
                                     [mab, b, mbc],
                                     [mca, mbc, c],
                                     [mab, mbc, mca]]
    return new_nodes, new_tris


# --- plain-text mesh format -------------------------------------------------
#
# header "nodes <N> triangles <T>", then N lines "x y", then T lines "i j k"
# (0-based).  Coordinates are written with 17 significant digits so that
# write -> read -> write round-trips bit-exactly.

def mesh_to_text(mesh: Mesh2D) -> str:
    lines = [f"nodes {mesh.n_nodes} triangles {len(mesh.triangles)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def text_to_mesh(text: str) -> Mesh2D:
    rows = [ln for ln in (s.strip() for s in text.splitlines()) if ln]
    if not rows:
        raise MeshError("empty mesh file")
    head = rows[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise MeshError(f"bad mesh header: {rows[0]!r}")
    try:
        n, t = int(head[1]), int(head[3])
    except ValueError as exc:
        raise MeshError(f"bad mesh header: {rows[0]!r}") from exc
    if len(rows) != 1 + n + t:
        raise MeshError(f"expected {1 + n + t} lines, found {len(rows)}")
    try:
        nodes = np.array([[float(v) for v in rows[1 + i].split()] for i in range(n)])
        tris = np.array([[int(v) for v in rows[1 + n + i].split()] for i in range(t)],
                        dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"unparseable mesh body: {exc}") from exc
    if nodes.shape != (n, 2) or tris.shape != (t, 3):
        raise MeshError("mesh body has wrong arity")
    return _make_mesh(nodes, tris)


def write_mesh(mesh: Mesh2D, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(mesh_to_text(mesh))


def read_mesh(path) -> Mesh2D:
    with open(path, "r", encoding="ascii") as fh:
        return text_to_mesh(fh.read())
