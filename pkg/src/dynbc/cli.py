"""Configuration, command dispatch and file emission.

Configs are flat "key = value" documents ('#' starts a comment).  Parsing is
strict: unknown keys, duplicate keys, malformed values and out-of-range
parameters are all fatal, with the offending line number - silent typos are
how numerical experiments go wrong.

Subcommands: solve-forward, solve-adjoint (--mode weak|transpose), spectral,
verify, converge; global flags --config, --out, --seed.  All randomness in
any mode derives from the single seed, and identical (config, seed) pairs
produce byte-identical CSV output.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import verification
from .adjoint import solve_backward_transpose, solve_backward_weak
from .assembly import (AssemblyError, DualSource, LoadAssembler, RieszSolver,
                       assemble_operators, build_dofmap)
from .coefficients import CoefficientSet, derive_constants
from .expressions import ExprError, Expression, parse_expression
from .forward import SolveError, TimeGrid, Trajectory, solve_forward
from .geometry import MeshError, disk_mesh, extract_boundary, read_mesh, square_mesh
from .spectral import (compute_eigenbasis, energy_certificate,
                       integrate_reduced, project, reduce_system)


class ConfigError(ValueError):
    """Config parse or validation failure."""


KNOWN_KEYS = {
    "shape", "side", "radius", "n_segments", "refinement", "mesh_file",
    "d", "delta", "B", "b", "c", "ell",
    "T", "n_steps", "theta",
    "mode", "adjoint_mode", "seed", "out_dir", "output_format",
    "y0", "f", "g", "psi_T", "f0", "g0", "F1", "G1",
    "n_sweep",
    "tol.duality", "tol.form_margin", "tol.conservation",
    "tol.spectral_match", "tol.basis",
    "verify.n_samples", "verify.n_trials",
}

MODES = ("forward", "adjoint", "spectral", "verify", "converge")


@dataclass
class RunConfig:
    shape: str = "disk"
    side: float = 1.0
    radius: float = 1.0
    n_segments: int = 32          # default disk: ~300 coupled dofs at refinement 2
    refinement: int = 2
    mesh_file: str | None = None

    d: float = 1.0
    delta: float = 1.0
    B: object = (0.0, 0.0)        # 2-vector or "expr:" pair
    b: object = (0.0, 0.0)
    c: object = 0.0               # scalar or "expr:" string
    ell: object = 0.0

    T: float = 1.0
    n_steps: int = 32
    theta: float = 1.0

    mode: str = "forward"
    adjoint_mode: str = "weak"
    seed: int = 7041
    out_dir: str = "out"
    output_format: str = "csv"

    y0: Expression | None = None
    f: Expression | None = None
    g: Expression | None = None
    psi_T: Expression | None = None
    f0: Expression | None = None
    g0: Expression | None = None
    F1: tuple[float, float] | None = None
    G1: tuple[float, float] | None = None

    n_sweep: tuple[int, ...] | None = None
    tolerances: dict = dc_field(default_factory=dict)
    verify_n_samples: int = 1000
    verify_n_trials: int = 20

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))


def _parse_scalar(token: str):
    token = token.strip()
    if token.startswith("[") and token.endswith("]"):
        items = [s.strip() for s in token[1:-1].split(",") if s.strip()]
        return [_parse_scalar(s) for s in items]
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _entries(text: str) -> dict[str, tuple[object, int]]:
    entries: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        entries[key] = (val, lineno)
    return entries


def _fail(key: str, lineno: int, why: str):
    raise ConfigError(f"line {lineno}: key {key!r}: {why}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document (strict mode)."""
    entries = _entries(text)
    cfg = RunConfig()

    def pop(key):
        return entries.pop(key, None)

    def number(key, current, check=None):
        item = pop(key)
        if item is None:
            return current
        raw, lineno = item
        val = _parse_scalar(raw)
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            _fail(key, lineno, f"expected a number, got {raw!r}")
        if check is not None:
            check(key, lineno, val)
        return float(val)

    def integer(key, current, minimum=None):
        item = pop(key)
        if item is None:
            return current
        raw, lineno = item
        val = _parse_scalar(raw)
        if not isinstance(val, int):
            _fail(key, lineno, f"expected an integer, got {raw!r}")
        if minimum is not None and val < minimum:
            _fail(key, lineno, f"must be >= {minimum}")
        return val

    def choice(key, current, allowed):
        item = pop(key)
        if item is None:
            return current
        raw, lineno = item
        if raw not in allowed:
            _fail(key, lineno, f"must be one of {sorted(allowed)}")
        return raw

    def expression(key):
        item = pop(key)
        if item is None:
            return None
        raw, lineno = item
        try:
            return parse_expression(raw)
        except ExprError as exc:
            _fail(key, lineno, f"bad expression: {exc}")

    def vector2(key, current, allow_expr=False):
        item = pop(key)
        if item is None:
            return current
        raw, lineno = item
        if allow_expr and raw.startswith("expr:"):
            return _coeff_expr_pair(key, lineno, raw)
        val = _parse_scalar(raw)
        if (not isinstance(val, list) or len(val) != 2
                or not all(isinstance(v, (int, float)) for v in val)):
            _fail(key, lineno, f"expected [a, b], got {raw!r}")
        return (float(val[0]), float(val[1]))

    def _coeff_expr_pair(key, lineno, raw):
        body = raw[len("expr:"):].strip()
        if not (body.startswith("[") and body.endswith("]")):
            _fail(key, lineno, "vector expression must be expr:[e1, e2]")
        parts = body[1:-1].split(",")
        if len(parts) != 2:
            _fail(key, lineno, "vector expression must have two components")
        try:
            return ("expr", parse_expression(parts[0]), parse_expression(parts[1]))
        except ExprError as exc:
            _fail(key, lineno, f"bad expression: {exc}")

    def coefficient(key, current):
        item = pop(key)
        if item is None:
            return current
        raw, lineno = item
        if raw.startswith("expr:"):
            try:
                return ("expr", parse_expression(raw[len("expr:"):]))
            except ExprError as exc:
                _fail(key, lineno, f"bad expression: {exc}")
        val = _parse_scalar(raw)
        if not isinstance(val, (int, float)):
            _fail(key, lineno, f"expected a number or expr:, got {raw!r}")
        return float(val)

    cfg.shape = choice("shape", cfg.shape, {"disk", "square"})
    cfg.side = number("side", cfg.side,
                      lambda k, l, v: v > 0 or _fail(k, l, "must be positive"))
    cfg.radius = number("radius", cfg.radius,
                        lambda k, l, v: v > 0 or _fail(k, l, "must be positive"))
    cfg.n_segments = integer("n_segments", cfg.n_segments, minimum=8)
    cfg.refinement = integer("refinement", cfg.refinement, minimum=0)
    item = pop("mesh_file")
    if item is not None:
        cfg.mesh_file = item[0]

    cfg.d = number("d", cfg.d, lambda k, l, v: v > 0 or _fail(k, l, "must be positive"))
    cfg.delta = number("delta", cfg.delta,
                       lambda k, l, v: v > 0 or _fail(k, l, "must be positive"))
    cfg.B = vector2("B", cfg.B, allow_expr=True)
    cfg.b = vector2("b", cfg.b, allow_expr=True)
    cfg.c = coefficient("c", cfg.c)
    cfg.ell = coefficient("ell", cfg.ell)

    cfg.T = number("T", cfg.T, lambda k, l, v: v > 0 or _fail(k, l, "must be positive"))
    cfg.n_steps = integer("n_steps", cfg.n_steps, minimum=1)
    item = pop("theta")
    if item is not None:
        raw, lineno = item
        val = _parse_scalar(raw)
        if not isinstance(val, (int, float)) or not 0.5 <= val <= 1.0:
            _fail("theta", lineno, "must lie in [1/2, 1]")
        cfg.theta = float(val)

    cfg.mode = choice("mode", cfg.mode, set(MODES))
    cfg.adjoint_mode = choice("adjoint_mode", cfg.adjoint_mode, {"weak", "transpose"})
    cfg.seed = integer("seed", cfg.seed, minimum=0)
    item = pop("out_dir")
    if item is not None:
        cfg.out_dir = item[0]
    cfg.output_format = choice("output_format", cfg.output_format,
                               {"csv", "vtk", "both"})

    for name in ("y0", "f", "g", "psi_T", "f0", "g0"):
        val = expression(name)
        if val is not None:
            setattr(cfg, name, val)
    cfg.F1 = vector2("F1", cfg.F1)
    cfg.G1 = vector2("G1", cfg.G1)

    item = pop("n_sweep")
    if item is not None:
        raw, lineno = item
        val = _parse_scalar(raw)
        if not isinstance(val, list) or not val or \
                not all(isinstance(v, int) and v >= 1 for v in val):
            _fail("n_sweep", lineno, "expected a list of positive integers")
        cfg.n_sweep = tuple(val)

    cfg.verify_n_samples = integer("verify.n_samples", cfg.verify_n_samples, minimum=1)
    cfg.verify_n_trials = integer("verify.n_trials", cfg.verify_n_trials, minimum=1)
    for key in [k for k in list(entries) if k.startswith("tol.")]:
        raw, lineno = entries.pop(key)
        val = _parse_scalar(raw)
        if not isinstance(val, (int, float)) or val <= 0:
            _fail(key, lineno, "tolerance must be a positive number")
        cfg.tolerances[key[len("tol."):]] = float(val)

    if entries:
        key, (_, lineno) = next(iter(entries.items()))
        raise ConfigError(f"line {lineno}: key {key!r} not consumed")
    return cfg


def read_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# --- problem construction ------------------------------------------------------

def build_geometry(cfg: RunConfig):
    if cfg.mesh_file is not None:
        mesh = read_mesh(cfg.mesh_file)
    elif cfg.shape == "disk":
        mesh = disk_mesh(cfg.radius, cfg.n_segments, cfg.refinement)
    else:
        mesh = square_mesh(cfg.side, cfg.refinement)
    bmesh, tmap = extract_boundary(mesh)
    dofmap = build_dofmap(mesh, bmesh, tmap)
    return mesh, bmesh, dofmap


def _piecewise_scalar(spec, points) -> np.ndarray:
    if isinstance(spec, tuple) and spec and spec[0] == "expr":
        return spec[1](points)
    return np.full(len(points), float(spec))


def _piecewise_vector(spec, points) -> np.ndarray:
    if isinstance(spec, tuple) and spec and spec[0] == "expr":
        return np.column_stack([spec[1](points), spec[2](points)])
    return np.tile(np.asarray(spec, dtype=float), (len(points), 1))


def build_coefficients(cfg: RunConfig, mesh, bmesh) -> CoefficientSet:
    """Coefficient arrays; 'expr:' specs are sampled at cell centroids and
    edge midpoints, yielding piecewise-constant data."""
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    midpoints = 0.5 * (mesh.nodes[bmesh.edges[:, 0]] + mesh.nodes[bmesh.edges[:, 1]])
    return CoefficientSet(
        d=cfg.d, delta=cfg.delta,
        B=_piecewise_vector(cfg.B, centroids),
        b=_piecewise_vector(cfg.b, midpoints),
        c=_piecewise_scalar(cfg.c, centroids),
        ell=_piecewise_scalar(cfg.ell, midpoints),
    )


def _nodal(expr: Expression | None, points: np.ndarray, t: float) -> np.ndarray | None:
    if expr is None:
        return None
    return expr(points, t)


def build_loads(cfg: RunConfig, mesh, bmesh, dofmap, grid: TimeGrid) -> np.ndarray | None:
    if cfg.f is None and cfg.g is None:
        return None
    surface_xy = mesh.nodes[dofmap.node_ids]
    assembler = LoadAssembler(mesh, bmesh, dofmap)
    loads = np.empty((grid.n_steps + 1, dofmap.n_total))
    for k, t in enumerate(grid.times):
        loads[k] = assembler.nodal(f=_nodal(cfg.f, mesh.nodes, t),
                                   g=_nodal(cfg.g, surface_xy, t))
    return loads


def build_dual_loads(cfg: RunConfig, mesh, bmesh, dofmap, grid: TimeGrid) -> np.ndarray | None:
    if cfg.f0 is None and cfg.g0 is None and cfg.F1 is None and cfg.G1 is None:
        return None
    surface_xy = mesh.nodes[dofmap.node_ids]
    F1 = None if cfg.F1 is None else np.tile(cfg.F1, (len(mesh.triangles), 1))
    G1 = None if cfg.G1 is None else np.tile(cfg.G1, (len(bmesh.edges), 1))
    assembler = LoadAssembler(mesh, bmesh, dofmap)
    loads = np.empty((grid.n_steps + 1, dofmap.n_total))
    for k, t in enumerate(grid.times):
        src = DualSource(f0=_nodal(cfg.f0, mesh.nodes, t), F1=F1,
                         g0=_nodal(cfg.g0, surface_xy, t), G1=G1)
        loads[k] = assembler.dual(src)
    return loads


# --- emission -------------------------------------------------------------------

def format_value(v: float) -> str:
    """17-significant-digit decimal; round-trips bit-exactly through float()."""
    if v != v or v in (float("inf"), float("-inf")):
        return repr(v)
    if v == 0.0:
        return "0.0000000000000000"
    if 1e-4 <= abs(v) < 1e17:
        return np.format_float_positional(v, precision=17, unique=False,
                                          fractional=False, trim="k")
    return f"{v:.17g}"


def trajectory_to_csv(traj: Trajectory) -> str:
    lines = ["step,time,dof,value"]
    times = traj.grid.times
    for n in range(len(traj)):
        t_str = format_value(float(times[n]))
        row = traj.states[n]
        lines.extend(f"{n},{t_str},{i},{format_value(float(row[i]))}"
                     for i in range(len(row)))
    return "\n".join(lines) + "\n"


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (times, states) from a trajectory CSV (inverse of the writer)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "step,time,dof,value":
            raise ValueError(f"unexpected trajectory header {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    steps = sorted({int(r[0]) for r in rows})
    dofs = sorted({int(r[2]) for r in rows})
    times = np.empty(len(steps))
    states = np.empty((len(steps), len(dofs)))
    for r in rows:
        n, i = int(r[0]), int(r[2])
        times[n] = float(r[1])
        states[n, i] = float(r[3])
    return times, states


def trajectory_to_vtk(traj: Trajectory, mesh, step: int, title: str = "coupled field") -> str:
    """Legacy ASCII unstructured-grid snapshot with point scalars u and
    u_gamma (the surface trace on boundary points, zero elsewhere)."""
    values = traj.states[step]
    surface = np.zeros_like(values)
    surface[traj.dofmap.node_ids] = values[traj.dofmap.node_ids]
    tris = mesh.triangles
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    out += [f"{format_value(float(x))} {format_value(float(y))} 0" for x, y in mesh.nodes]
    out.append(f"CELLS {len(tris)} {4 * len(tris)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tris]
    out.append(f"CELL_TYPES {len(tris)}")
    out += ["5"] * len(tris)
    out.append(f"POINT_DATA {mesh.n_nodes}")
    out.append("SCALARS u double 1")
    out.append("LOOKUP_TABLE default")
    out += [format_value(float(v)) for v in values]
    out.append("SCALARS u_gamma double 1")
    out.append("LOOKUP_TABLE default")
    out += [format_value(float(v)) for v in surface]
    return "\n".join(out) + "\n"


def emit_trajectory(traj: Trajectory, out_dir, fmt: str = "csv", mesh=None,
                    basename: str = "trajectory") -> list[Path]:
    """Write trajectory files; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        if fmt in ("csv", "both"):
            path = out / f"{basename}.csv"
            path.write_text(trajectory_to_csv(traj), encoding="ascii")
            written.append(path)
        if fmt in ("vtk", "both"):
            if mesh is None:
                raise ValueError("vtk output needs the mesh")
            for n in range(len(traj)):
                path = out / f"{basename}_{n:04d}.vtk"
                path.write_text(trajectory_to_vtk(traj, mesh, n), encoding="ascii")
                written.append(path)
    except OSError as exc:
        raise RuntimeError(f"failed writing {out}: {exc}") from exc
    return written


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([header] + rows) + "\n", encoding="ascii")


# --- mode runners -----------------------------------------------------------------

def _run_forward(cfg: RunConfig, out: Path) -> int:
    mesh, bmesh, dofmap = build_geometry(cfg)
    coeffs = build_coefficients(cfg, mesh, bmesh)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(cfg.T, cfg.n_steps)
    loads = build_loads(cfg, mesh, bmesh, dofmap, grid)
    y0 = np.zeros(dofmap.n_total) if cfg.y0 is None else cfg.y0(mesh.nodes, 0.0)
    traj = solve_forward(ops.mass, ops.diffusion, ops.drift, loads, y0, grid,
                         theta=cfg.theta, dofmap=dofmap,
                         meta={"coefficients": coeffs})
    emit_trajectory(traj, out, cfg.output_format, mesh=mesh)
    print(f"forward solve: {dofmap.n_total} dofs, {grid.n_steps} steps, "
          f"theta={cfg.theta}, wrote {out}")
    return 0


def _run_adjoint(cfg: RunConfig, out: Path) -> int:
    mesh, bmesh, dofmap = build_geometry(cfg)
    coeffs = build_coefficients(cfg, mesh, bmesh)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    grid = TimeGrid(cfg.T, cfg.n_steps)
    loads = build_dual_loads(cfg, mesh, bmesh, dofmap, grid)
    psi_T = np.zeros(dofmap.n_total) if cfg.psi_T is None else cfg.psi_T(mesh.nodes, cfg.T)
    if cfg.adjoint_mode == "transpose":
        traj = solve_backward_transpose(ops.mass, ops.diffusion, ops.drift,
                                        loads, psi_T, grid, dofmap=dofmap)
    else:
        traj = solve_backward_weak(ops.mass, ops.diffusion, ops.drift, loads,
                                   psi_T, grid, theta=cfg.theta, dofmap=dofmap)
    emit_trajectory(traj, out, cfg.output_format, mesh=mesh, basename="adjoint")
    print(f"adjoint solve ({cfg.adjoint_mode}): {dofmap.n_total} dofs, "
          f"{grid.n_steps} steps, wrote {out}")
    return 0


def _run_spectral(cfg: RunConfig, out: Path) -> int:
    mesh, bmesh, dofmap = build_geometry(cfg)
    coeffs = build_coefficients(cfg, mesh, bmesh)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    ledger = derive_constants(coeffs)
    grid = TimeGrid(cfg.T, cfg.n_steps)
    loads = build_loads(cfg, mesh, bmesh, dofmap, grid)
    u_T = np.ones(dofmap.n_total) if cfg.y0 is None else cfg.y0(mesh.nodes, 0.0)

    dim = dofmap.n_total
    sweep = cfg.n_sweep or tuple(n for n in (1, 2, 4, 8, 16, 32) if n <= dim)
    sweep = tuple(sorted(min(n, dim) for n in sweep))
    basis_full = compute_eigenbasis(ops.h1_gram, ops.mass, max(sweep))
    riesz = RieszSolver(ops.h1_gram)

    rows = []
    any_violated = False
    for n in sweep:
        basis = type(basis_full)(basis_full.eigenvalues[:n], basis_full.modes[:, :n])
        E, f_red = reduce_system(basis, ops.spatial, loads)
        d0 = project(basis, ops.mass, u_T)
        reduced = integrate_reduced(E, f_red, d0, grid, theta=cfg.theta)
        cert = energy_certificate(basis, reduced, E, loads, u_T, ledger, riesz, ops.mass)
        any_violated = any_violated or cert.violated
        rows.append(",".join([
            str(n),
            format_value(cert.max_M_norm_sq), format_value(cert.l2_h1_sq),
            format_value(cert.l2_hm1_sq), format_value(cert.data_norm_sq),
            format_value(cert.ratio), format_value(cert.gronwall_bound),
            "true" if cert.violated else "false",
        ]))
    _write_csv(out / "spectral_certificates.csv",
               "n,max_M_norm_sq,l2_h1_sq,l2_hm1_sq,data_norm_sq,ratio,"
               "gronwall_bound,violated", rows)
    print(f"spectral certificates for n in {sweep}: "
          f"{'VIOLATIONS' if any_violated else 'no violations'}, wrote {out}")
    return 1 if any_violated else 0


def _run_verify(cfg: RunConfig, out: Path) -> int:
    mesh, bmesh, dofmap = build_geometry(cfg)
    coeffs = build_coefficients(cfg, mesh, bmesh)
    ops = assemble_operators(mesh, bmesh, dofmap, coeffs)
    ledger = derive_constants(coeffs)
    grid = TimeGrid(cfg.T, cfg.n_steps)
    checks: list[tuple[str, float, float, bool]] = []

    form = verification.run_form_checks(ops, ledger, cfg.verify_n_samples,
                                        cfg.seed, tol=cfg.tol("form_margin", 1e-10))
    checks.append(("form-boundedness", float(form.bound_margins.min()),
                   -form.tol, form.bound_margins.min() >= -form.tol))
    checks.append(("coercivity", float(form.coercivity_margins.min()),
                   -form.tol, form.coercivity_margins.min() >= -form.tol))

    duality = verification.run_duality_suite(ops, dofmap, grid,
                                             cfg.verify_n_trials, cfg.seed + 1,
                                             tol=cfg.tol("duality", 1e-10))
    checks.append(("duality-identity", duality.max_relative, duality.tol,
                   duality.passed))

    conservative = CoefficientSet.constant(mesh, bmesh, d=cfg.d, delta=cfg.delta)
    cops = assemble_operators(mesh, bmesh, dofmap, conservative)
    traj = solve_forward(cops.mass, cops.diffusion, cops.drift, None,
                         np.ones(dofmap.n_total), grid, theta=cfg.theta,
                         dofmap=dofmap)
    masses = np.array([float(np.ones(dofmap.n_total) @ cops.mass.dot(s))
                       for s in traj.states])
    drift_rel = float(np.abs(masses - masses[0]).max() / abs(masses[0]))
    tol_cons = cfg.tol("conservation", 1e-12)
    checks.append(("conservation", drift_rel, tol_cons, drift_rel <= tol_cons))

    tol_basis = cfg.tol("basis", 1e-10)
    basis = compute_eigenbasis(ops.h1_gram, ops.mass, dofmap.n_total)
    gram = basis.modes.T @ ops.mass.matrix.dot(basis.modes)
    ortho_gap = float(np.abs(gram - np.eye(dofmap.n_total)).max())
    checks.append(("basis-orthonormality", ortho_gap, tol_basis,
                   ortho_gap <= tol_basis))
    lam1_gap = abs(float(basis.eigenvalues[0]) - 1.0)
    checks.append(("ground-eigenvalue", lam1_gap, tol_basis, lam1_gap <= tol_basis))

    y0 = np.ones(dofmap.n_total) if cfg.y0 is None else cfg.y0(mesh.nodes, 0.0)
    loads = build_loads(cfg, mesh, bmesh, dofmap, grid)
    errs = verification.spectral_vs_fem(ops, dofmap, grid, y0, loads,
                                        (dofmap.n_total,), theta=cfg.theta)
    tol_match = cfg.tol("spectral_match", 1e-8)
    checks.append(("spectral-vs-fem", errs[-1][1], tol_match,
                   errs[-1][1] <= tol_match))

    n_cert = min(16, dofmap.n_total)
    cert_basis = compute_eigenbasis(ops.h1_gram, ops.mass, n_cert)
    E, f_red = reduce_system(cert_basis, ops.spatial, loads)
    reduced = integrate_reduced(E, f_red, project(cert_basis, ops.mass, y0),
                                grid, theta=cfg.theta)
    cert = energy_certificate(cert_basis, reduced, E, loads, y0, ledger,
                              RieszSolver(ops.h1_gram), ops.mass)
    checks.append(("gronwall-certificate", max(0.0, -cert.worst_margin), 0.0,
                   not cert.violated))

    rows = []
    all_passed = True
    for name, value, threshold, ok in checks:
        all_passed &= ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: value={value:.3e} "
              f"threshold={threshold:.3e}")
        rows.append(f"{name},{format_value(value)},{format_value(threshold)},"
                    f"{'pass' if ok else 'fail'}")
    _write_csv(out / "verify_report.csv", "check,value,threshold,status", rows)
    print(f"verification {'PASSED' if all_passed else 'FAILED'}, wrote {out}")
    return 0 if all_passed else 1


def _run_converge(cfg: RunConfig, out: Path) -> int:
    tables = verification.convergence_study()
    rows = []
    for name, table in tables.items():
        rates = table.rates
        for k in range(len(table.errors)):
            rate = "" if k == 0 else format_value(float(rates[k - 1]))
            rows.append(f"{name},{table.axis},{format_value(float(table.parameters[k]))},"
                        f"{format_value(float(table.errors[k]))},{rate}")
        print(f"{name}: errors={np.array2string(table.errors, precision=3)} "
              f"rates={np.array2string(rates, precision=2)}")
    _write_csv(out / "rates.csv", "study,axis,parameter,error,rate", rows)
    print(f"wrote {out / 'rates.csv'}")
    return 0


def dispatch(cfg: RunConfig) -> int:
    """Run the configured mode; returns the process exit status."""
    out = Path(cfg.out_dir)
    runner = {
        "forward": _run_forward,
        "adjoint": _run_adjoint,
        "spectral": _run_spectral,
        "verify": _run_verify,
        "converge": _run_converge,
    }[cfg.mode]
    return runner(cfg, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dynbc",
        description="Coupled bulk-surface parabolic solver with dynamic "
                    "boundary conditions")
    parser.add_argument("--config", type=str, default=None,
                        help="path to a key = value config document")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-forward", help="march the forward system")
    adj = sub.add_parser("solve-adjoint", help="solve the backward problem")
    adj.add_argument("--mode", choices=("weak", "transpose"), default=None)
    sub.add_parser("spectral", help="eigenbasis reduction and energy certificates")
    sub.add_parser("verify", help="run the invariant battery")
    sub.add_parser("converge", help="manufactured-solution convergence study")
    args = parser.parse_args(argv)

    try:
        cfg = read_config(args.config) if args.config else RunConfig()
        cfg.mode = {"solve-forward": "forward", "solve-adjoint": "adjoint"}.get(
            args.command, args.command)
        if args.command == "solve-adjoint" and args.mode is not None:
            cfg.adjoint_mode = args.mode
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        return dispatch(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, AssemblyError, ExprError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolveError as exc:
        step = f" (step {exc.step})" if exc.step is not None else ""
        print(f"solver failure{step}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
