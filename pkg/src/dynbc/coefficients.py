"""Problem data and the derived constant ledger.

Coefficients are piecewise constant: drift/reaction live per triangle in
the bulk and per boundary edge on the surface, so their sup norms are exact
maxima over pieces and all form integrals are computed exactly for P1
elements.

`derive_constants` evaluates the chain of Young-inequality constants that
control the drift-reaction perturbation: with

    M1 = max(|B|_inf / d, |b|_inf / delta),   M2 = |c|_inf + |ell|_inf,
    M  = |B|_inf + |b|_inf,                   m  = M2,
    alpha_tilde = min(d, delta),

the perturbation form is bounded by alpha * (H1 Gram) + beta * (mass) with
alpha = eps * M1 * (d + delta) < 1 and beta = (d + delta)/(4 eps) * M1 + M2,
and the full spatial form plus omega * (mass) is coercive with constant
lambda = alpha_tilde / 2 once omega >= alpha_tilde/2 + M/(4 eps_c) + m.
The two Young parameters play different roles and are tracked separately
(eps for the boundedness split, eps_c for the coercivity split).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundaryMesh, Mesh2D


@dataclass(frozen=True)
class CoefficientSet:
    """Diffusion, drift and reaction data, piecewise constant per cell/edge.

    d, delta : positive bulk / surface diffusion coefficients
    B : (n_tri, 2) bulk drift vector per triangle
    b : (n_bedge, 2) surface drift vector per boundary edge (only the
        tangential component enters any form)
    c : (n_tri,) bulk reaction
    ell : (n_bedge,) surface reaction
    """

    d: float
    delta: float
    B: np.ndarray
    b: np.ndarray
    c: np.ndarray
    ell: np.ndarray

    def __post_init__(self):
        if self.d <= 0.0 or self.delta <= 0.0:
            raise ValueError("diffusion coefficients d and delta must be positive")
        for name in ("B", "b", "c", "ell"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"coefficient {name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.B.ndim != 2 or self.B.shape[1] != 2:
            raise ValueError("B must be an (n_tri, 2) array")
        if self.b.ndim != 2 or self.b.shape[1] != 2:
            raise ValueError("b must be an (n_bedge, 2) array")

    @classmethod
    def constant(cls, mesh: Mesh2D, bmesh: BoundaryMesh, d: float = 1.0,
                 delta: float = 1.0, B=(0.0, 0.0), b=(0.0, 0.0),
                 c: float = 0.0, ell: float = 0.0) -> "CoefficientSet":
        """Broadcast scalar/vector data over all cells and edges."""
        n_tri = len(mesh.triangles)
        n_edge = len(bmesh.edges)
        return cls(d=float(d), delta=float(delta),
                   B=np.tile(np.asarray(B, dtype=float), (n_tri, 1)),
                   b=np.tile(np.asarray(b, dtype=float), (n_edge, 1)),
                   c=np.full(n_tri, float(c)),
                   ell=np.full(n_edge, float(ell)))

    # sup norms over pieces; vector fields use the Euclidean length per piece
    @property
    def B_sup(self) -> float:
        return float(np.hypot(self.B[:, 0], self.B[:, 1]).max(initial=0.0))

    @property
    def b_sup(self) -> float:
        return float(np.hypot(self.b[:, 0], self.b[:, 1]).max(initial=0.0))

    @property
    def c_sup(self) -> float:
        return float(np.abs(self.c).max(initial=0.0))

    @property
    def ell_sup(self) -> float:
        return float(np.abs(self.ell).max(initial=0.0))


@dataclass(frozen=True)
class ConstantLedger:
    """Derived constants of the form inequalities.

    alpha/beta bound the drift-reaction form against the H1 Gram and the
    mass; (omega, lam) shift the full spatial form into coercivity with
    lam = alpha_tilde / 2.  eps_c is inf when there is no drift (M = 0).
    """

    M1: float
    M2: float
    M: float
    m: float
    alpha_tilde: float
    epsilon: float
    alpha: float
    beta: float
    eps_c: float
    lam: float
    omega: float


def derive_constants(coeffs: CoefficientSet, epsilon: float | None = None) -> ConstantLedger:
    """Build the constant ledger for a coefficient set.

    Parameters
    ----------
    coeffs : CoefficientSet
    epsilon : float, optional
        Young parameter of the boundedness split.  Default (None) picks
        eps = min(1, 1/(2 M1 (d + delta))) so that alpha <= 1/2; when the
        drift constants vanish the parameter is free and eps = 1.

    Raises
    ------
    ValueError
        If an explicit epsilon leads to alpha >= 1 (the split no longer
        proves form boundedness) or is not positive.
    """
    d, delta = coeffs.d, coeffs.delta
    M1 = max(coeffs.B_sup / d, coeffs.b_sup / delta)
    M2 = coeffs.c_sup + coeffs.ell_sup
    M = coeffs.B_sup + coeffs.b_sup
    m = M2
    alpha_tilde = min(d, delta)

    if epsilon is None:
        epsilon = min(1.0, 1.0 / (2.0 * M1 * (d + delta))) if M1 > 0.0 else 1.0
    elif epsilon <= 0.0:
        raise ValueError("epsilon must be positive")

    alpha = epsilon * M1 * (d + delta)
    if alpha >= 1.0:
        raise ValueError(f"epsilon={epsilon} gives alpha={alpha} >= 1")
    beta = (d + delta) / (4.0 * epsilon) * M1 + M2

    if M > 0.0:
        eps_c = alpha_tilde / (2.0 * M)
        omega = alpha_tilde / 2.0 + M / (4.0 * eps_c) + m
    else:
        eps_c = math.inf
        omega = alpha_tilde / 2.0 + m

    return ConstantLedger(M1=M1, M2=M2, M=M, m=m, alpha_tilde=alpha_tilde,
                          epsilon=float(epsilon), alpha=alpha, beta=beta,
                          eps_c=eps_c, lam=alpha_tilde / 2.0, omega=omega)


@dataclass(frozen=True)
class SourceTerm:
    """Bulk/surface source fields sampled at time-grid nodes.

    f : (n_times, n_nodes) nodal bulk samples
    g : (n_times, n_surface_nodes) nodal surface samples
    """

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        f = np.ascontiguousarray(np.asarray(self.f, dtype=float))
        g = np.ascontiguousarray(np.asarray(self.g, dtype=float))
        if f.ndim != 2 or g.ndim != 2:
            raise ValueError("source samples must be 2D (time, dof) arrays")
        if f.shape[0] != g.shape[0]:
            raise ValueError("bulk and surface sample counts disagree")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    @property
    def n_times(self) -> int:
        return self.f.shape[0]
