"""P1 finite-element machinery: nodal fields, quadrature, norms, DOF maps.

All integrals use quadrature rules stated in barycentric coordinates on the
reference triangle with weights summing to one, so an element integral is
`area * sum_q w_q integrand(x_q)`. The default rule (edge midpoints) is
exact for quadratics, hence exact for products of P1 functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SCALAR, TriMesh


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points (k, 3) and weights (k,) summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-14:
            raise ValueError("quadrature weights must be positive and sum to 1")


# Edge-midpoint rule: exact up to degree 2, the cheapest rule exact for
# products of P1 functions.
TRI_MIDPOINT = QuadratureRule(
    points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.array([1.0, 1.0, 1.0]) / 3.0,
    degree=2,
)


@dataclass
class NodalField:
    """Finite-element function: free-DOF vector plus Dirichlet completion.

    `free_values` has length mesh.n_free; constrained slots take the value
    `dirichlet_value` (a scalar, zero in every problem here).
    """

    mesh: TriMesh
    free_values: np.ndarray
    dirichlet_value: float = 0.0

    def __post_init__(self):
        self.free_values = np.asarray(self.free_values, dtype=float)
        if self.free_values.shape != (self.mesh.n_free,):
            raise ValueError(
                f"free_values has shape {self.free_values.shape}, "
                f"expected ({self.mesh.n_free},)"
            )

    def full(self) -> np.ndarray:
        return scatter(self.mesh, self.free_values, self.dirichlet_value)


def zero_field(mesh: TriMesh) -> NodalField:
    return NodalField(mesh, np.zeros(mesh.n_free))


def scatter(mesh: TriMesh, free_values: np.ndarray, dirichlet_value: float = 0.0):
    """Free-DOF vector -> full nodal array with Dirichlet slots filled in."""
    free_values = np.asarray(free_values, dtype=float)
    if free_values.shape[-1] != mesh.n_free:
        raise ValueError(f"expected {mesh.n_free} free values, got {free_values.shape[-1]}")
    full = np.full(free_values.shape[:-1] + mesh.full_shape(), float(dirichlet_value))
    full.reshape(free_values.shape[:-1] + (-1,))[..., mesh.free_flat] = free_values
    return full


def gather(mesh: TriMesh, full_values: np.ndarray) -> np.ndarray:
    """Full nodal array -> free-DOF vector (inverse of scatter on free slots)."""
    full_values = np.asarray(full_values, dtype=float)
    if full_values.shape[-len(mesh.full_shape()):] != mesh.full_shape():
        raise ValueError(
            f"expected trailing shape {mesh.full_shape()}, got {full_values.shape}"
        )
    lead = full_values.shape[: full_values.ndim - len(mesh.full_shape())]
    return full_values.reshape(lead + (-1,))[..., mesh.free_flat]


def eval_p1(field: NodalField, t: int, bary) -> np.ndarray | float:
    """Evaluate the field on triangle `t` at barycentric coordinates `bary`."""
    bary = np.asarray(bary, dtype=float)
    if bary.shape != (3,) or abs(bary.sum() - 1.0) > 1e-12:
        raise ValueError("barycentric coordinates must be 3 values summing to 1")
    vertex_vals = field.full()[field.mesh.triangles[t]]
    out = bary @ vertex_vals
    return float(out) if np.ndim(out) == 0 else out


def quad_points(mesh: TriMesh, rule: QuadratureRule = TRI_MIDPOINT) -> np.ndarray:
    """Physical coordinates of the rule's points on every triangle, (n_tri, k, 2)."""
    corners = mesh.nodes[mesh.triangles]  # (n_tri, 3, 2)
    return np.einsum("qt,etd->eqd", rule.points, corners)


def values_at_quad(mesh: TriMesh, full_values: np.ndarray,
                   rule: QuadratureRule = TRI_MIDPOINT) -> np.ndarray:
    """P1 interpolation of nodal values at the rule's points.

    Supports leading batch axes; returns (..., n_tri, k) for scalar values
    or (..., n_tri, k, 2) for vector ones.
    """
    if mesh.space == SCALAR:
        tri_vals = full_values[..., mesh.triangles]
        return np.einsum("...et,qt->...eq", tri_vals, rule.points)
    tri_vals = full_values[..., mesh.triangles, :]
    return np.einsum("...etc,qt->...eqc", tri_vals, rule.points)


def gradients(mesh: TriMesh, full_values: np.ndarray) -> np.ndarray:
    """Constant element gradients: (..., n_tri, 2) scalar, (..., n_tri, 2, 2) vector.

    For the vector space, entry [c, d] is the derivative of component c in
    direction d.
    """
    if mesh.space == SCALAR:
        tri_vals = full_values[..., mesh.triangles]
        return np.einsum("...et,etd->...ed", tri_vals, mesh.grad_basis)
    tri_vals = full_values[..., mesh.triangles, :]
    return np.einsum("...etc,etd->...ecd", tri_vals, mesh.grad_basis)


def l2_norm(field: NodalField) -> float:
    """L2(Omega) norm, exact for P1 via the degree-2 midpoint rule."""
    vals = values_at_quad(field.mesh, field.full())
    sq = vals**2 if field.mesh.space == SCALAR else (vals**2).sum(axis=-1)
    return float(np.sqrt(np.einsum("e,eq,q->", field.mesh.areas, sq, TRI_MIDPOINT.weights)))


def h1_seminorm(field: NodalField) -> float:
    """H1 seminorm |v| = ||grad v||_L2; gradients are constant per element."""
    g = gradients(field.mesh, field.full())
    sq = (g**2).sum(axis=tuple(range(1, g.ndim)))
    return float(np.sqrt(field.mesh.areas @ sq))


def h1_norm(field: NodalField) -> float:
    """Full H1 norm sqrt(L2^2 + seminorm^2)."""
    return float(np.hypot(l2_norm(field), h1_seminorm(field)))


def locate_point(mesh: TriMesh, x: float, y: float):
    """Triangle index and barycentric coordinates containing (x, y).

    Scans all triangles and returns the first hit (deterministic); raises
    ValueError when the point lies outside the mesh.
    """
    p = np.array([x, y], dtype=float)
    corners = mesh.nodes[mesh.triangles]
    d = p[None, :] - corners[:, 0, :]
    e2 = corners[:, 1, :] - corners[:, 0, :]
    e3 = corners[:, 2, :] - corners[:, 0, :]
    det = e2[:, 0] * e3[:, 1] - e2[:, 1] * e3[:, 0]
    l2 = (d[:, 0] * e3[:, 1] - d[:, 1] * e3[:, 0]) / det
    l3 = (e2[:, 0] * d[:, 1] - e2[:, 1] * d[:, 0]) / det
    l1 = 1.0 - l2 - l3
    tol = -1e-12
    inside = (l1 >= tol) & (l2 >= tol) & (l3 >= tol)
    hits = np.nonzero(inside)[0]
    if hits.size == 0:
        raise ValueError(f"point ({x}, {y}) lies outside the mesh")
    t = int(hits[0])
    return t, np.array([l1[t], l2[t], l3[t]])


def eval_at_point(field: NodalField, x: float, y: float):
    """Evaluate the field at a physical point inside the mesh."""
    t, bary = locate_point(field.mesh, x, y)
    return eval_p1(field, t, bary)
