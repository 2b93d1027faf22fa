"""Structured triangular meshes of rectangles with P1 DOF bookkeeping.

Meshes are built from a regular nx-by-ny grid of cells, every cell split
along its bottom-left to top-right diagonal so results are deterministic.
Nodes are numbered lexicographically (y-major, then x). A mesh carries a
free-DOF numbering for either a scalar P1 space or a two-component vector
P1 space, with Dirichlet-constrained nodes excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SCALAR = "scalar"
VECTOR2 = "vector2"

EDGE_TAGS = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangle mesh with boundary and DOF bookkeeping.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array of vertex coordinates.
    triangles : (n_tri, 3) int array of vertex indices, counterclockwise.
    boundary_edges : (n_bedges, 2) int array of node pairs on the boundary.
    boundary_tags : tuple of edge tags, one of "left"/"right"/"bottom"/"top".
    dirichlet_nodes : sorted int array of constrained node indices.
    space : "scalar" (1 DOF per node) or "vector2" (2 DOFs per node).
    free_dof_map : (n_nodes,) or (n_nodes, 2) int array mapping node
        (and component) to a free-DOF index; -1 marks constrained slots.
    h : maximum element diameter (longest edge over all triangles).
    areas : (n_tri,) element areas.
    grad_basis : (n_tri, 3, 2) constant gradients of the barycentric basis.
    free_flat : (n_free,) positions of the free DOFs in the raveled full
        nodal vector, ordered by free-DOF index.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    dirichlet_nodes: np.ndarray
    space: str
    free_dof_map: np.ndarray
    h: float
    areas: np.ndarray
    grad_basis: np.ndarray
    free_flat: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_free(self) -> int:
        return self.free_flat.shape[0]

    @property
    def n_components(self) -> int:
        return 1 if self.space == SCALAR else 2

    def full_shape(self) -> tuple:
        """Shape of a full nodal value array for this mesh's space."""
        if self.space == SCALAR:
            return (self.n_nodes,)
        return (self.n_nodes, 2)


@dataclass(frozen=True)
class ElementGeometry:
    """P1 geometry of one triangle: area and constant basis gradients."""

    area: float
    grad_basis: np.ndarray  # (3, 2)
    vertex_ids: tuple


def _p1_geometry(nodes: np.ndarray, triangles: np.ndarray):
    """Areas and barycentric basis gradients for all triangles at once."""
    p1 = nodes[triangles[:, 0]]
    p2 = nodes[triangles[:, 1]]
    p3 = nodes[triangles[:, 2]]
    d2 = p2 - p1
    d3 = p3 - p1
    twice_area = d2[:, 0] * d3[:, 1] - d2[:, 1] * d3[:, 0]
    if np.any(twice_area <= 0):
        bad = int(np.argmin(twice_area))
        raise ValueError(f"triangle {bad} has non-positive signed area")
    grads = np.empty((triangles.shape[0], 3, 2))
    # grad of barycentric coordinate i is the inward normal of the opposite
    # edge divided by twice the area
    grads[:, 0, 0] = p2[:, 1] - p3[:, 1]
    grads[:, 0, 1] = p3[:, 0] - p2[:, 0]
    grads[:, 1, 0] = p3[:, 1] - p1[:, 1]
    grads[:, 1, 1] = p1[:, 0] - p3[:, 0]
    grads[:, 2, 0] = p1[:, 1] - p2[:, 1]
    grads[:, 2, 1] = p2[:, 0] - p1[:, 0]
    grads /= twice_area[:, None, None]
    return 0.5 * twice_area, grads


def _max_edge_length(nodes: np.ndarray, triangles: np.ndarray) -> float:
    p1 = nodes[triangles[:, 0]]
    p2 = nodes[triangles[:, 1]]
    p3 = nodes[triangles[:, 2]]
    e = np.stack(
        [
            np.linalg.norm(p2 - p1, axis=1),
            np.linalg.norm(p3 - p2, axis=1),
            np.linalg.norm(p1 - p3, axis=1),
        ]
    )
    return float(e.max())


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def from_arrays(nodes, triangles, boundary_edges, boundary_tags, dirichlet_nodes,
                space: str = SCALAR) -> TriMesh:
    """Assemble a TriMesh from raw arrays, deriving all bookkeeping.

    Free DOFs are numbered in node-index order (components interleaved for
    the vector space), skipping Dirichlet slots.
    """
    if space not in (SCALAR, VECTOR2):
        raise ValueError(f"unknown space {space!r}")
    nodes = np.ascontiguousarray(nodes, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
    dirichlet_nodes = np.unique(np.asarray(dirichlet_nodes, dtype=np.int64))

    areas, grads = _p1_geometry(nodes, triangles)
    h = _max_edge_length(nodes, triangles)

    n_nodes = nodes.shape[0]
    n_comp = 1 if space == SCALAR else 2
    constrained = np.zeros(n_nodes, dtype=bool)
    constrained[dirichlet_nodes] = True
    if space == SCALAR:
        free_mask = ~constrained
    else:
        free_mask = np.repeat(~constrained, 2).reshape(n_nodes, 2)
    free_dof_map = np.full((n_nodes,) if n_comp == 1 else (n_nodes, 2), -1,
                           dtype=np.int64)
    free_dof_map[free_mask] = np.arange(int(free_mask.sum()))
    free_flat = np.nonzero(free_dof_map.ravel() >= 0)[0]

    return TriMesh(
        nodes=_freeze(nodes),
        triangles=_freeze(triangles),
        boundary_edges=_freeze(boundary_edges),
        boundary_tags=tuple(boundary_tags),
        dirichlet_nodes=_freeze(dirichlet_nodes),
        space=space,
        free_dof_map=_freeze(free_dof_map),
        h=h,
        areas=_freeze(areas),
        grad_basis=_freeze(grads),
        free_flat=_freeze(free_flat),
    )


def build_structured_rect(x_min, x_max, y_min, y_max, nx: int, ny: int,
                          dirichlet=EDGE_TAGS, space: str = SCALAR) -> TriMesh:
    """Structured triangulation of [x_min,x_max] x [y_min,y_max].

    nx-by-ny cells, each split bottom-left to top-right; (nx+1)(ny+1) nodes
    numbered y-major. Nodes on edges whose tag is in `dirichlet` are
    constrained.

    Parameters
    ----------
    dirichlet : iterable of edge tags out of {"left","right","bottom","top"}.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if not (x_min < x_max and y_min < y_max):
        raise ValueError("domain bounds must satisfy x_min < x_max, y_min < y_max")
    dirichlet = set(dirichlet)
    unknown = dirichlet - set(EDGE_TAGS)
    if unknown:
        raise ValueError(f"unknown edge tags {sorted(unknown)}")

    xs = np.linspace(x_min, x_max, nx + 1)
    ys = np.linspace(y_min, y_max, ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # row iy, column ix -> node iy*(nx+1)+ix
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for iy in range(ny):
        for ix in range(nx):
            bl, br = nid(ix, iy), nid(ix + 1, iy)
            tl, tr = nid(ix, iy + 1), nid(ix + 1, iy + 1)
            tris[k] = (bl, br, tr)
            tris[k + 1] = (bl, tr, tl)
            k += 2

    edges = []
    tags = []
    for ix in range(nx):
        edges.append((nid(ix, 0), nid(ix + 1, 0)))
        tags.append("bottom")
        edges.append((nid(ix, ny), nid(ix + 1, ny)))
        tags.append("top")
    for iy in range(ny):
        edges.append((nid(0, iy), nid(0, iy + 1)))
        tags.append("left")
        edges.append((nid(nx, iy), nid(nx, iy + 1)))
        tags.append("right")
    edges = np.asarray(edges, dtype=np.int64)

    tagged = [i for i, t in enumerate(tags) if t in dirichlet]
    dirichlet_nodes = np.unique(edges[tagged].ravel()) if tagged else np.empty(0, np.int64)

    return from_arrays(nodes, tris, edges, tags, dirichlet_nodes, space=space)


def build_beam_mesh(length: float = 1.0, height: float = 0.05,
                    nx: int = 40, ny: int = 2) -> TriMesh:
    """Cantilever beam [0,length] x [0,height] with a vector P1 space.

    Both displacement components of the nodes on the left edge are fixed;
    all other boundary nodes are free (traction boundary).
    """
    return build_structured_rect(0.0, length, 0.0, height, nx, ny,
                                 dirichlet=("left",), space=VECTOR2)


def element_geometry(mesh: TriMesh, t: int) -> ElementGeometry:
    """Area, basis gradients, and vertex ids of triangle `t`."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range [0, {mesh.n_triangles})")
    return ElementGeometry(
        area=float(mesh.areas[t]),
        grad_basis=mesh.grad_basis[t],
        vertex_ids=tuple(int(v) for v in mesh.triangles[t]),
    )


def sample_element_batch(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of `n` distinct triangle indices."""
    if not 1 <= n <= mesh.n_triangles:
        raise ValueError(f"batch size {n} out of range [1, {mesh.n_triangles}]")
    return rng.choice(mesh.n_triangles, size=n, replace=False)


def permute_nodes(mesh: TriMesh, perm: np.ndarray) -> TriMesh:
    """Same geometry with node i renumbered to perm[i].

    Used to check that metrics are invariant under node ordering.
    """
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    nodes = mesh.nodes[inv]
    return from_arrays(
        nodes,
        perm[mesh.triangles],
        perm[mesh.boundary_edges],
        mesh.boundary_tags,
        perm[mesh.dirichlet_nodes],
        space=mesh.space,
    )


def mesh_to_json(mesh: TriMesh) -> str:
    """Debug/interchange dump: nodes, triangles, dirichlet node list."""
    doc = {
        "nodes": [[float(x), float(y)] for x, y in mesh.nodes],
        "triangles": [[int(a), int(b), int(c)] for a, b, c in mesh.triangles],
        "dirichlet": [int(i) for i in mesh.dirichlet_nodes],
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)
