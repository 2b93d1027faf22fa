"""Energy models: spike-coefficient Poisson, GRF-coefficient Poisson, and a
neo-Hookean cantilever beam.

Each model exposes the element-local energy E_T, its exact gradient in the
element's DOFs (the element residual), and -- for the beam -- the element
tangent needed by Newton's method. Total energies sum E_T over all elements
or over a uniformly sampled subset; with `subset_scaling` the subset sum is
multiplied by n_triangles/N so it estimates the full-domain energy without
bias. Boundary (traction) terms are never subsampled.

Models are duck-typed: anything with `space`, `total_energy`,
`residual_free` and `batch_energy_residual` works as an energy model for
the training and solver layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import SCALAR, VECTOR2, TriMesh

_QP = fem.TRI_MIDPOINT.points    # (K, 3) P1 basis values at quad points
_QW = fem.TRI_MIDPOINT.weights   # (K,)
_EPS2 = np.array([[0.0, 1.0], [-1.0, 0.0]])  # 2D permutation symbol


@dataclass(frozen=True)
class SpikeParams:
    """Spike location (x0, y0) and radius parameter r (> 0)."""

    x0: float
    y0: float
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"spike radius must be positive, got {self.r}")

    def to_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.r])


@dataclass(frozen=True)
class GrfParams:
    """Standard-normal coefficient vector of a truncated KL expansion."""

    xi: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=float)


@dataclass(frozen=True)
class ForceParams:
    """Traction on the beam's top edge: interval midpoint p and magnitudes."""

    p: float
    fx: float
    fy: float

    def to_array(self) -> np.ndarray:
        return np.array([self.p, self.fx, self.fy])


@dataclass(frozen=True)
class NeoHookeanMaterial:
    """Compressible neo-Hookean material (plane strain).

    `j_floor` is the det-F threshold below which ln J switches to its C^1
    quadratic extension, keeping the energy finite and differentiable for
    inverted elements emitted by untrained networks.
    """

    mu: float
    lam: float
    j_floor: float = 1e-3

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0 or not 0 < self.j_floor < 1:
            raise ValueError("need mu > 0, lam >= 0, 0 < j_floor < 1")

    @classmethod
    def from_youngs(cls, youngs: float, poisson: float, j_floor: float = 1e-3):
        mu = youngs / (2.0 * (1.0 + poisson))
        lam = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        return cls(mu=mu, lam=lam, j_floor=j_floor)


def spike_coefficient(params: SpikeParams, x, y):
    """0.1 + exp(-((x-x0)^2 + (y-y0)^2)/r); always > 0.1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = (x - params.x0) ** 2 + (y - params.y0) ** 2
    out = 0.1 + np.exp(-d2 / params.r)
    return float(out) if out.ndim == 0 else out


def _params_matrix(params, dim: int) -> np.ndarray:
    """Coerce a params dataclass / vector / batch into a (M, dim) array."""
    if hasattr(params, "to_array"):
        params = params.to_array()
    arr = np.asarray(params, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected parameter vectors of length {dim}, got shape {arr.shape}")
    return arr


def _subset(mesh: TriMesh, elements, subset_scaling: bool):
    """Element index array and the |T|/N factor for subset estimates."""
    if elements is None:
        return None, 1.0
    idx = np.asarray(elements, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("element subset must not be empty")
    if idx.min() < 0 or idx.max() >= mesh.n_triangles:
        raise IndexError("element subset index out of range")
    scale = mesh.n_triangles / idx.size if subset_scaling else 1.0
    return idx, scale


class _PoissonModel:
    """Shared machinery for E(v) = 1/2 int A grad v . grad v - int f v.

    The coefficient A is sampled at quadrature points (never interpolated
    to P1 first), so network losses and the FEM oracle integrate the exact
    same discrete energy. Subclasses provide `coefficient_at_quad`.
    """

    space = SCALAR
    n_params: int

    def __init__(self, f=1.0):
        self.f = f

    # -- coefficient hooks -------------------------------------------------

    def coefficient_at_quad(self, mesh: TriMesh, params: np.ndarray,
                            elements=None) -> np.ndarray:
        """A at the midpoint-rule points: (M, n_elements, 3)."""
        raise NotImplementedError

    def coefficient_fn(self, params):
        """Pointwise coefficient callable (x, y) -> A for oracle assembly."""
        raise NotImplementedError

    # -- energies and residuals --------------------------------------------

    def _f_at_quad(self, mesh, elements):
        if callable(self.f):
            qp = fem.quad_points(mesh)
            if elements is not None:
                qp = qp[elements]
            return self.f(qp[..., 0], qp[..., 1])  # (E, K)
        return float(self.f)

    def _per_element(self, mesh, u_full, params, elements):
        """Element energies (M, E) and per-vertex energy gradients (M, E, 3)."""
        tri = mesh.triangles if elements is None else mesh.triangles[elements]
        grads = mesh.grad_basis if elements is None else mesh.grad_basis[elements]
        areas = mesh.areas if elements is None else mesh.areas[elements]

        v_tri = u_full[:, tri]                                   # (M, E, 3)
        grad_v = np.einsum("met,etd->med", v_tri, grads)         # (M, E, 2)
        a_qp = self.coefficient_at_quad(mesh, params, elements)  # (M, E, K)
        a_bar = a_qp @ _QW                                       # (M, E)

        f_qp = self._f_at_quad(mesh, elements)
        if np.ndim(f_qp) == 0:
            load = f_qp * (v_tri.mean(axis=2))                   # int f v / area
            load_grad = np.broadcast_to(f_qp / 3.0, tri.shape)   # (E, 3)
        else:
            v_qp = np.einsum("met,qt->meq", v_tri, _QP)
            load = np.einsum("meq,eq,q->me", v_qp, f_qp, _QW)
            load_grad = np.einsum("eq,q,qi->ei", f_qp, _QW, _QP)

        grad_sq = (grad_v**2).sum(axis=2)
        energies = areas * (0.5 * a_bar * grad_sq - load)
        contrib = (areas * a_bar)[:, :, None] * np.einsum("etd,med->met", grads, grad_v)
        contrib = contrib - areas[None, :, None] * load_grad[None, :, :]
        return energies, contrib

    def element_energy(self, mesh: TriMesh, t: int, field: fem.NodalField,
                       params) -> float:
        p = _params_matrix(params, self.n_params)
        e, _ = self._per_element(mesh, field.full()[None], p, np.array([t]))
        return float(e[0, 0])

    def element_residual(self, mesh: TriMesh, t: int, field: fem.NodalField,
                         params) -> np.ndarray:
        p = _params_matrix(params, self.n_params)
        _, c = self._per_element(mesh, field.full()[None], p, np.array([t]))
        return c[0, 0]

    def total_energy(self, mesh: TriMesh, field: fem.NodalField, params,
                     elements=None, subset_scaling: bool = True) -> float:
        p = _params_matrix(params, self.n_params)
        e, _ = self.batch_energy_residual(mesh, field.free_values[None], p,
                                          elements, subset_scaling)
        return float(e[0])

    def residual_free(self, mesh: TriMesh, field: fem.NodalField, params,
                      elements=None, subset_scaling: bool = True) -> np.ndarray:
        p = _params_matrix(params, self.n_params)
        _, r = self.batch_energy_residual(mesh, field.free_values[None], p,
                                          elements, subset_scaling)
        return r[0]

    def batch_energy_residual(self, mesh: TriMesh, u_free: np.ndarray,
                              params: np.ndarray, elements=None,
                              subset_scaling: bool = True):
        """Energies (M,) and free-DOF residuals (M, n_free) for a batch."""
        idx, scale = _subset(mesh, elements, subset_scaling)
        u_full = fem.scatter(mesh, u_free)
        energies, contrib = self._per_element(mesh, u_full, params, idx)

        m = u_free.shape[0]
        tri = mesh.triangles if idx is None else mesh.triangles[idx]
        flat = (np.arange(m)[:, None] * mesh.n_nodes + tri.ravel()[None, :]).ravel()
        grad_full = np.bincount(flat, weights=contrib.reshape(m, -1).ravel(),
                                minlength=m * mesh.n_nodes).reshape(m, mesh.n_nodes)
        return scale * energies.sum(axis=1), scale * grad_full[:, mesh.free_flat]


class SpikePoissonModel(_PoissonModel):
    """Poisson problem whose coefficient is 0.1 plus a moving Gaussian spike.

    Parameters are (x0, y0, r) with the spike center (x0, y0) and radius r.
    """

    n_params = 3

    def coefficient_at_quad(self, mesh, params, elements=None):
        params = _params_matrix(params, 3)
        if np.any(params[:, 2] <= 0):
            raise ValueError("spike radius must be positive")
        qp = fem.quad_points(mesh)
        if elements is not None:
            qp = qp[elements]
        x = qp[..., 0].reshape(-1)
        y = qp[..., 1].reshape(-1)
        d2 = (x[None, :] - params[:, 0:1]) ** 2 + (y[None, :] - params[:, 1:2]) ** 2
        a = 0.1 + np.exp(-d2 / params[:, 2:3])
        return a.reshape(params.shape[0], *qp.shape[:2])

    def coefficient_fn(self, params):
        if not isinstance(params, SpikeParams):
            params = SpikeParams(*np.asarray(params, dtype=float))
        return lambda x, y: spike_coefficient(params, x, y)


class GrfPoissonModel(_PoissonModel):
    """Poisson problem with coefficient exp(a), a a truncated KL field.

    Parameters are the standard-normal KL coordinates xi. The nodal a-field
    is interpolated to quadrature points before exponentiation.
    """

    def __init__(self, basis, f=1.0):
        super().__init__(f=f)
        self.basis = basis
        self.n_params = basis.n_modes

    def _a_at_quad(self, mesh, params, elements=None):
        a_nodal = self.basis.nodal_field(params)     # (M, n_nodes)
        tri = mesh.triangles if elements is None else mesh.triangles[elements]
        return np.einsum("met,qt->meq", a_nodal[:, tri], _QP)

    def coefficient_at_quad(self, mesh, params, elements=None):
        params = _params_matrix(params, self.n_params)
        return np.exp(self._a_at_quad(mesh, params, elements))

    def coefficient_fn(self, params):
        from .grf import grf_coefficient
        xi = params.to_array() if hasattr(params, "to_array") else np.asarray(params)
        return lambda x, y: grf_coefficient(self.basis, xi, x, y)


def _reg_log(j: np.ndarray, floor: float):
    """ln J, its first two derivatives, with a C^1 quadratic extension below
    `floor` (the extension is C^2 at the joint)."""
    below = j <= floor
    j_safe = np.where(below, 1.0, j)
    d = j - floor
    g = np.where(below, np.log(floor) + d / floor - d**2 / (2.0 * floor**2),
                 np.log(j_safe))
    gp = np.where(below, 1.0 / floor - d / floor**2, 1.0 / j_safe)
    gpp = np.where(below, -1.0 / floor**2, -1.0 / j_safe**2)
    return g, gp, gpp


class NeoHookeanBeamModel:
    """Neo-Hookean cantilever with a dead-load traction on the top edge.

    Stored energy density (plane strain):
        psi(F) = mu/2 (tr(F^T F) - 2) - mu ln J + lam/2 (ln J)^2,  J = det F
    with F = I + grad v constant per element and ln J regularized below
    `material.j_floor`. The traction F = (fx, fy) acts on the reference top
    edge restricted to [p - l/2, p + l/2] clipped to the beam; its energy
    -int F . v ds uses edgewise trapezoidal integration (exact for P1).

    Parameters are (p, fx, fy).
    """

    space = VECTOR2
    n_params = 3

    def __init__(self, material: NeoHookeanMaterial, traction_length: float = 0.1):
        self.material = material
        self.traction_length = float(traction_length)
        if self.traction_length <= 0:
            raise ValueError("traction interval length must be positive")

    # -- elastic bulk term ---------------------------------------------------

    def _kinematics(self, mesh, u_full, elements):
        grads = mesh.grad_basis if elements is None else mesh.grad_basis[elements]
        tri = mesh.triangles if elements is None else mesh.triangles[elements]
        v_tri = u_full[:, tri, :]                                  # (M, E, 3, 2)
        grad_v = np.einsum("metc,etd->mecd", v_tri, grads)         # (M, E, 2, 2)
        f = grad_v.copy()
        f[..., 0, 0] += 1.0
        f[..., 1, 1] += 1.0
        return f, grads

    @staticmethod
    def _det(f):
        return f[..., 0, 0] * f[..., 1, 1] - f[..., 0, 1] * f[..., 1, 0]

    @staticmethod
    def _cof(f):
        cof = np.empty_like(f)
        cof[..., 0, 0] = f[..., 1, 1]
        cof[..., 0, 1] = -f[..., 1, 0]
        cof[..., 1, 0] = -f[..., 0, 1]
        cof[..., 1, 1] = f[..., 0, 0]
        return cof

    def _psi_terms(self, f):
        mu, lam = self.material.mu, self.material.lam
        j = self._det(f)
        g, gp, gpp = _reg_log(j, self.material.j_floor)
        trc = (f**2).sum(axis=(-2, -1))
        psi = 0.5 * mu * (trc - 2.0) - mu * g + 0.5 * lam * g**2
        # first Piola-Kirchhoff stress dpsi/dF
        piola = mu * f + ((lam * g - mu) * gp)[..., None, None] * self._cof(f)
        return j, g, gp, gpp, psi, piola

    def _per_element(self, mesh, u_full, elements):
        """Elastic element energies (M, E) and DOF gradients (M, E, 3, 2)."""
        areas = mesh.areas if elements is None else mesh.areas[elements]
        f, grads = self._kinematics(mesh, u_full, elements)
        _, _, _, _, psi, piola = self._psi_terms(f)
        energies = areas * psi
        contrib = np.einsum("e,mead,etd->meta", areas, piola, grads)
        return energies, contrib

    def element_energy(self, mesh, t, field, params=None) -> float:
        e, _ = self._per_element(mesh, field.full()[None], np.array([t]))
        return float(e[0, 0])

    def element_residual(self, mesh, t, field, params=None) -> np.ndarray:
        """Gradient of the element energy in the 6 element DOFs, (3, 2)."""
        _, c = self._per_element(mesh, field.full()[None], np.array([t]))
        return c[0, 0]

    def element_tangent(self, mesh, t, field, params=None) -> np.ndarray:
        """Exact element Hessian, (3, 2, 3, 2) = 6x6 in (vertex, component)."""
        return self._tangent_blocks(mesh, field.full()[None], np.array([t]))[0, 0]

    def _tangent_blocks(self, mesh, u_full, elements):
        """Element Hessians of the elastic energy, (M, E, 3, 2, 3, 2)."""
        mu, lam = self.material.mu, self.material.lam
        areas = mesh.areas if elements is None else mesh.areas[elements]
        f, grads = self._kinematics(mesh, u_full, elements)
        _, g, gp, gpp, _, _ = self._psi_terms(f)
        cof = self._cof(f)

        gg = np.einsum("etd,esd->ets", grads, grads)
        cross = np.einsum("etd,df,esf->ets", grads, _EPS2, grads)
        g_cof = np.einsum("mead,etd->meta", cof, grads)

        c1 = lam * gp**2 + (lam * g - mu) * gpp
        c2 = (lam * g - mu) * gp

        eye2 = np.eye(2)
        tang = (mu * np.einsum("ets,ab->etasb", gg, eye2)
                + np.einsum("me,meta,mesb->metasb", c1, g_cof, g_cof)
                + np.einsum("me,ets,ab->metasb", c2, cross, _EPS2))
        return tang * areas[None, :, None, None, None, None]

    # -- traction term ---------------------------------------------------------

    def _top_edges(self, mesh):
        sel = [i for i, tag in enumerate(mesh.boundary_tags) if tag == "top"]
        if not sel:
            raise ValueError("mesh has no top boundary edges")
        edges = mesh.boundary_edges[sel]
        xa = mesh.nodes[edges[:, 0], 0]
        xb = mesh.nodes[edges[:, 1], 0]
        swap = xa > xb
        edges = np.where(swap[:, None], edges[:, ::-1], edges)
        return edges, np.minimum(xa, xb), np.maximum(xa, xb)

    def _overlap_weights(self, mesh, p):
        """Trapezoid weights of -int F . v ds per edge endpoint.

        Returns (edges, wa, wb) with w* of shape (M, n_top_edges): the
        integral of the endpoint hat functions over the loaded overlap.
        """
        edges, xa, xb = self._top_edges(mesh)
        half = 0.5 * self.traction_length
        p = np.atleast_1d(np.asarray(p, dtype=float))[:, None]
        lo = np.maximum(xa[None, :], p - half)
        hi = np.minimum(xb[None, :], p + half)
        length = np.clip(hi - lo, 0.0, None)
        t_lo = np.clip((lo - xa) / (xb - xa), 0.0, 1.0)
        t_hi = np.clip((hi - xa) / (xb - xa), 0.0, 1.0)
        wa = 0.5 * length * ((1.0 - t_lo) + (1.0 - t_hi))
        wb = 0.5 * length * (t_lo + t_hi)
        return edges, wa, wb

    def traction_energy(self, mesh, field, force) -> float:
        params = _params_matrix(force, 3)
        e, _ = self._traction_batch(mesh, field.full()[None], params)
        return float(e[0])

    def traction_residual_full(self, mesh, force) -> np.ndarray:
        """Gradient of the traction energy in all nodal DOFs, (n_nodes, 2).

        Independent of the displacement (dead load)."""
        params = _params_matrix(force, 3)
        _, r = self._traction_batch(mesh, np.zeros((1,) + mesh.full_shape()), params)
        return r[0]

    def _traction_batch(self, mesh, u_full, params):
        edges, wa, wb = self._overlap_weights(mesh, params[:, 0])
        fvec = params[:, 1:3]                                     # (M, 2)
        va = u_full[:, edges[:, 0], :]                            # (M, E, 2)
        vb = u_full[:, edges[:, 1], :]
        energies = -np.einsum("mec,mc,me->m", va, fvec, wa) \
                   - np.einsum("mec,mc,me->m", vb, fvec, wb)
        grad = np.zeros(u_full.shape)
        np.add.at(grad, (slice(None), edges[:, 0]), -wa[:, :, None] * fvec[:, None, :])
        np.add.at(grad, (slice(None), edges[:, 1]), -wb[:, :, None] * fvec[:, None, :])
        return energies, grad

    # -- totals ------------------------------------------------------------------

    def total_energy(self, mesh, field, params, elements=None,
                     subset_scaling: bool = True) -> float:
        p = _params_matrix(params, 3)
        e, _ = self.batch_energy_residual(mesh, field.free_values[None], p,
                                          elements, subset_scaling)
        return float(e[0])

    def residual_free(self, mesh, field, params, elements=None,
                      subset_scaling: bool = True) -> np.ndarray:
        p = _params_matrix(params, 3)
        _, r = self.batch_energy_residual(mesh, field.free_values[None], p,
                                          elements, subset_scaling)
        return r[0]

    def tangent_free(self, mesh, field) -> np.ndarray:
        """Dense Hessian of the total energy on the free DOFs.

        The traction term is linear in v, so only the elastic part enters."""
        blocks = self._tangent_blocks(mesh, field.full()[None], None)[0]
        n_slots = mesh.n_nodes * 2
        full = np.zeros((n_slots, n_slots))
        dof = 2 * mesh.triangles[:, :, None] + np.arange(2)[None, None, :]
        dof = dof.reshape(mesh.n_triangles, 6)
        rows = np.repeat(dof, 6, axis=1).ravel()
        cols = np.tile(dof, (1, 6)).ravel()
        np.add.at(full, (rows, cols), blocks.reshape(mesh.n_triangles, 36).ravel())
        return full[np.ix_(mesh.free_flat, mesh.free_flat)]

    def detf_min(self, mesh, field) -> float:
        """Smallest det F over all elements (line-search admissibility check)."""
        f, _ = self._kinematics(mesh, field.full()[None], None)
        return float(self._det(f).min())

    def batch_energy_residual(self, mesh, u_free, params, elements=None,
                              subset_scaling: bool = True):
        """Energies (M,) and free-DOF residuals (M, n_free); the traction
        boundary term always enters in full, only E_T is subsampled."""
        idx, scale = _subset(mesh, elements, subset_scaling)
        u_full = fem.scatter(mesh, u_free)
        energies, contrib = self._per_element(mesh, u_full, idx)

        m = u_free.shape[0]
        tri = mesh.triangles if idx is None else mesh.triangles[idx]
        slots = (2 * tri[:, :, None] + np.arange(2)[None, None, :]).ravel()
        n_slots = mesh.n_nodes * 2
        flat = (np.arange(m)[:, None] * n_slots + slots[None, :]).ravel()
        grad_full = np.bincount(flat, weights=contrib.reshape(m, -1).ravel(),
                                minlength=m * n_slots).reshape(m, n_slots)

        tr_e, tr_grad = self._traction_batch(mesh, u_full, params)
        total_e = scale * energies.sum(axis=1) + tr_e
        total_r = scale * grad_full + tr_grad.reshape(m, n_slots)
        return total_e, total_r[:, mesh.free_flat]


def total_energy(model, mesh, field, params, elements=None,
                 subset_scaling: bool = True) -> float:
    """Sum of E_T over `elements` (all when None) plus full boundary terms;
    with scaling the element sum is multiplied by n_triangles/N."""
    return model.total_energy(mesh, field, params, elements=elements,
                              subset_scaling=subset_scaling)
