"""Classical FEM oracles: sparse CG for the Poisson problems and a damped
Newton method for the beam, accepting arbitrary initial guesses.

The Poisson stiffness uses the same quadrature-point coefficient sampling
as the energy models, so the solved minimizer and the evaluated energies
belong to the identical discrete functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .mesh import SCALAR, TriMesh
from .problems import ForceParams, _params_matrix

_QP = fem.TRI_MIDPOINT.points
_QW = fem.TRI_MIDPOINT.weights


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed; details in the message/report."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


def _coefficient_at_quad(mesh: TriMesh, coeff) -> np.ndarray:
    """Coefficient values at the midpoint-rule points, (n_tri, 3)."""
    if np.ndim(coeff) == 2:
        a = np.asarray(coeff, dtype=float)
        if a.shape != (mesh.n_triangles, _QW.size):
            raise ValueError(f"coefficient array has shape {a.shape}, "
                             f"expected {(mesh.n_triangles, _QW.size)}")
        return a
    qp = fem.quad_points(mesh)
    if callable(coeff):
        return np.asarray(coeff(qp[..., 0], qp[..., 1]), dtype=float)
    return np.full((mesh.n_triangles, _QW.size), float(coeff))


@dataclass
class PoissonSystem:
    """Assembled free-DOF system K u = b of the quadratic energy
    1/2 (A grad u, grad u) - (f, u); `a_norm_sq` is the energy norm."""

    stiffness: sp.csr_matrix
    load: np.ndarray

    def a_norm_sq(self, w_free: np.ndarray) -> float:
        return float(w_free @ (self.stiffness @ w_free))


def assemble_poisson(mesh: TriMesh, coeff, f=1.0) -> PoissonSystem:
    """Assemble stiffness and load on the free DOFs.

    `coeff` is a callable (x, y) -> A, a scalar, or precomputed values at
    the quadrature points with shape (n_tri, 3). Homogeneous Dirichlet
    values are assumed (every problem here has u = 0 on the boundary).
    """
    if mesh.space != SCALAR:
        raise ValueError("Poisson assembly needs a scalar P1 space")
    a_qp = _coefficient_at_quad(mesh, coeff)
    a_bar = a_qp @ _QW
    ke = np.einsum("e,eid,ejd->eij", a_bar * mesh.areas, mesh.grad_basis,
                   mesh.grad_basis)

    if callable(f):
        qp = fem.quad_points(mesh)
        f_qp = np.asarray(f(qp[..., 0], qp[..., 1]), dtype=float)
        be = mesh.areas[:, None] * np.einsum("eq,q,qi->ei", f_qp, _QW, _QP)
    else:
        be = (float(f) / 3.0) * np.repeat(mesh.areas, 3).reshape(-1, 3)

    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    k_full = sp.coo_matrix((ke.ravel(), (rows, cols)),
                           shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    b_full = np.bincount(tri.ravel(), weights=be.ravel(), minlength=mesh.n_nodes)

    free = mesh.free_flat
    return PoissonSystem(stiffness=k_full[free][:, free], load=b_full[free])


def fem_solve_poisson(mesh: TriMesh, coeff, f=1.0, tol: float = 1e-10,
                      max_iter: int | None = None) -> fem.NodalField:
    """Energy minimizer over the P1 space via Jacobi-preconditioned CG.

    Converges to relative residual <= tol; raises SolverError otherwise.
    """
    system = assemble_poisson(mesh, coeff, f=f)
    k, b = system.stiffness, system.load
    diag = k.diagonal()
    if np.any(diag <= 0):
        raise SolverError("stiffness diagonal is not positive; coefficient must be > 0")
    precond = spla.LinearOperator(k.shape, matvec=lambda x: x / diag)
    u, info = spla.cg(k, b, rtol=tol, atol=0.0, M=precond,
                      maxiter=max_iter if max_iter is not None else 20 * k.shape[0])
    if info != 0:
        res = np.linalg.norm(b - k @ u) / max(np.linalg.norm(b), 1e-300)
        raise SolverError(f"CG did not converge (info={info}), relative residual {res:.3e}")
    return fem.NodalField(mesh, u)


def solve_poisson_model(mesh: TriMesh, model, params,
                        tol: float = 1e-10) -> fem.NodalField:
    """FEM oracle for a Poisson energy model: identical coefficient sampling
    to the model's energy, so the result minimizes exactly that energy."""
    p = _params_matrix(params, model.n_params)
    a_qp = model.coefficient_at_quad(mesh, p)[0]
    return fem_solve_poisson(mesh, a_qp, f=model.f, tol=tol)


@dataclass
class NewtonReport:
    """Iteration record for one damped Newton run."""

    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    energy: float = np.nan

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_norms": [float(r) for r in self.residual_norms],
            "converged": self.converged,
            "energy": float(self.energy),
        }


def newton_solve(model, mesh: TriMesh, force: ForceParams,
                 u0: fem.NodalField | None = None, tol: float = 1e-10,
                 max_iter: int = 50, fd_tangent: bool = False):
    """Damped Newton on the total-energy gradient.

    Solves K(u) du = -r(u) with a backtracking (halving) line search that
    accepts a step when it lowers the residual norm or the total energy,
    rejecting steps that drive any element's det F to or below the
    regularization floor. Pure residual descent stalls on slender beams
    (the full Newton step overshoots ||r|| by orders of magnitude long
    before convergence), so energy descent is accepted as well; near the
    solution full steps reduce both. Converged when ||r||_2 <= tol or the
    energy stagnates to relative 1e-14. `fd_tangent` swaps in a
    finite-difference Hessian (cross-validation only; slow).

    Returns (NodalField, NewtonReport); raises SolverError with the partial
    report when the iteration cap or the line search is exhausted.
    """
    u = np.zeros(mesh.n_free) if u0 is None else np.array(u0.free_values, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial guess contains non-finite values")
    fld = fem.NodalField(mesh, u)
    report = NewtonReport()

    def residual(x):
        return model.residual_free(mesh, fem.NodalField(mesh, x), force)

    def tangent(x):
        f0 = fem.NodalField(mesh, x)
        if not fd_tangent:
            return model.tangent_free(mesh, f0)
        h = 1e-7
        k = np.empty((x.size, x.size))
        for j in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            k[:, j] = (residual(xp) - residual(xm)) / (2 * h)
        return 0.5 * (k + k.T)

    r = residual(u)
    rnorm = float(np.linalg.norm(r))
    report.residual_norms.append(rnorm)
    energy = model.total_energy(mesh, fld, force)

    for _ in range(max_iter):
        if rnorm <= tol:
            report.converged = True
            break
        try:
            du = np.linalg.solve(tangent(u), -r)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular tangent: {exc}", report) from exc

        step = 1.0
        accepted = False
        for _ in range(40):
            u_try = u + step * du
            fld_try = fem.NodalField(mesh, u_try)
            if model.detf_min(mesh, fld_try) > model.material.j_floor:
                r_try = residual(u_try)
                rnorm_try = float(np.linalg.norm(r_try))
                energy_try = model.total_energy(mesh, fld_try, force)
                if np.isfinite(rnorm_try) and (rnorm_try < rnorm
                                               or energy_try < energy):
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            raise SolverError(
                f"line search stalled at ||r|| = {rnorm:.3e} "
                f"after {report.iterations} iterations", report)

        u, r, rnorm = u_try, r_try, rnorm_try
        fld = fld_try
        report.iterations += 1
        report.residual_norms.append(rnorm)
        if abs(energy_try - energy) < 1e-14 * max(1.0, abs(energy)):
            energy = energy_try
            report.converged = True
            break
        energy = energy_try
    else:
        if rnorm <= tol:
            report.converged = True

    report.energy = model.total_energy(mesh, fld, force)
    if not report.converged:
        raise SolverError(
            f"Newton did not converge in {max_iter} iterations, ||r|| = {rnorm:.3e}",
            report)
    return fld, report


def curl_experiment(model, mesh: TriMesh, schedule,
                    warm_start: fem.NodalField | None = None,
                    tol: float = 1e-10, max_iter: int = 50):
    """Sequential force schedule driving the beam through large rotations.

    With `warm_start` None, runs one Newton solve per scheduled force, each
    starting from the previous converged state (one report per stage).
    With a warm start (e.g. a network's intermediate prediction), runs a
    single Newton solve on the final force from that state.

    Returns (final NodalField, list of NewtonReport).
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("force schedule must not be empty")
    if warm_start is not None:
        fld, rep = newton_solve(model, mesh, schedule[-1], u0=warm_start,
                                tol=tol, max_iter=max_iter)
        return fld, [rep]
    reports = []
    fld = fem.zero_field(mesh)
    for force in schedule:
        fld, rep = newton_solve(model, mesh, force, u0=fld, tol=tol,
                                max_iter=max_iter)
        reports.append(rep)
    return fld, reports
