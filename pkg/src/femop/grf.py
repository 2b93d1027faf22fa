"""Gaussian random field coefficient via a truncated Karhunen-Loeve basis.

The field a(x, omega) with squared-exponential covariance is discretized on
the mesh nodes: the dense nodal covariance matrix is eigendecomposed (top-m
pairs by blocked subspace iteration) and realizations come from i.i.d.
standard normal coordinates xi,

    a = mu + sigma * sum_i sqrt(lambda_i) phi_i xi_i,

with Euclidean-normalized eigenvectors. The PDE coefficient is exp(a),
interpolated from the nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import fem
from .mesh import TriMesh

# Fixed seed for the eigensolver start block: the basis must be a pure
# function of (nodes, L, m) so training and evaluation agree bit-for-bit.
_EIG_SEED = 0x1D5EED


class EigenConvergenceError(RuntimeError):
    """Subspace iteration did not reach the residual tolerance."""

    def __init__(self, residual: float, tol: float, iterations: int):
        super().__init__(
            f"subspace iteration stalled after {iterations} iterations: "
            f"residual {residual:.3e} > tol {tol:.3e}"
        )
        self.residual = residual
        self.tol = tol
        self.iterations = iterations


def assemble_covariance(nodes: np.ndarray, corr_length: float) -> np.ndarray:
    """Dense covariance C_ij = exp(-|x_i - x_j|^2 / (2 L^2)).

    Symmetric with unit diagonal; the squared distances are computed once
    per pair so the matrix is symmetric to the bit.
    """
    if corr_length <= 0:
        raise ValueError(f"correlation length must be positive, got {corr_length}")
    nodes = np.asarray(nodes, dtype=float)
    d2 = cdist(nodes, nodes, metric="sqeuclidean")
    return np.exp(-d2 / (2.0 * corr_length**2))


def truncated_eig(c: np.ndarray, m: int, tol: float = 1e-8,
                  max_iter: int = 5000, extra: int = 5):
    """Top-m eigenpairs of a symmetric matrix by blocked subspace iteration.

    Iterates on a block of m + `extra` vectors with Rayleigh-Ritz
    extraction; converged leading pairs are locked (deflated) and the rest
    kept orthogonal to them. Converged when every wanted pair satisfies
    ||C phi - lambda phi|| <= tol * lambda_1.

    Returns (eigenvalues (m,), eigenvectors (n, m)) in descending order
    with unit-norm columns; raises EigenConvergenceError on stall.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("covariance matrix must be square")
    if not 1 <= m <= n:
        raise ValueError(f"mode count {m} out of range [1, {n}]")

    k = min(m + extra, n)
    rng = np.random.default_rng(_EIG_SEED)
    q = np.linalg.qr(rng.standard_normal((n, k)))[0]

    locked_vecs = np.empty((n, 0))
    locked_vals = np.empty(0)
    residual = np.inf
    lam1 = 1.0

    for _ in range(max_iter):
        y = c @ q
        if locked_vecs.shape[1]:
            y -= locked_vecs @ (locked_vecs.T @ y)
        h = q.T @ y
        h = 0.5 * (h + h.T)
        theta, s = np.linalg.eigh(h)
        order = np.argsort(theta)[::-1]
        theta = theta[order]
        s = s[:, order]
        ritz = q @ s
        c_ritz = y @ s

        lam1 = float(locked_vals[0]) if locked_vals.size else float(theta[0])
        res = np.linalg.norm(c_ritz - ritz * theta[None, :], axis=0)
        residual = float(res[: m - locked_vals.size].max())

        # lock converged leading pairs, in order, so later blocks iterate
        # in the deflated complement
        n_conv = 0
        while (n_conv < m - locked_vals.size and
               res[n_conv] <= tol * max(abs(lam1), np.finfo(float).tiny)):
            n_conv += 1
        if n_conv:
            locked_vecs = np.hstack([locked_vecs, ritz[:, :n_conv]])
            locked_vals = np.concatenate([locked_vals, theta[:n_conv]])
            if locked_vals.size >= m:
                vals = locked_vals[:m]
                vecs = locked_vecs[:, :m]
                return vals, vecs / np.linalg.norm(vecs, axis=0)

        q = np.linalg.qr(c_ritz[:, n_conv:])[0]
        if locked_vecs.shape[1]:
            q -= locked_vecs @ (locked_vecs.T @ q)
            q = np.linalg.qr(q)[0]

    raise EigenConvergenceError(residual, tol * max(abs(lam1), 1e-300), max_iter)


@dataclass(frozen=True)
class KlBasis:
    """Truncated KL basis: descending eigenvalues, unit nodal eigenvectors."""

    eigenvalues: np.ndarray    # (m,)
    eigenvectors: np.ndarray   # (n_nodes, m)
    mu: float
    sigma: float
    corr_length: float
    mesh: TriMesh

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be positive and nonincreasing")
        if self.eigenvectors.shape != (self.mesh.n_nodes, lam.size):
            raise ValueError("eigenvector block does not match mesh/eigenvalue count")

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def scaled_modes(self) -> np.ndarray:
        """sqrt(lambda_i) phi_i as columns, (n_nodes, m)."""
        return self.eigenvectors * np.sqrt(self.eigenvalues)[None, :]

    def nodal_field(self, xi) -> np.ndarray:
        """Nodal values of a = mu + sigma sum sqrt(lambda_i) phi_i xi_i.

        Accepts a single xi (m,) or a batch (M, m)."""
        xi = xi.to_array() if hasattr(xi, "to_array") else np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n_modes:
            raise ValueError(f"expected {self.n_modes} KL coordinates, got {xi.shape[-1]}")
        return self.mu + self.sigma * (xi @ self.scaled_modes().T)

    def to_json(self) -> str:
        doc = {
            "mu": self.mu,
            "sigma": self.sigma,
            "corr_length": self.corr_length,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
        }
        return json.dumps(doc, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, text: str, mesh: TriMesh) -> "KlBasis":
        doc = json.loads(text)
        vecs = np.asarray(doc["eigenvectors"], dtype=float)
        if vecs.shape[0] != mesh.n_nodes:
            raise ValueError(
                f"basis has {vecs.shape[0]} nodal rows but mesh has {mesh.n_nodes} nodes"
            )
        return cls(
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
            eigenvectors=vecs,
            mu=float(doc["mu"]),
            sigma=float(doc["sigma"]),
            corr_length=float(doc["corr_length"]),
            mesh=mesh,
        )


def build_kl_basis(mesh: TriMesh, n_modes: int, corr_length: float,
                   mean: float = 0.0, std: float = 1.0) -> KlBasis:
    """Assemble the nodal covariance and extract the top-n_modes pairs."""
    c = assemble_covariance(mesh.nodes, corr_length)
    lam, phi = truncated_eig(c, n_modes)
    return KlBasis(eigenvalues=lam, eigenvectors=phi, mu=mean, sigma=std,
                   corr_length=corr_length, mesh=mesh)


def kl_field(basis: KlBasis, xi) -> np.ndarray:
    """Nodal values of the Gaussian field for KL coordinates xi."""
    return basis.nodal_field(xi)


def grf_coefficient(basis: KlBasis, xi, x, y):
    """exp(a) at physical points: P1-interpolated nodal field, then exp."""
    a = basis.nodal_field(xi)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    xs, ys = np.broadcast_arrays(xs, ys)
    out = np.empty(xs.shape)
    for i in np.ndindex(xs.shape):
        t, bary = fem.locate_point(basis.mesh, xs[i], ys[i])
        out[i] = bary @ a[basis.mesh.triangles[t]]
    out = np.exp(out)
    return float(out[0]) if np.ndim(x) == 0 and np.ndim(y) == 0 else out


def sample_xi(m: int, rng: np.random.Generator):
    """m i.i.d. standard normal KL coordinates as GrfParams."""
    from .problems import GrfParams

    return GrfParams(xi=rng.standard_normal(m))
