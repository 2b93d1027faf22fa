"""Learning-error metrics and Monte-Carlo quantities of interest.

Relative errors compare the network prediction against the FEM oracle per
sample in energy, L2, and full H1 norm, each normalized by the oracle's
value. Omega-relative errors (for the beam, where oracle norms can vanish)
normalize by the domain measure instead and use the H1 seminorm. QoI
estimators run the network and the oracle on the identical parameter
stream so their difference carries no sampling noise.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import TriMesh


@dataclass
class ErrorReport:
    """Per-sample error triples plus summary statistics.

    `kind` is "relative" (oracle-normalized, full H1 norm) or
    "omega_relative" (domain-measure-normalized, H1 seminorm). Samples with
    a zero denominator are excluded and counted in `excluded`.
    """

    kind: str
    energy_err: np.ndarray
    l2_err: np.ndarray
    h1_err: np.ndarray
    excluded: int = 0

    @property
    def n_samples(self) -> int:
        return self.energy_err.size

    def means(self) -> tuple:
        return (float(self.energy_err.mean()), float(self.l2_err.mean()),
                float(self.h1_err.mean()))

    def stds(self) -> tuple:
        return (float(self.energy_err.std()), float(self.l2_err.std()),
                float(self.h1_err.std()))

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "n_samples": self.n_samples,
            "excluded": self.excluded,
            "mean": dict(zip(("energy", "l2", "h1"), self.means())),
            "std": dict(zip(("energy", "l2", "h1"), self.stds())),
            "samples": {
                "energy": self.energy_err.tolist(),
                "l2": self.l2_err.tolist(),
                "h1": self.h1_err.tolist(),
            },
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def summary_csv(self) -> str:
        rows = ["metric,mean,std"]
        for name, mean, std in zip(("energy", "l2", "h1"), self.means(), self.stds()):
            rows.append(f"{name},{mean!r},{std!r}")
        return "\n".join(rows) + "\n"


def _solve_all(solve, params, threads):
    """Apply `solve` per parameter tuple, optionally across a thread pool;
    results land in list slots by index, so the order is deterministic."""
    if threads <= 1:
        return [solve(p) for p in params]
    out = [None] * len(params)

    def work(i):
        out[i] = solve(params[i])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(len(params))))
    return out


def _error_triples(msh, model, predict, oracle, params, threads):
    params = np.asarray(params, dtype=float)
    oracle_dofs = _solve_all(oracle, params, threads)
    triples = []
    for p, u_star in zip(params, oracle_dofs):
        u_pred = np.asarray(predict(p), dtype=float)
        f_star = fem.NodalField(msh, np.asarray(u_star, dtype=float))
        f_pred = fem.NodalField(msh, u_pred)
        f_diff = fem.NodalField(msh, u_pred - f_star.free_values)
        e_star = model.total_energy(msh, f_star, p)
        e_pred = model.total_energy(msh, f_pred, p)
        triples.append((
            e_pred - e_star,
            e_star,
            fem.l2_norm(f_diff),
            fem.l2_norm(f_star),
            fem.h1_seminorm(f_diff),
            fem.h1_seminorm(f_star),
        ))
    return triples


def relative_errors(msh: TriMesh, model, predict, oracle, params,
                    threads: int = 1) -> ErrorReport:
    """Oracle-normalized errors |E gap|/|E*|, ||d||/||u*|| (L2 and full H1).

    `predict` and `oracle` both map one parameter tuple to free DOFs.
    Samples where any denominator vanishes are excluded and counted.
    """
    energy, l2, h1 = [], [], []
    excluded = 0
    for e_gap, e_star, l2_d, l2_s, h1_d, h1_s in _error_triples(
            msh, model, predict, oracle, params, threads):
        h1f_d = np.hypot(l2_d, h1_d)
        h1f_s = np.hypot(l2_s, h1_s)
        if e_star == 0.0 or l2_s == 0.0 or h1f_s == 0.0:
            excluded += 1
            continue
        energy.append(abs(e_gap) / abs(e_star))
        l2.append(l2_d / l2_s)
        h1.append(h1f_d / h1f_s)
    return ErrorReport("relative", np.asarray(energy), np.asarray(l2),
                       np.asarray(h1), excluded)


def omega_relative_errors(msh: TriMesh, model, predict, oracle, params,
                          threads: int = 1) -> ErrorReport:
    """Domain-measure-normalized errors: |E gap|/|Omega|, norms/|Omega|^0.5;
    the derivative metric is the H1 seminorm."""
    omega = float(msh.areas.sum())
    energy, l2, h1 = [], [], []
    for e_gap, _, l2_d, _, h1_d, _ in _error_triples(
            msh, model, predict, oracle, params, threads):
        energy.append(abs(e_gap) / omega)
        l2.append(l2_d / np.sqrt(omega))
        h1.append(h1_d / np.sqrt(omega))
    return ErrorReport("omega_relative", np.asarray(energy), np.asarray(l2),
                       np.asarray(h1), 0)


def histogram_csv(report: ErrorReport, bins: int = 50) -> dict:
    """One CSV text per metric with columns bin_left,bin_right,count.

    Uniform bins over [0, max sample]; counts sum to the included samples.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    out = {}
    for name, data in (("energy", report.energy_err), ("l2", report.l2_err),
                       ("h1", report.h1_err)):
        top = float(data.max()) if data.size and data.max() > 0 else 1.0
        counts, edges = np.histogram(data, bins=bins, range=(0.0, top))
        rows = ["bin_left,bin_right,count"]
        for i in range(bins):
            rows.append(f"{edges[i]!r},{edges[i + 1]!r},{int(counts[i])}")
        out[name] = "\n".join(rows) + "\n"
    return out


def qoi_l2(solution, msh: TriMesh, n_kl: int, k: int, rng: np.random.Generator) -> float:
    """Monte-Carlo mean of ||u(xi)||_L2^2 over k standard-normal draws.

    `solution` maps a KL coordinate vector to free DOFs. Call with the same
    seed for the network and the FEM oracle to share the xi stream.
    """
    total = 0.0
    for _ in range(k):
        xi = rng.standard_normal(n_kl)
        total += fem.l2_norm(fem.NodalField(msh, np.asarray(solution(xi)))) ** 2
    return total / k


def qoi_point(solution, msh: TriMesh, x0, n_kl: int, k: int,
              rng: np.random.Generator) -> float:
    """Monte-Carlo mean of u(x0, xi); x0 must lie inside the mesh."""
    x, y = float(x0[0]), float(x0[1])
    t, bary = fem.locate_point(msh, x, y)
    total = 0.0
    for _ in range(k):
        xi = rng.standard_normal(n_kl)
        fld = fem.NodalField(msh, np.asarray(solution(xi)))
        total += fem.eval_p1(fld, t, bary)
    return total / k
