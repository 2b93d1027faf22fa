"""Energy-minimization training: parameter sampling, the Monte-Carlo loss
over a parameter mini-batch, optional element mini-batching, and Adam.

Each iteration draws M parameter tuples, pushes them through the network,
assembles the element residual of the discrete energy for every sample,
and backpropagates the averaged residuals as the upstream gradient. With
an element batch of size N only those elements enter the energy sum; by
default the sum is rescaled by n_triangles/N so the estimator stays
unbiased (`paper_literal_subset_sum` turns the rescaling off).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import grf as grf_mod
from . import mesh as mesh_mod
from . import nn
from .problems import GrfPoissonModel, NeoHookeanBeamModel, NeoHookeanMaterial, \
    SpikePoissonModel

PROBLEMS = ("spike", "grf", "beam")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; records the iteration and parameter batch."""

    def __init__(self, iteration: int, loss: float, params: np.ndarray):
        super().__init__(
            f"non-finite loss {loss} at iteration {iteration}; "
            f"first parameter tuple {params[0].tolist()}"
        )
        self.iteration = iteration
        self.params = params


@dataclass
class TrainConfig:
    """Everything needed to reproduce one training run from a seed.

    Mirrors the JSON config schema field for field. The spike and grf
    problems live on [-1, 1]^2 with homogeneous Dirichlet data; the beam
    is a left-clamped rectangle.
    """

    problem: str = "spike"
    nx: int = 32
    ny: int = 32
    width: int = 256
    hidden_layers: int = 4
    batch_size: int = 32
    element_batch: int | None = None
    paper_literal_subset_sum: bool = False
    iterations: int = 100_000
    lr: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_interval: int | None = None
    seed: int = 0
    log_every: int = 1000
    # spike radius distribution r ~ U[r_min, r_max]
    spike_r_min: float = 0.01
    spike_r_max: float = 0.2
    # GRF coefficient field
    n_kl: int = 9
    corr_length: float = 0.5
    grf_mean: float = 0.0
    grf_std: float = 1.0
    # beam geometry, material, and force distribution
    beam_length: float = 1.0
    beam_height: float = 0.05
    youngs_modulus: float = 1053.0
    poisson_ratio: float = 0.3
    j_floor: float = 1e-3
    traction_length: float | None = None
    force_sigma: float = 1.0
    horizontal_force: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("need batch_size >= 1 and iterations >= 0")
        if self.spike_r_min <= 0 or self.spike_r_max < self.spike_r_min:
            raise ValueError("need 0 < spike_r_min <= spike_r_max")

    @property
    def subset_scaling(self) -> bool:
        return not self.paper_literal_subset_sum

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ProblemSetup:
    """Mesh, energy model, and input dimension for one problem kind."""

    mesh: mesh_mod.TriMesh
    model: object
    n_inputs: int
    kl_basis: grf_mod.KlBasis | None = None


def build_problem(config: TrainConfig, kl_basis: grf_mod.KlBasis | None = None) -> ProblemSetup:
    """Construct the mesh and energy model a config describes.

    For the grf problem the KL basis is deterministic in (mesh, L, m), so
    rebuilding reproduces the basis used at training time; passing a saved
    basis skips the eigensolve.
    """
    if config.problem == "beam":
        msh = mesh_mod.build_beam_mesh(config.beam_length, config.beam_height,
                                       config.nx, config.ny)
        material = NeoHookeanMaterial.from_youngs(config.youngs_modulus,
                                                  config.poisson_ratio,
                                                  config.j_floor)
        length = config.traction_length
        if length is None:
            length = 0.1 * config.beam_length
        model = NeoHookeanBeamModel(material, traction_length=length)
        return ProblemSetup(mesh=msh, model=model, n_inputs=3)

    msh = mesh_mod.build_structured_rect(-1.0, 1.0, -1.0, 1.0, config.nx, config.ny)
    if config.problem == "spike":
        return ProblemSetup(mesh=msh, model=SpikePoissonModel(), n_inputs=3)

    basis = kl_basis
    if basis is None:
        basis = grf_mod.build_kl_basis(msh, config.n_kl, config.corr_length,
                                       config.grf_mean, config.grf_std)
    return ProblemSetup(mesh=msh, model=GrfPoissonModel(basis), n_inputs=config.n_kl,
                        kl_basis=basis)


def sample_parameters(config: TrainConfig, m: int, rng: np.random.Generator) -> np.ndarray:
    """(m, d) parameter tuples from the problem's training distribution."""
    if config.problem == "spike":
        out = np.empty((m, 3))
        out[:, 0] = rng.uniform(-1.0, 1.0, m)
        out[:, 1] = rng.uniform(-1.0, 1.0, m)
        out[:, 2] = rng.uniform(config.spike_r_min, config.spike_r_max, m)
        return out
    if config.problem == "grf":
        return rng.standard_normal((m, config.n_kl))
    out = np.empty((m, 3))
    out[:, 0] = rng.uniform(0.0, config.beam_length, m)
    out[:, 1] = rng.normal(0.0, config.force_sigma, m) if config.horizontal_force else 0.0
    out[:, 2] = rng.normal(0.0, config.force_sigma, m)
    return out


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Piecewise-constant schedule: lr * factor^(iteration // interval)."""
    if not config.lr_decay_interval:
        return config.lr
    return config.lr * config.lr_decay_factor ** (iteration // config.lr_decay_interval)


def loss_and_grad(mlp: nn.Mlp, model, msh: mesh_mod.TriMesh, params: np.ndarray,
                  element_subset=None, subset_scaling: bool = True):
    """Mini-batch energy loss and its exact theta-gradient.

    loss = mean_i E(A_theta(p_i)); the upstream gradient of each sample is
    the assembled free-DOF element residual (divided by the batch size).
    """
    params = np.asarray(params, dtype=float)
    if params.ndim != 2 or params.shape[0] < 1:
        raise ValueError("params must be a nonempty (M, d) batch")
    out, cache = nn.forward(mlp, params)
    energies, residuals = model.batch_energy_residual(
        msh, out, params, elements=element_subset, subset_scaling=subset_scaling)
    loss = float(energies.mean())
    grads = nn.backward(mlp, cache, residuals / params.shape[0])
    return loss, grads


@dataclass
class TrainResult:
    mlp: nn.Mlp
    log: list                      # (iteration, loss, lr) triples
    setup: ProblemSetup
    config: TrainConfig


def train(config: TrainConfig, setup: ProblemSetup | None = None,
          progress=None) -> TrainResult:
    """Run the configured number of Adam steps; reproducible from the seed.

    `progress`, when given, is called as progress(iteration, loss) at the
    logging cadence. Raises TrainingDivergedError on a non-finite loss.
    """
    if setup is None:
        setup = build_problem(config)
    msh, model = setup.mesh, setup.model

    rng = np.random.default_rng(config.seed)
    dims = [setup.n_inputs] + [config.width] * config.hidden_layers + [msh.n_free]
    mlp = nn.init_mlp(dims, rng)
    adam = nn.AdamState.for_mlp(mlp)
    params_list = mlp.parameters()

    log = []
    for it in range(config.iterations):
        batch = sample_parameters(config, config.batch_size, rng)
        subset = None
        if config.element_batch is not None:
            subset = mesh_mod.sample_element_batch(msh, config.element_batch, rng)
        loss, grads = loss_and_grad(mlp, model, msh, batch, subset,
                                    config.subset_scaling)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, loss, batch)
        lr = lr_at(config, it)
        nn.adam_step(adam, params_list, grads, lr)
        if it % config.log_every == 0 or it == config.iterations - 1:
            log.append((it, loss, lr))
            if progress is not None:
                progress(it, loss)
    return TrainResult(mlp=mlp, log=log, setup=setup, config=config)


def write_log_csv(log, path) -> None:
    """Training log as CSV with columns iteration,loss,lr."""
    with open(path, "w") as fh:
        fh.write("iteration,loss,lr\n")
        for it, loss, lr in log:
            fh.write(f"{it},{loss!r},{lr!r}\n")
